//! Box-level and dense-correspondence building blocks for a two-stage
//! person detector, plus COCO-style evaluation and a toy training harness.

pub mod error;
pub mod dataio;
pub mod geometry;
pub mod metrics;
pub mod proposals;
pub mod roi_align;
pub mod surface;
pub mod trainkit;

pub use error::{Error, Result};
pub use geometry::{iou, BBox, BoxCoder, BoxDelta};
