//! COCO annotation and results I/O, subset extraction, and synthetic scenes.

mod coco;
mod results;
mod synthetic;

pub(crate) use coco::from_json_bytes;

pub use coco::{
    extract_person_subset, parse_coco, CocoAnnotation, CocoCategory, CocoDataset, CocoImage,
    SubsetSpec,
};
pub use results::{read_detections, write_detections};
pub use synthetic::{
    angle_to_vertex, generate_synthetic_scene, load_scene, parse_grid, save_scene, write_grid,
    Ellipse, SceneCorrespondence, SyntheticScene, BAND_INNER,
};
