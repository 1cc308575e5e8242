//! COCO-protocol detection evaluation and ROC analysis.

mod ap;
mod coco;
mod matching;
pub mod report;
mod roc;

pub use ap::{average_precision, interpolated_precision, recall_thresholds, RECALL_POINTS};
pub use coco::{coco_summary, linspace, AreaRange, EvalParams};
pub use matching::{match_detections, match_detections_in_range, DetectionOutcome, MatchResult};
pub use roc::{roc_auc, roc_from_labels, trapezoid_auc, RocCurve, RocPoint};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::BBox;

/// A scored model output on one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: BBox,
    pub score: f64,
    pub category_id: u64,
}

impl Detection {
    pub fn new(image_id: u64, bbox: BBox, score: f64, category_id: u64) -> Result<Self> {
        bbox.validate()?;
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(invalid(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Detection {
            image_id,
            bbox,
            score,
            category_id,
        })
    }
}

/// Annotated object. `area` is the box area unless the annotation supplies
/// its own (segmentation) area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: u64,
    pub bbox: BBox,
    pub category_id: u64,
    pub iscrowd: bool,
    pub area: f64,
}

impl GroundTruthBox {
    pub fn new(image_id: u64, bbox: BBox, category_id: u64) -> Self {
        GroundTruthBox {
            image_id,
            bbox,
            category_id,
            iscrowd: false,
            area: bbox.area(),
        }
    }

    pub fn crowd(mut self) -> Self {
        self.iscrowd = true;
        self
    }

    pub fn with_area(mut self, area: f64) -> Self {
        self.area = area;
        self
    }
}

/// The six AP columns plus average recall. Each value is in `[0, 1]`, or
/// `-1` when undefined (no ground truth in range).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    #[serde(rename = "APs")]
    pub ap_small: f64,
    #[serde(rename = "APm")]
    pub ap_medium: f64,
    #[serde(rename = "APl")]
    pub ap_large: f64,
    #[serde(rename = "AR")]
    pub ar: f64,
}

/// Marks an undefined metric.
pub const UNDEFINED: f64 = -1.0;

impl ApSummary {
    pub fn undefined() -> Self {
        ApSummary {
            ap: UNDEFINED,
            ap50: UNDEFINED,
            ap75: UNDEFINED,
            ap_small: UNDEFINED,
            ap_medium: UNDEFINED,
            ap_large: UNDEFINED,
            ar: UNDEFINED,
        }
    }

    /// From a published row in percent (`47.9` means `0.479`).
    pub fn from_percent(row: [f64; 6], ar: Option<f64>) -> Self {
        ApSummary {
            ap: row[0] / 100.0,
            ap50: row[1] / 100.0,
            ap75: row[2] / 100.0,
            ap_small: row[3] / 100.0,
            ap_medium: row[4] / 100.0,
            ap_large: row[5] / 100.0,
            ar: ar.map_or(UNDEFINED, |v| v / 100.0),
        }
    }

    pub fn columns(&self) -> [f64; 6] {
        [
            self.ap,
            self.ap50,
            self.ap75,
            self.ap_small,
            self.ap_medium,
            self.ap_large,
        ]
    }
}
