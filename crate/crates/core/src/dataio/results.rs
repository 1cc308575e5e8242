use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::coco::from_json_bytes;
use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::metrics::Detection;

/// One entry of a COCO results file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResultEntry {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

/// Serialize as a COCO results array.
pub fn write_detections(dets: &[Detection]) -> Result<String> {
    let entries: Vec<ResultEntry> = dets
        .iter()
        .map(|d| ResultEntry {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        })
        .collect();
    serde_json::to_string(&entries).map_err(|e| invalid(e.to_string()))
}

/// Parse a COCO results array; the first bad entry is reported by index.
pub fn read_detections(bytes: &[u8]) -> Result<Vec<Detection>> {
    let items: Vec<Value> = from_json_bytes(bytes)?;
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let e: ResultEntry = serde_json::from_value(v).map_err(|err| Error::Schema {
                path: format!("[{i}]"),
                message: err.to_string(),
            })?;
            let [x, y, w, h] = e.bbox;
            let bbox = BBox::from_xywh(x, y, w, h).map_err(|err| Error::Schema {
                path: format!("[{i}].bbox"),
                message: err.to_string(),
            })?;
            Detection::new(e.image_id, bbox, e.score, e.category_id).map_err(|err| Error::Schema {
                path: format!("[{i}]"),
                message: err.to_string(),
            })
        })
        .collect()
}
