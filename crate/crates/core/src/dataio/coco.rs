use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::metrics::GroundTruthBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    /// Fields outside the core schema (`license`, `coco_url`, ...), kept verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]`
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl CocoAnnotation {
    pub fn to_bbox(&self) -> Result<BBox> {
        let [x, y, w, h] = self.bbox;
        BBox::from_xywh(x, y, w, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// An instances-schema annotation file. `info`, `licenses` and any other
/// top-level sections are carried through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Byte offset of a 1-based `(line, column)` position.
fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    let start: usize = text
        .split(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Deserialize JSON, mapping syntax errors to byte offsets and type or
/// missing-field errors to the path where they occurred.
pub(crate) fn from_json_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    match serde_path_to_error::deserialize(de) {
        Ok(v) => Ok(v),
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_data() {
                Err(Error::Schema {
                    path,
                    message: inner.to_string(),
                })
            } else {
                Err(Error::Parse {
                    offset: byte_offset(bytes, inner.line(), inner.column()),
                    message: inner.to_string(),
                })
            }
        }
    }
}

fn check_unique(ids: impl Iterator<Item = u64>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Integrity(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

impl CocoDataset {
    pub fn validate(&self) -> Result<()> {
        check_unique(self.images.iter().map(|i| i.id), "image")?;
        check_unique(self.annotations.iter().map(|a| a.id), "annotation")?;
        check_unique(self.categories.iter().map(|c| c.id), "category")?;
        let images: HashSet<u64> = self.images.iter().map(|i| i.id).collect();
        let cats: HashSet<u64> = self.categories.iter().map(|c| c.id).collect();
        for a in &self.annotations {
            if !images.contains(&a.image_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing image_id {}",
                    a.id, a.image_id
                )));
            }
            if !cats.contains(&a.category_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing category_id {}",
                    a.id, a.category_id
                )));
            }
            if a.bbox.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("annotation {} has a non-finite bbox", a.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| invalid(e.to_string()))
    }

    pub fn category_id(&self, name: &str) -> Option<u64> {
        self.categories.iter().find(|c| c.name == name).map(|c| c.id)
    }

    /// Annotations of `category_id` as evaluation ground truth. The supplied
    /// `area` is used when present, otherwise the box area.
    pub fn ground_truth(&self, category_id: u64) -> Result<Vec<GroundTruthBox>> {
        self.annotations
            .iter()
            .filter(|a| a.category_id == category_id)
            .map(|a| {
                let bbox = a.to_bbox()?;
                let mut g = GroundTruthBox::new(a.image_id, bbox, a.category_id);
                g.iscrowd = a.iscrowd != 0;
                if let Some(area) = a.area {
                    g.area = area;
                }
                Ok(g)
            })
            .collect()
    }
}

/// Parse and validate an instances-schema document.
pub fn parse_coco(bytes: &[u8]) -> Result<CocoDataset> {
    let ds: CocoDataset = from_json_bytes(bytes)?;
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsetSpec {
    pub category_name: String,
    pub min_instances: usize,
    pub max_images: Option<usize>,
    pub seed: u64,
}

impl Default for SubsetSpec {
    fn default() -> Self {
        SubsetSpec {
            category_name: "person".into(),
            min_instances: 1,
            max_images: None,
            seed: 0,
        }
    }
}

/// Images holding at least `min_instances` annotations of one category,
/// reduced to those annotations and that category. With `max_images`, a
/// seeded uniform sample of the qualifying images is kept in original order.
pub fn extract_person_subset(ds: &CocoDataset, spec: &SubsetSpec) -> Result<CocoDataset> {
    if spec.min_instances == 0 {
        return Err(invalid("min_instances must be at least 1"));
    }
    let Some(cat) = ds.category_id(&spec.category_name) else {
        if ds.images.is_empty() && ds.categories.is_empty() {
            return Ok(ds.clone());
        }
        return Err(invalid(format!("unknown category `{}`", spec.category_name)));
    };
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for a in ds.annotations.iter().filter(|a| a.category_id == cat) {
        *counts.entry(a.image_id).or_default() += 1;
    }
    let mut keep: Vec<usize> = ds
        .images
        .iter()
        .enumerate()
        .filter(|(_, im)| counts.get(&im.id).copied().unwrap_or(0) >= spec.min_instances)
        .map(|(k, _)| k)
        .collect();
    if let Some(max) = spec.max_images {
        if keep.len() > max {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut picked = index::sample(&mut rng, keep.len(), max).into_vec();
            picked.sort_unstable();
            keep = picked.into_iter().map(|k| keep[k]).collect();
        }
    }
    let images: Vec<CocoImage> = keep.iter().map(|&k| ds.images[k].clone()).collect();
    let ids: HashSet<u64> = images.iter().map(|i| i.id).collect();
    Ok(CocoDataset {
        annotations: ds
            .annotations
            .iter()
            .filter(|a| a.category_id == cat && ids.contains(&a.image_id))
            .cloned()
            .collect(),
        categories: ds.categories.iter().filter(|c| c.id == cat).cloned().collect(),
        images,
        extra: ds.extra.clone(),
    })
}
