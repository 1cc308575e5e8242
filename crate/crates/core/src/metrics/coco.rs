use serde::{Deserialize, Serialize};

use super::ap::average_precision;
use super::matching::{match_detections_in_range, DetectionOutcome};
use super::{ApSummary, Detection, GroundTruthBox, UNDEFINED};
use crate::error::{invalid, Error, Result};
use crate::proposals::by_score_desc;

/// Inclusive object-area interval in squared pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange { lo: 0.0, hi: 1e10 };
    pub const SMALL: AreaRange = AreaRange { lo: 0.0, hi: 32.0 * 32.0 };
    pub const MEDIUM: AreaRange = AreaRange {
        lo: 32.0 * 32.0,
        hi: 96.0 * 96.0,
    };
    pub const LARGE: AreaRange = AreaRange {
        lo: 96.0 * 96.0,
        hi: 1e10,
    };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.lo && area <= self.hi
    }
}

/// numpy-style `linspace`: `num` evenly spaced values, `stop` exact.
pub fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    match num {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (num - 1) as f64;
            let mut v: Vec<f64> = (0..num).map(|i| start + i as f64 * step).collect();
            v[num - 1] = stop;
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    /// Thresholds averaged for AP, the size-bucketed APs and AR.
    pub iou_thresholds: Vec<f64>,
    /// Detections kept per image, highest score first.
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            iou_thresholds: linspace(0.5, 0.95, 10),
            max_dets: 100,
        }
    }
}

impl EvalParams {
    /// Thresholds from `min` to `max` inclusive in steps of `step`.
    pub fn with_sweep(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && min <= max) {
            return Err(invalid(format!("bad IoU sweep {min}..{max} step {step}")));
        }
        let num = ((max - min) / step).round() as usize + 1;
        let p = EvalParams {
            iou_thresholds: linspace(min, max, num),
            ..EvalParams::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(invalid("at least one IoU threshold is required"));
        }
        if let Some(t) = self
            .iou_thresholds
            .iter()
            .find(|t| !(t.is_finite() && **t > 0.0 && **t <= 1.0))
        {
            return Err(invalid(format!("IoU threshold {t} outside (0, 1]")));
        }
        if self.max_dets == 0 {
            return Err(invalid("max_dets must be positive"));
        }
        Ok(())
    }
}

/// (AP, recall) at one threshold and area range, `UNDEFINED` for both when
/// no ground truth falls in range.
fn evaluate_setting(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thr: f64,
    range: AreaRange,
    max_dets: usize,
) -> (f64, f64) {
    let m = match_detections_in_range(dets, gts, iou_thr, range, Some(max_dets));
    let total = m.counted_gt();
    if total == 0 {
        return (UNDEFINED, UNDEFINED);
    }
    let flags: Vec<bool> = ranked(dets, max_dets)
        .into_iter()
        .filter_map(|i| match m.outcomes[i] {
            DetectionOutcome::TruePositive { .. } => Some(true),
            DetectionOutcome::FalsePositive => Some(false),
            DetectionOutcome::Ignored => None,
        })
        .collect();
    let tp = flags.iter().filter(|&&f| f).count();
    (average_precision(&flags, total), tp as f64 / total as f64)
}

/// Global rank order: images ascending, per-image top `max_dets`, then a
/// stable sort on score.
fn ranked(dets: &[Detection], max_dets: usize) -> Vec<usize> {
    let mut by_image: Vec<usize> = (0..dets.len()).collect();
    by_image.sort_by_key(|&i| dets[i].image_id);
    let mut concat = Vec::with_capacity(dets.len());
    for group in by_image.chunk_by(|&a, &b| dets[a].image_id == dets[b].image_id) {
        let scores: Vec<f64> = group.iter().map(|&i| dets[i].score).collect();
        concat.extend(by_score_desc(&scores).into_iter().take(max_dets).map(|k| group[k]));
    }
    let scores: Vec<f64> = concat.iter().map(|&i| dets[i].score).collect();
    by_score_desc(&scores).into_iter().map(|k| concat[k]).collect()
}

fn mean_defined(values: &[f64]) -> f64 {
    let defined: Vec<f64> = values.iter().copied().filter(|v| *v > UNDEFINED).collect();
    if defined.is_empty() {
        UNDEFINED
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Standard single-category COCO bounding-box summary.
///
/// Ground truth must share one category; detections of other categories are
/// not evaluated. Undefined entries are `-1`.
pub fn coco_summary(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    params: &EvalParams,
) -> Result<ApSummary> {
    params.validate()?;
    for (i, d) in dets.iter().enumerate() {
        d.bbox
            .validate()
            .map_err(|e| invalid(format!("detection {i}: {e}")))?;
        if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
            return Err(invalid(format!("detection {i}: score {} outside [0, 1]", d.score)));
        }
    }
    let Some(first) = gts.first() else {
        return Ok(ApSummary::undefined());
    };
    let category = first.category_id;
    if let Some(g) = gts.iter().find(|g| g.category_id != category) {
        return Err(Error::Integrity(format!(
            "ground truth mixes categories {category} and {}",
            g.category_id
        )));
    }
    let dets: Vec<Detection> = dets.iter().copied().filter(|d| d.category_id == category).collect();

    let sweep = |range: AreaRange| -> (f64, f64) {
        let (aps, recalls): (Vec<f64>, Vec<f64>) = params
            .iou_thresholds
            .iter()
            .map(|&t| evaluate_setting(&dets, gts, t, range, params.max_dets))
            .unzip();
        (mean_defined(&aps), mean_defined(&recalls))
    };
    let (ap, ar) = sweep(AreaRange::ALL);
    let at = |t: f64| evaluate_setting(&dets, gts, t, AreaRange::ALL, params.max_dets).0;
    Ok(ApSummary {
        ap,
        ap50: at(0.5),
        ap75: at(0.75),
        ap_small: sweep(AreaRange::SMALL).0,
        ap_medium: sweep(AreaRange::MEDIUM).0,
        ap_large: sweep(AreaRange::LARGE).0,
        ar,
    })
}
