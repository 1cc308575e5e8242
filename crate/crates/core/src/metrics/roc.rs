use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matching::{match_detections, DetectionOutcome};
use super::{Detection, GroundTruthBox};
use crate::error::{invalid, Result};
use crate::proposals::by_score_desc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Detections scoring at or above this are accepted.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Highest (TP kept + FP rejected) / all, over the curve's thresholds.
    pub best_accuracy: f64,
    pub best_threshold: f64,
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:.6}")
    }
}

impl RocCurve {
    /// `threshold,fpr,tpr` rows followed by an `auc=` line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{:.6},{:.6}", fmt_threshold(p.threshold), p.fpr, p.tpr);
        }
        let _ = writeln!(s, "auc={:.6}", self.auc);
        s
    }
}

/// Trapezoidal area under `(fpr, tpr)` points sorted by fpr.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) * 0.5)
        .sum()
}

/// ROC over scored binary labels, one point per distinct score.
///
/// With only one class present the missing rate is taken as 0 and the curve
/// is closed at (1, 1): all positives gives AUC 1, all negatives AUC 0.
pub fn roc_from_labels(scored: &[(f64, bool)]) -> Result<RocCurve> {
    if scored.is_empty() {
        return Err(invalid("ROC needs at least one scored sample"));
    }
    if let Some((s, _)) = scored.iter().find(|(s, _)| !s.is_finite()) {
        return Err(invalid(format!("non-finite score {s}")));
    }
    let pos = scored.iter().filter(|(_, l)| *l).count();
    let neg = scored.len() - pos;
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };

    let scores: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    let order = by_score_desc(&scores);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut best_accuracy, mut best_threshold) = (neg as f64 / scored.len() as f64, f64::INFINITY);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_score {
            points.push(RocPoint {
                threshold: scores[i],
                fpr: rate(fp, neg),
                tpr: rate(tp, pos),
            });
            let acc = (tp + neg - fp) as f64 / scored.len() as f64;
            if acc > best_accuracy {
                best_accuracy = acc;
                best_threshold = scores[i];
            }
        }
    }
    if pos == 0 || neg == 0 {
        points.push(RocPoint {
            threshold: f64::NEG_INFINITY,
            fpr: 1.0,
            tpr: 1.0,
        });
    }
    Ok(RocCurve {
        auc: trapezoid_auc(&points),
        points,
        positives: pos,
        negatives: neg,
        best_accuracy,
        best_threshold,
    })
}

/// Pooled ROC over all images: matched detections are positives, unmatched
/// ones negatives, detections absorbed by crowd regions are dropped. Rates are
/// relative to the detection set.
pub fn roc_auc(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> Result<RocCurve> {
    if gts.iter().all(|g| g.iscrowd) {
        return Err(invalid("ROC needs at least one non-crowd ground-truth box"));
    }
    if dets.is_empty() {
        return Err(invalid("ROC needs at least one detection"));
    }
    let m = match_detections(dets, gts, iou_thr);
    let scored: Vec<(f64, bool)> = dets
        .iter()
        .zip(&m.outcomes)
        .filter_map(|(d, o)| match o {
            DetectionOutcome::TruePositive { .. } => Some((d.score, true)),
            DetectionOutcome::FalsePositive => Some((d.score, false)),
            DetectionOutcome::Ignored => None,
        })
        .collect();
    roc_from_labels(&scored)
}
