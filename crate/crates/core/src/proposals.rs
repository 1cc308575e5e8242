//! Region proposal stage: anchor target assignment, greedy NMS and proposal selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{iou, BBox};

/// A box with an objectness or detection score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        bbox.validate()?;
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score {score}")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(ScoredBox { bbox, score })
    }
}

/// Descending score, ascending index on ties.
pub(crate) fn by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression.
///
/// Boxes whose IoU with a kept box is strictly greater than `iou_threshold`
/// are removed. Returns the kept indices in keep order.
pub fn nms(candidates: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    let order = by_score_desc(&scores);
    let mut suppressed = vec![false; candidates.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        let kept = &candidates[i].bbox;
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(kept, &candidates[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// Training targets for the objectness branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLabels {
    pub labels: Vec<AnchorLabel>,
    /// Present exactly for positive anchors.
    pub matched_gt: Vec<Option<usize>>,
}

impl AnchorLabels {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.matched_gt
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|g| (i, g)))
    }

    pub fn count(&self, label: AnchorLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

pub const DEFAULT_POS_THRESHOLD: f64 = 0.7;
pub const DEFAULT_NEG_THRESHOLD: f64 = 0.3;

/// Label anchors against ground truth.
///
/// Positive if IoU >= `pos_thr` with some gt, or if the anchor attains the
/// maximum IoU for some gt (all tied anchors). Negative if max IoU < `neg_thr`.
/// A gt that overlaps no anchor at all still claims the lowest-index anchor so
/// every gt has at least one positive.
pub fn assign_anchor_labels(
    anchors: &[BBox],
    gts: &[BBox],
    pos_thr: f64,
    neg_thr: f64,
) -> Result<AnchorLabels> {
    let in_unit = |t: f64| t > 0.0 && t < 1.0;
    if !in_unit(pos_thr) || !in_unit(neg_thr) || pos_thr < neg_thr {
        return Err(invalid(format!(
            "need 0 < neg_thr <= pos_thr < 1, got pos={pos_thr} neg={neg_thr}"
        )));
    }
    let n = anchors.len();
    if gts.is_empty() {
        return Ok(AnchorLabels {
            labels: vec![AnchorLabel::Negative; n],
            matched_gt: vec![None; n],
        });
    }

    // overlaps[i * g + j]
    let g = gts.len();
    let overlaps: Vec<f64> = anchors
        .iter()
        .flat_map(|a| gts.iter().map(move |t| iou(a, t)))
        .collect();

    let mut best_gt = vec![0usize; n];
    let mut best_iou = vec![0.0f64; n];
    for i in 0..n {
        let row = &overlaps[i * g..(i + 1) * g];
        for (j, &v) in row.iter().enumerate() {
            if v > best_iou[i] {
                best_iou[i] = v;
                best_gt[i] = j;
            }
        }
    }

    let mut labels = vec![AnchorLabel::Ignore; n];
    let mut matched_gt = vec![None; n];
    for i in 0..n {
        if best_iou[i] >= pos_thr {
            labels[i] = AnchorLabel::Positive;
            matched_gt[i] = Some(best_gt[i]);
        } else if best_iou[i] < neg_thr {
            labels[i] = AnchorLabel::Negative;
        }
    }

    for j in 0..g {
        let gt_max = (0..n).map(|i| overlaps[i * g + j]).fold(0.0f64, f64::max);
        if gt_max > 0.0 {
            for i in 0..n {
                if overlaps[i * g + j] == gt_max {
                    labels[i] = AnchorLabel::Positive;
                    matched_gt[i] = Some(best_gt[i]);
                }
            }
        } else if n > 0 {
            labels[0] = AnchorLabel::Positive;
            if matched_gt[0].is_none() {
                matched_gt[0] = Some(j);
            }
        }
    }

    Ok(AnchorLabels { labels, matched_gt })
}

pub const DEFAULT_PRE_NMS_TOP_K: usize = 2000;
pub const DEFAULT_POST_NMS_TOP_K: usize = 1000;

/// Top-`pre_nms_k` by score (stable), NMS, then at most `post_nms_k` survivors.
pub fn select_proposals(
    scored: &[ScoredBox],
    pre_nms_k: usize,
    post_nms_k: usize,
    nms_thr: f64,
) -> Result<Vec<ScoredBox>> {
    if pre_nms_k == 0 || post_nms_k == 0 {
        return Err(invalid("proposal counts must be at least 1"));
    }
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let top: Vec<ScoredBox> = by_score_desc(&scores)
        .into_iter()
        .take(pre_nms_k)
        .map(|i| scored[i])
        .collect();
    Ok(nms(&top, nms_thr)
        .into_iter()
        .take(post_nms_k)
        .map(|i| top[i])
        .collect())
}
