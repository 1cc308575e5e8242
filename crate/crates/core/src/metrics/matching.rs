use std::collections::BTreeMap;

use rayon::prelude::*;

use super::coco::AreaRange;
use super::{Detection, GroundTruthBox};
use crate::geometry::{iou, BBox};
use crate::proposals::by_score_desc;

/// Per-detection verdict at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionOutcome {
    /// Matched the ground truth at this index of the input slice.
    TruePositive { gt: usize },
    FalsePositive,
    /// Matched a crowd or out-of-range ground truth, or is itself out of range.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Indexed like the input detections.
    pub outcomes: Vec<DetectionOutcome>,
    /// Indexed like the input ground truth.
    pub gt_matched: Vec<bool>,
    /// Ground truth excluded from recall (crowd or out of area range).
    pub gt_ignored: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, DetectionOutcome::TruePositive { .. }))
            .count()
    }

    pub fn false_positives(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| **o == DetectionOutcome::FalsePositive)
            .count()
    }

    pub fn counted_gt(&self) -> usize {
        self.gt_ignored.iter().filter(|&&i| !i).count()
    }
}

/// Overlap used for matching: plain IoU, or intersection over the detection
/// area for crowd regions.
pub(crate) fn match_overlap(det: &BBox, gt: &GroundTruthBox) -> f64 {
    if gt.iscrowd {
        let a = det.area();
        if a <= 0.0 {
            0.0
        } else {
            det.intersection_area(&gt.bbox) / a
        }
    } else {
        iou(det, &gt.bbox)
    }
}

/// Greedy COCO matching at one IoU threshold, over all object sizes.
///
/// Detections are visited in descending score (ties by input index) and take
/// the best still-available ground truth with IoU >= `iou_thr`, preferring
/// non-crowd objects. Crowd regions can absorb any number of detections,
/// which are then ignored. Matching never crosses images.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> MatchResult {
    match_detections_in_range(dets, gts, iou_thr, AreaRange::ALL, None)
}

/// Like [`match_detections`] but ground truth outside `range` is ignored, as
/// are unmatched detections outside it. `max_dets` keeps only the top-scoring
/// detections per image; the rest are marked ignored.
pub fn match_detections_in_range(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thr: f64,
    range: AreaRange,
    max_dets: Option<usize>,
) -> MatchResult {
    let mut per_image: BTreeMap<u64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        per_image.entry(d.image_id).or_default().0.push(i);
    }
    for (j, g) in gts.iter().enumerate() {
        per_image.entry(g.image_id).or_default().1.push(j);
    }

    let gt_ignored: Vec<bool> = gts
        .iter()
        .map(|g| g.iscrowd || !range.contains(g.area))
        .collect();

    let images: Vec<_> = per_image.into_values().collect();
    let results: Vec<Vec<(usize, DetectionOutcome)>> = images
        .par_iter()
        .map(|(d_idx, g_idx)| match_image(dets, gts, &gt_ignored, d_idx, g_idx, iou_thr, range, max_dets))
        .collect();

    let mut outcomes = vec![DetectionOutcome::Ignored; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for (i, o) in results.into_iter().flatten() {
        if let DetectionOutcome::TruePositive { gt } = o {
            gt_matched[gt] = true;
        }
        outcomes[i] = o;
    }
    MatchResult {
        outcomes,
        gt_matched,
        gt_ignored,
    }
}

#[allow(clippy::too_many_arguments)]
fn match_image(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    gt_ignored: &[bool],
    d_idx: &[usize],
    g_idx: &[usize],
    iou_thr: f64,
    range: AreaRange,
    max_dets: Option<usize>,
) -> Vec<(usize, DetectionOutcome)> {
    let scores: Vec<f64> = d_idx.iter().map(|&i| dets[i].score).collect();
    let mut order: Vec<usize> = by_score_desc(&scores).into_iter().map(|k| d_idx[k]).collect();
    let mut out = Vec::with_capacity(order.len());
    if let Some(m) = max_dets {
        if order.len() > m {
            for &i in &order[m..] {
                out.push((i, DetectionOutcome::Ignored));
            }
            order.truncate(m);
        }
    }

    // counted ground truth first
    let mut g_order: Vec<usize> = g_idx.to_vec();
    g_order.sort_by_key(|&j| gt_ignored[j]);
    let mut taken = vec![false; g_order.len()];

    let start = iou_thr.min(1.0 - 1e-10);
    for &i in &order {
        let det = &dets[i];
        let mut best = start;
        let mut found: Option<usize> = None;
        for (k, &j) in g_order.iter().enumerate() {
            if taken[k] && !gts[j].iscrowd {
                continue;
            }
            if let Some(f) = found {
                if !gt_ignored[g_order[f]] && gt_ignored[j] {
                    break;
                }
            }
            let v = match_overlap(&det.bbox, &gts[j]);
            if v < best {
                continue;
            }
            best = v;
            found = Some(k);
        }
        let outcome = match found {
            Some(k) => {
                taken[k] = true;
                let j = g_order[k];
                if gt_ignored[j] {
                    DetectionOutcome::Ignored
                } else {
                    DetectionOutcome::TruePositive { gt: j }
                }
            }
            None if !range.contains(det.bbox.area()) => DetectionOutcome::Ignored,
            None => DetectionOutcome::FalsePositive,
        };
        out.push((i, outcome));
    }
    out
}
