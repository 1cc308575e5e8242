/// Number of recall sample points in the COCO AP definition.
pub const RECALL_POINTS: usize = 101;

/// `{0, 0.01, ..., 1.00}` generated the way numpy's `linspace` does.
pub fn recall_thresholds() -> [f64; RECALL_POINTS] {
    let mut r = [0.0; RECALL_POINTS];
    let step = 1.0 / (RECALL_POINTS - 1) as f64;
    for (i, v) in r.iter_mut().enumerate() {
        *v = i as f64 * step;
    }
    r[RECALL_POINTS - 1] = 1.0;
    r
}

/// Interpolated precision at each of the 101 recall points for a score-ordered
/// TP/FP sequence. Points beyond the achieved recall get precision 0.
pub fn interpolated_precision(tp_flags: &[bool], total_gt: usize) -> [f64; RECALL_POINTS] {
    let mut out = [0.0; RECALL_POINTS];
    if total_gt == 0 || tp_flags.is_empty() {
        return out;
    }
    let n = tp_flags.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in tp_flags {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (0..n - 1).rev() {
        if precision[k + 1] > precision[k] {
            precision[k] = precision[k + 1];
        }
    }
    let mut k = 0;
    for (slot, &r) in out.iter_mut().zip(recall_thresholds().iter()) {
        while k < n && recall[k] < r {
            k += 1;
        }
        if k == n {
            break;
        }
        *slot = precision[k];
    }
    out
}

/// COCO 101-point interpolated AP. `total_gt == 0` yields 0.
pub fn average_precision(tp_flags: &[bool], total_gt: usize) -> f64 {
    let p = interpolated_precision(tp_flags, total_gt);
    p.iter().sum::<f64>() / RECALL_POINTS as f64
}
