//! Reference implementations used as oracles by the integration tests.
//! Each one follows the textbook definition as directly as possible and
//! shares no code with the library beyond its data types.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::PathBuf;

use densedet_core::metrics::{Detection, GroundTruthBox, RocPoint};
use densedet_core::BBox;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub fn inter_area(a: &BBox, b: &BBox) -> f64 {
    overlap_1d(a.x1, a.x2, b.x1, b.x2) * overlap_1d(a.y1, a.y2, b.y1, b.y2)
}

fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let i = inter_area(a, b);
    let u = area(a) + area(b) - i;
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}

/// Priority of box `i` over `j`: higher score first, then lower index.
fn before(scores: &[f64], i: usize, j: usize) -> bool {
    scores[i] > scores[j] || (scores[i] == scores[j] && i < j)
}

/// O(n^2) suppression: walk boxes from highest priority down; a box survives
/// iff no surviving box of higher priority overlaps it by more than `thr`.
/// Returned in priority order.
pub fn brute_nms(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let mut rank: Vec<usize> = (0..n).collect();
    // Selection sort on the priority relation, to stay clear of sort_by.
    for a in 0..n {
        let mut best = a;
        for b in a + 1..n {
            if before(scores, rank[b], rank[best]) {
                best = b;
            }
        }
        rank.swap(a, best);
    }
    let mut alive = vec![false; n];
    for (pos, &i) in rank.iter().enumerate() {
        alive[i] = rank[..pos]
            .iter()
            .all(|&j| !alive[j] || oracle_iou(&boxes[j], &boxes[i]) <= thr);
    }
    rank.into_iter().filter(|&i| alive[i]).collect()
}

/// Top-k, suppress, truncate, spelled out one step at a time.
pub fn stepwise_proposals(boxes: &[BBox], scores: &[f64], pre: usize, post: usize, thr: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(pre);
    let sub_boxes: Vec<BBox> = idx.iter().map(|&i| boxes[i]).collect();
    let sub_scores: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    let mut kept: Vec<usize> = brute_nms(&sub_boxes, &sub_scores, thr).into_iter().map(|k| idx[k]).collect();
    kept.truncate(post);
    kept
}

/// Value of the zero-padded map at continuous position `(y, x)`, with cell
/// `(i, j)` sitting at `(i + 0.5, j + 0.5)`: a sum of tent kernels over every
/// cell.
pub fn tent_sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..h {
        let wy = (1.0 - (y - (i as f64 + 0.5)).abs()).max(0.0);
        if wy == 0.0 {
            continue;
        }
        for j in 0..w {
            let wx = (1.0 - (x - (j as f64 + 0.5)).abs()).max(0.0);
            acc += wy * wx * plane[i * w + j];
        }
    }
    acc
}

/// ROI Align by direct sampling: `sr x sr` evenly spaced points per bin.
#[allow(clippy::too_many_arguments)]
pub fn dense_roi_align(
    values: &[f64],
    c: usize,
    h: usize,
    w: usize,
    scale: f64,
    b: &BBox,
    p: usize,
    sr: usize,
) -> Vec<f64> {
    let (y1, x1) = (b.y1 * scale, b.x1 * scale);
    let bh = (b.y2 - b.y1) * scale / p as f64;
    let bw = (b.x2 - b.x1) * scale / p as f64;
    let mut out = Vec::with_capacity(c * p * p);
    for ch in 0..c {
        let plane = &values[ch * h * w..(ch + 1) * h * w];
        for py in 0..p {
            for px in 0..p {
                let mut sum = 0.0;
                for iy in 0..sr {
                    for ix in 0..sr {
                        let y = y1 + bh * (py as f64 + (iy as f64 + 0.5) / sr as f64);
                        let x = x1 + bw * (px as f64 + (ix as f64 + 0.5) / sr as f64);
                        sum += tent_sample(plane, h, w, y, x);
                    }
                }
                out.push(sum / (sr * sr) as f64);
            }
        }
    }
    out
}

/// Single-source shortest paths by Bellman-Ford relaxation.
pub fn bellman_ford(n: usize, edges: &[(usize, usize, f64)], source: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n];
    d[source] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for &(a, b, w) in edges {
            for (u, v) in [(a, b), (b, a)] {
                if d[u] + w < d[v] {
                    d[v] = d[u] + w;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

/// `exp(-|e_v - psi|^2) / sum_u exp(-|e_u - psi|^2)` with no stabilisation.
pub fn naive_posterior(rows: &[Vec<f64>], psi: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = rows
        .iter()
        .map(|r| (-r.iter().zip(psi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

/// Mann-Whitney statistic: probability that a random positive outscores a
/// random negative, ties counting one half.
pub fn mann_whitney_auc(scored: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += match p.partial_cmp(&n).unwrap() {
                Ordering::Greater => 1.0,
                Ordering::Equal => 0.5,
                Ordering::Less => 0.0,
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Area under a polyline in (fpr, tpr), one trapezoid per segment.
pub fn trapezoid_sum(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|s| 0.5 * (s[1].fpr - s[0].fpr) * (s[1].tpr + s[0].tpr))
        .sum()
}

/// Nearest vertex of a `V`-gon to angle `theta`, by scanning all vertices.
pub fn nearest_vertex(theta: f64, v: usize) -> usize {
    let tau = std::f64::consts::TAU;
    (0..v)
        .min_by(|&a, &b| {
            let d = |k: usize| {
                let diff = (theta - tau * k as f64 / v as f64).rem_euclid(tau);
                diff.min(tau - diff)
            };
            d(a).partial_cmp(&d(b)).unwrap()
        })
        .unwrap()
}

// ---------------------------------------------------------------------------
// COCO evaluation, from the definitions.

#[derive(Clone, Copy, PartialEq, Debug)]
enum Verdict {
    Tp,
    Fp,
    Skip,
}

const RANGES: [(f64, f64); 4] = [(0.0, 1e10), (0.0, 1024.0), (1024.0, 9216.0), (9216.0, 1e10)];

fn in_range(a: f64, r: (f64, f64)) -> bool {
    r.0 <= a && a <= r.1
}

/// Among `cands`, the one with the largest overlap at or above `floor`;
/// ties go to the later candidate.
fn pick(cands: &[(usize, f64)], floor: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(g, ov) in cands {
        if ov >= floor && best.is_none_or(|(_, b)| ov >= b) {
            best = Some((g, ov));
        }
    }
    best.map(|b| b.0)
}

fn image_verdicts(
    dets: &[&Detection],
    gts: &[&GroundTruthBox],
    thr: f64,
    range: (f64, f64),
) -> (Vec<Verdict>, usize) {
    let ignored: Vec<bool> = gts.iter().map(|g| g.iscrowd || !in_range(g.area, range)).collect();
    let mut taken = vec![false; gts.len()];
    let floor = thr.min(1.0 - 1e-10);
    let mut out = Vec::with_capacity(dets.len());
    for d in dets {
        let ov = |g: &GroundTruthBox| {
            if g.iscrowd {
                let a = area(&d.bbox);
                if a > 0.0 {
                    inter_area(&d.bbox, &g.bbox) / a
                } else {
                    0.0
                }
            } else {
                oracle_iou(&d.bbox, &g.bbox)
            }
        };
        let regular: Vec<(usize, f64)> = (0..gts.len())
            .filter(|&g| !ignored[g] && !taken[g])
            .map(|g| (g, ov(gts[g])))
            .collect();
        let fallback: Vec<(usize, f64)> = (0..gts.len())
            .filter(|&g| ignored[g] && (gts[g].iscrowd || !taken[g]))
            .map(|g| (g, ov(gts[g])))
            .collect();
        let hit = pick(&regular, floor).or_else(|| pick(&fallback, floor));
        out.push(match hit {
            Some(g) => {
                taken[g] = true;
                if ignored[g] {
                    Verdict::Skip
                } else {
                    Verdict::Tp
                }
            }
            None if !in_range(area(&d.bbox), range) => Verdict::Skip,
            None => Verdict::Fp,
        });
    }
    (out, ignored.iter().filter(|i| !**i).count())
}

/// (AP, recall) at one threshold and area range; `(-1, -1)` without gts.
fn setting(dets: &[Detection], gts: &[GroundTruthBox], thr: f64, range: (f64, f64), max_dets: usize) -> (f64, f64) {
    let mut images: Vec<u64> = gts.iter().map(|g| g.image_id).chain(dets.iter().map(|d| d.image_id)).collect();
    images.sort_unstable();
    images.dedup();
    // (score, image, rank within image, verdict)
    let mut pool: Vec<(f64, u64, usize, Verdict)> = Vec::new();
    let mut npos = 0;
    for &img in &images {
        let mut ds: Vec<&Detection> = dets.iter().filter(|d| d.image_id == img).collect();
        ds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        ds.truncate(max_dets);
        let mut gs: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.image_id == img).collect();
        // Regular ground truth first; the order inside each group is kept.
        gs.sort_by_key(|g| g.iscrowd || !in_range(g.area, range));
        let (v, n) = image_verdicts(&ds, &gs, thr, range);
        npos += n;
        pool.extend(v.into_iter().enumerate().map(|(k, verdict)| (ds[k].score, img, k, verdict)));
    }
    if npos == 0 {
        return (-1.0, -1.0);
    }
    pool.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let flags: Vec<bool> = pool.iter().filter(|p| p.3 != Verdict::Skip).map(|p| p.3 == Verdict::Tp).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for f in &flags {
        if *f {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut sum = 0.0;
    for i in 0..101 {
        // numpy's linspace(0, 1, 101): i * step, last pinned to 1.
        let r = if i == 100 { 1.0 } else { i as f64 * (1.0 / 100.0) };
        let best = curve
            .iter()
            .filter(|(rc, _)| *rc >= r)
            .map(|(_, pr)| *pr)
            .fold(0.0, f64::max);
        sum += best;
    }
    (sum / 101.0, tp as f64 / npos as f64)
}

fn mean_of_defined(v: &[f64]) -> f64 {
    let d: Vec<f64> = v.iter().copied().filter(|x| *x > -1.0).collect();
    if d.is_empty() {
        -1.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// `[AP, AP50, AP75, APs, APm, APl, AR]` for one-category input.
pub fn oracle_summary(dets: &[Detection], gts: &[GroundTruthBox], thresholds: &[f64], max_dets: usize) -> [f64; 7] {
    if gts.is_empty() {
        return [-1.0; 7];
    }
    let cat = gts[0].category_id;
    let dets: Vec<Detection> = dets.iter().copied().filter(|d| d.category_id == cat).collect();
    let sweep = |r: (f64, f64)| {
        let (a, rc): (Vec<f64>, Vec<f64>) = thresholds.iter().map(|&t| setting(&dets, gts, t, r, max_dets)).unzip();
        (mean_of_defined(&a), mean_of_defined(&rc))
    };
    let (ap, ar) = sweep(RANGES[0]);
    [
        ap,
        setting(&dets, gts, 0.5, RANGES[0], max_dets).0,
        setting(&dets, gts, 0.75, RANGES[0], max_dets).0,
        sweep(RANGES[1]).0,
        sweep(RANGES[2]).0,
        sweep(RANGES[3]).0,
        ar,
    ]
}

/// Expands `[count, numerator, denominator]` runs into the 101 interpolated
/// precision values and averages them in order.
pub fn run_length_ap(runs: &[[u64; 3]]) -> f64 {
    let mut vals = Vec::with_capacity(101);
    for &[count, num, den] in runs {
        for _ in 0..count {
            vals.push(num as f64 / den as f64);
        }
    }
    assert_eq!(vals.len(), 101, "runs must cover 101 recall points");
    vals.iter().sum::<f64>() / 101.0
}
