//! Release criteria, one line each. Runs without the libtest harness so the
//! lines always reach stdout; exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use densedet_core::dataio::{extract_person_subset, parse_coco, read_detections, SubsetSpec};
use densedet_core::metrics::report::render_text;
use densedet_core::metrics::{coco_summary, roc_auc, roc_from_labels, ApSummary, Detection, EvalParams, GroundTruthBox};
use densedet_core::proposals::{nms, ScoredBox};
use densedet_core::surface::{vertex_posterior, EmbeddingMatrix};
use densedet_core::trainkit::{run_gradient_audit, synthetic_splits, train_toy_detector, TrainConfig};
use densedet_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    if ok {
        Ok(detail.into())
    } else {
        Err(detail.into())
    }
}

fn gradient_audit() -> Outcome {
    let start = Instant::now();
    let results = run_gradient_audit(0, 100, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut parts = Vec::new();
    for r in &results {
        parts.push(format!("{}={:.1e}/{:.0e}", r.check, r.max_rel_error, r.threshold));
        if !r.passed {
            return Err(format!("{} max_rel_error {:e} over {:e}", r.check, r.max_rel_error, r.threshold));
        }
    }
    check(
        elapsed < Duration::from_secs(60),
        format!("{} seeds={} in {:.1}s", parts.join(" "), results[0].seeds, elapsed.as_secs_f64()),
    )
}

fn posterior_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let (v, d) = (rng.gen_range(2..50), rng.gen_range(1..10));
        let data: Vec<f64> = (0..v * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let rows: Vec<Vec<f64>> = data.chunks(d).map(<[f64]>::to_vec).collect();
        let e = EmbeddingMatrix::new(v, d, data.clone()).unwrap();
        let psi: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let p = vertex_posterior(&e, &psi).map_err(|e| e.to_string())?;
        let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let moved = EmbeddingMatrix::new(v, d, data.iter().enumerate().map(|(k, x)| x + c[k % d]).collect()).unwrap();
        let psi2: Vec<f64> = psi.iter().zip(&c).map(|(a, b)| a + b).collect();
        let q = vertex_posterior(&moved, &psi2).map_err(|e| e.to_string())?;
        let naive = naive_posterior(&rows, &psi);
        let sum_err = (p.iter().sum::<f64>() - 1.0).abs();
        let shift_err = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let naive_err = p.iter().zip(&naive).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let err = sum_err.max(shift_err).max(naive_err);
        if err >= 1e-9 {
            return Err(format!("case {case}: sum {sum_err:e} shift {shift_err:e} naive {naive_err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("1000 instances, worst deviation {worst:.1e}"))
}

fn nms_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for case in 0..500 {
        let n = rng.gen_range(0..=100);
        let coarse = case % 2 == 0;
        let mut boxes = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, y, w, h): (f64, f64, f64, f64) = if coarse {
                (
                    rng.gen_range(0..20) as f64,
                    rng.gen_range(0..20) as f64,
                    rng.gen_range(1..12) as f64,
                    rng.gen_range(1..12) as f64,
                )
            } else {
                (rng.gen_range(0.0..80.0), rng.gen_range(0.0..80.0), rng.gen_range(1.0..40.0), rng.gen_range(1.0..40.0))
            };
            boxes.push(BBox::new(x, y, x + w, y + h).unwrap());
            scores.push(if coarse { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen() });
        }
        let thr = [0.3, 0.5, 0.7][case % 3];
        let scored: Vec<ScoredBox> = boxes.iter().zip(&scores).map(|(b, s)| ScoredBox::new(*b, *s).unwrap()).collect();
        if nms(&scored, thr) != brute_nms(&boxes, &scores, thr) {
            return Err(format!("case {case} differs"));
        }
    }
    Ok("500 instances identical".into())
}

fn run_length_groups(groups: &Value) -> Vec<f64> {
    let mut out = Vec::new();
    for g in groups.as_array().unwrap() {
        let runs: Vec<[u64; 3]> = serde_json::from_value(g[1].clone()).unwrap();
        out.extend(std::iter::repeat_n(run_length_ap(&runs), g[0].as_u64().unwrap() as usize));
    }
    out
}

fn ap_oracle() -> Outcome {
    let gts = parse_coco(&read_fixture("eval_gt.json")).unwrap().ground_truth(1).unwrap();
    let dets = read_detections(&read_fixture("eval_dets.json")).unwrap();
    let e: Value = serde_json::from_slice(&read_fixture("eval_expected.json")).unwrap();
    let p = EvalParams::default();
    let s = coco_summary(&dets, &gts, &p).map_err(|e| e.to_string())?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let all = run_length_groups(&e["all"]);
    let hand = [
        mean(all.clone()),
        all[0],
        all[5],
        mean(run_length_groups(&e["small"])),
        mean(run_length_groups(&e["medium"])),
        mean(run_length_groups(&e["large"])),
    ];
    if s.columns() != hand {
        return Err(format!("fixture {:?} vs hand trace {hand:?}", s.columns()));
    }
    let o = oracle_summary(&dets, &gts, &p.iou_thresholds, p.max_dets);
    if [s.ap, s.ap50, s.ap75, s.ap_small, s.ap_medium, s.ap_large, s.ar] != o {
        return Err("fixture differs from the brute-force oracle".into());
    }
    let g = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let one = [GroundTruthBox::new(1, g, 1)];
    let fp_then_tp = [
        Detection::new(1, BBox::new(50.0, 50.0, 60.0, 60.0).unwrap(), 0.9, 1).unwrap(),
        Detection::new(1, g, 0.8, 1).unwrap(),
    ];
    let half = coco_summary(&fp_then_tp, &one, &p).map_err(|e| e.to_string())?.ap;
    check(half == 0.5, format!("fixture exact (AP {:.6}), FP-above-TP AP {half}", s.ap))
}

fn table_rendering() -> Outcome {
    let rows: Vec<Value> = serde_json::from_slice(&read_fixture("reference_rows.json")).unwrap();
    for r in &rows {
        let v: [f64; 6] = serde_json::from_value(r["values"].clone()).unwrap();
        let got = render_text(&ApSummary::from_percent(v, None), false);
        if got != r["text"].as_str().unwrap() {
            return Err(format!("{}: {got:?}", r["name"]));
        }
    }
    let row = |v: [f64; 6]| render_text(&ApSummary::from_percent(v, None), false).lines().nth(1).unwrap().to_string();
    let base = row([47.9, 80.9, 52.6, 23.9, 50.3, 67.5]);
    let dense = row([49.9, 86.1, 52.8, 26.2, 51.5, 68.9]);
    check(
        base == "47.9 80.9 52.6 23.9 50.3 67.5" && dense == "49.9 86.1 52.8 26.2 51.5 68.9",
        format!("{} rows byte-for-byte", rows.len()),
    )
}

fn directional() -> Outcome {
    let start = Instant::now();
    let seeds = [1u64, 2, 3];
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let aps = jobs
        .par_iter()
        .map(|&(seed, dense)| {
            let cfg = TrainConfig {
                seed,
                with_dense_head: dense,
                ..TrainConfig::default()
            };
            let (train, val) = synthetic_splits(&cfg)?;
            Ok(train_toy_detector(&cfg, &train, &val)?.final_summary.ap)
        })
        .collect::<Result<Vec<f64>, densedet_core::Error>>()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mean = |dense: bool| {
        jobs.iter().zip(&aps).filter(|(j, _)| j.1 == dense).map(|(_, a)| a).sum::<f64>() / seeds.len() as f64
    };
    let (without, with) = (mean(false), mean(true));
    check(
        with >= without - 0.01 && elapsed < Duration::from_secs(600),
        format!(
            "mean AP with {with:.4} vs without {without:.4} over seeds {seeds:?} in {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn roc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(2..80);
        let mut scored: Vec<(f64, bool)> =
            (0..n).map(|_| (rng.gen_range(0..15) as f64 / 14.0, rng.gen_bool(0.4))).collect();
        scored[0].1 = true;
        scored[1].1 = false;
        let c = roc_from_labels(&scored).map_err(|e| e.to_string())?;
        worst = worst
            .max((c.auc - trapezoid_sum(&c.points)).abs())
            .max((c.auc - mann_whitney_auc(&scored)).abs());
    }
    if worst >= 1e-12 {
        return Err(format!("oracle deviation {worst:e}"));
    }
    let gts = parse_coco(&read_fixture("eval_gt.json")).unwrap().ground_truth(1).unwrap();
    let dets = read_detections(&read_fixture("eval_dets.json")).unwrap();
    let fixture = roc_auc(&dets, &gts, 0.5).map_err(|e| e.to_string())?;
    if (fixture.auc - trapezoid_sum(&fixture.points)).abs() >= 1e-12 {
        return Err("fixture curve differs from the summation oracle".into());
    }
    let perfect: Vec<(f64, bool)> = (0..100).map(|k| (k as f64, k >= 50)).collect();
    let perfect = roc_from_labels(&perfect).map_err(|e| e.to_string())?.auc;
    let shuffled: Vec<(f64, bool)> = (0..4000).map(|_| (rng.gen(), rng.gen_bool(0.5))).collect();
    let shuffled = roc_from_labels(&shuffled).map_err(|e| e.to_string())?.auc;
    check(
        perfect == 1.0 && (shuffled - 0.5).abs() <= 0.05,
        format!("oracle deviation {worst:.1e}, perfect {perfect}, shuffled {shuffled:.4}"),
    )
}

fn subset_contract() -> Outcome {
    let bytes = read_fixture("coco_20.json");
    let doc: Value = serde_json::from_slice(&bytes).unwrap();
    let ds = parse_coco(&bytes).map_err(|e| e.to_string())?;
    let person = ds.category_id("person").ok_or("no person category")?;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for a in doc["annotations"].as_array().unwrap() {
        if a["category_id"].as_u64() == Some(person) {
            *counts.entry(a["image_id"].as_u64().unwrap()).or_default() += 1;
        }
    }
    for min in 1..=5 {
        let spec = SubsetSpec {
            min_instances: min,
            ..SubsetSpec::default()
        };
        let sub = extract_person_subset(&ds, &spec).map_err(|e| e.to_string())?;
        let got: BTreeSet<u64> = sub.images.iter().map(|i| i.id).collect();
        let want: BTreeSet<u64> = counts.iter().filter(|(_, n)| **n >= min).map(|(id, _)| *id).collect();
        if got != want {
            return Err(format!("min_instances {min}: kept {got:?}, expected {want:?}"));
        }
        if extract_person_subset(&sub, &spec).map_err(|e| e.to_string())? != sub {
            return Err(format!("min_instances {min}: second pass changed the subset"));
        }
    }
    let small = parse_coco(&read_fixture("subset_3.json")).map_err(|e| e.to_string())?;
    let sub = extract_person_subset(&small, &SubsetSpec::default()).map_err(|e| e.to_string())?;
    check(
        sub.images.len() == 2 && sub.annotations.len() == 3,
        format!("exact and idempotent for min_instances 1..=5; 3-image example kept {} images", sub.images.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient audit", gradient_audit),
        ("posterior contract", posterior_contract),
        ("nms oracle", nms_equivalence),
        ("ap oracle", ap_oracle),
        ("table rendering", table_rendering),
        ("directional", directional),
        ("roc/auc", roc),
        ("subset contract", subset_contract),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", 8 - failed, 8);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
