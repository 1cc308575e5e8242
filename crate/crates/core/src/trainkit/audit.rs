//! Finite-difference audit of every hand-written backward pass.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{BackboneSpec, TinyBackbone};
use super::conv::Tensor;
use super::gradcheck::{compare_gradients, numeric_gradient};
use super::loss::{smooth_l1, SMOOTH_L1_BETA};
use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::roi_align::{roi_align, roi_align_backward, FeatureMap, RoiFeatures};
use crate::surface::{cse_loss, CorrespondenceSample, EmbeddingMatrix, PixelEmbeddingField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditCheck {
    CseLoss,
    RoiAlign,
    Backbone,
    SmoothL1,
}

impl AuditCheck {
    pub const ALL: [AuditCheck; 4] = [
        AuditCheck::CseLoss,
        AuditCheck::RoiAlign,
        AuditCheck::Backbone,
        AuditCheck::SmoothL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AuditCheck::CseLoss => "cse_loss",
            AuditCheck::RoiAlign => "roi_align",
            AuditCheck::Backbone => "backbone",
            AuditCheck::SmoothL1 => "smooth_l1",
        }
    }

    /// Pass bound on the maximum relative error.
    pub fn threshold(self) -> f64 {
        match self {
            AuditCheck::Backbone => 1e-4,
            _ => 1e-5,
        }
    }

    fn step(self) -> f64 {
        match self {
            AuditCheck::CseLoss => 1e-5,
            AuditCheck::RoiAlign => 1e-3,
            AuditCheck::Backbone => 1e-4,
            AuditCheck::SmoothL1 => 1e-5,
        }
    }
}

impl fmt::Display for AuditCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AuditCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AuditCheck::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown check `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub check: AuditCheck,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
    pub seeds: usize,
    /// Coordinates checked over all seeds.
    pub coordinates: usize,
    /// Backbone only: coordinates whose `+-eps` probes flip some ReLU. These
    /// are still checked, with the gates held at the base point.
    pub kink_crossings: usize,
}

struct Instance {
    params: Vec<f64>,
    analytic: Vec<f64>,
    numeric: Vec<f64>,
    kinks: usize,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn cse_instance(rng: &mut ChaCha8Rng, eps: f64) -> Result<Instance> {
    let v = rng.gen_range(3..=10);
    let d = rng.gen_range(1..=4);
    let p = rng.gen_range(2..=4);
    let n = rng.gen_range(1..=8);
    let e = EmbeddingMatrix::new(v, d, uniform(rng, v * d, -0.5, 0.5))?;
    let field = PixelEmbeddingField::new(d, p, uniform(rng, d * p * p, -0.5, 0.5))?;
    let samples: Vec<CorrespondenceSample> = (0..n)
        .map(|_| CorrespondenceSample {
            row: rng.gen_range(0..p),
            col: rng.gen_range(0..p),
            gt_vertex: rng.gen_range(0..v),
            image_id: 0,
        })
        .collect();
    let l = cse_loss(&e, &field, &samples)?;
    let ne = v * d;
    let mut params = e.as_slice().to_vec();
    params.extend_from_slice(&field.values);
    let mut analytic = l.grad_embedding;
    analytic.extend_from_slice(&l.grad_field);
    let numeric = numeric_gradient(
        |x| {
            let e = EmbeddingMatrix::new(v, d, x[..ne].to_vec()).expect("shape fixed");
            let f = PixelEmbeddingField::new(d, p, x[ne..].to_vec()).expect("shape fixed");
            cse_loss(&e, &f, &samples).map_or(f64::NAN, |l| l.loss)
        },
        &params,
        eps,
    )?;
    Ok(Instance {
        params,
        analytic,
        numeric,
        kinks: 0,
    })
}

fn roi_instance(rng: &mut ChaCha8Rng, eps: f64) -> Result<Instance> {
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(3..=8);
    let w = rng.gen_range(3..=8);
    let scale = [1.0, 0.5, 0.25][rng.gen_range(0..3)];
    let out = rng.gen_range(1..=4);
    let sr = rng.gen_range(1..=3);
    let (ih, iw) = (h as f64 / scale, w as f64 / scale);
    let x1 = rng.gen_range(-0.2 * iw..0.8 * iw);
    let y1 = rng.gen_range(-0.2 * ih..0.8 * ih);
    let bbox = BBox::new(x1, y1, x1 + rng.gen_range(0.5..0.7 * iw), y1 + rng.gen_range(0.5..0.7 * ih))?;
    let fm = FeatureMap::new(c, h, w, uniform(rng, c * h * w, -1.0, 1.0), scale)?;
    let coef = uniform(rng, c * out * out, -1.0, 1.0);
    let upstream = RoiFeatures {
        channels: c,
        size: out,
        values: coef.clone(),
        degenerate: false,
    };
    let analytic = roi_align_backward(&upstream, &fm.shape(), &bbox, out, sr)?;
    let numeric = numeric_gradient(
        |x| {
            let m = FeatureMap::new(c, h, w, x.to_vec(), scale).expect("shape fixed");
            roi_align(&m, &bbox, out, sr).map_or(f64::NAN, |r| {
                r.values.iter().zip(&coef).map(|(a, b)| a * b).sum()
            })
        },
        &fm.values,
        eps,
    )?;
    Ok(Instance {
        params: fm.values,
        analytic,
        numeric,
        kinks: 0,
    })
}

/// Small network used by the audit; same layer types as the training one.
pub fn audit_backbone_spec() -> BackboneSpec {
    BackboneSpec {
        in_channels: 1,
        blocks: vec![[2, 1], [3, 2], [3, 1]],
        anchors_per_cell: 2,
        embed_dim: 3,
        embed_tower: 2,
    }
}

/// Backbone check on a random `16 x 16` image against a random linear
/// readout of all three outputs.
pub fn backbone_instance(spec: &BackboneSpec, seed: u64, eps: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bb = TinyBackbone::new(spec, rng.gen())?;
    // nonzero biases so their gradients are exercised too
    let mut p = bb.params();
    p.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    bb.set_params(&p)?;
    let image = Tensor::new(spec.in_channels, 16, 16, uniform(&mut rng, spec.in_channels * 256, -1.0, 1.0))?;
    let base = bb.forward(&image)?;
    let co = uniform(&mut rng, base.objectness.data.len(), -1.0, 1.0);
    let cd = uniform(&mut rng, base.deltas.data.len(), -1.0, 1.0);
    let ce = uniform(&mut rng, base.embedding.data.len(), -1.0, 1.0);
    let analytic = bb.backward(&base, &co, &cd, &ce)?;
    let readout = |o: &super::backbone::BackboneOutput| -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        dot(&o.objectness.data, &co) + dot(&o.deltas.data, &cd) + dot(&o.embedding.data, &ce)
    };
    let masks = base.masks().clone();
    let mut probe = bb.clone();
    let numeric = numeric_gradient(
        |x| {
            probe.set_params(x).expect("shape fixed");
            probe
                .forward_with_masks(&image, &masks)
                .map_or(f64::NAN, |o| readout(&o))
        },
        &p,
        eps,
    )?;
    let mut kinks = 0;
    let mut x = p.clone();
    for i in 0..x.len() {
        let orig = x[i];
        let mut flips = false;
        for s in [eps, -eps] {
            x[i] = orig + s;
            probe.set_params(&x)?;
            flips |= probe.forward(&image)?.masks() != &masks;
        }
        x[i] = orig;
        kinks += usize::from(flips);
    }
    Ok((p, analytic, numeric, kinks))
}

fn smooth_l1_instance(rng: &mut ChaCha8Rng, eps: f64) -> Result<Instance> {
    let n = rng.gen_range(4..=16);
    let mut params = uniform(rng, n, -3.0, 3.0);
    // always probe the switch points themselves
    params[0] = SMOOTH_L1_BETA;
    params[1] = -SMOOTH_L1_BETA;
    let coef = uniform(rng, n, 0.5, 1.5);
    let analytic: Vec<f64> = params
        .iter()
        .zip(&coef)
        .map(|(&x, c)| c * smooth_l1(x, SMOOTH_L1_BETA).1)
        .collect();
    let numeric = numeric_gradient(
        |x| x.iter().zip(&coef).map(|(&v, c)| c * smooth_l1(v, SMOOTH_L1_BETA).0).sum(),
        &params,
        eps,
    )?;
    Ok(Instance {
        params,
        analytic,
        numeric,
        kinks: 0,
    })
}

fn instance(check: AuditCheck, seed: u64) -> Result<Instance> {
    // distinct streams per check so adding one never shifts another
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(check as u64 + 1);
    let eps = check.step();
    match check {
        AuditCheck::CseLoss => cse_instance(&mut rng, eps),
        AuditCheck::RoiAlign => roi_instance(&mut rng, eps),
        AuditCheck::Backbone => {
            let (params, analytic, numeric, kinks) = backbone_instance(&audit_backbone_spec(), rng.gen(), eps)?;
            Ok(Instance {
                params,
                analytic,
                numeric,
                kinks,
            })
        }
        AuditCheck::SmoothL1 => smooth_l1_instance(&mut rng, eps),
    }
}

/// Runs every check on seeds `first_seed .. first_seed + seeds`.
///
/// `corrupt` perturbs the analytic gradient of one check, so callers can
/// confirm that a broken backward pass is reported.
pub fn run_gradient_audit(first_seed: u64, seeds: usize, corrupt: Option<AuditCheck>) -> Result<Vec<AuditResult>> {
    if seeds == 0 {
        return Err(invalid("the audit needs at least one seed"));
    }
    AuditCheck::ALL
        .into_iter()
        .map(|check| {
            let mut worst: f64 = 0.0;
            let mut coordinates = 0;
            let mut kinks = 0;
            for s in 0..seeds as u64 {
                let mut inst = instance(check, first_seed.wrapping_add(s))?;
                if corrupt == Some(check) {
                    let i = inst.params.len() / 2;
                    inst.analytic[i] = inst.analytic[i] * 1.01 + 1e-3;
                }
                worst = worst.max(compare_gradients(&inst.analytic, &inst.numeric).max_rel_error);
                coordinates += inst.params.len();
                kinks += inst.kinks;
            }
            Ok(AuditResult {
                check,
                max_rel_error: worst,
                threshold: check.threshold(),
                passed: worst < check.threshold(),
                seeds,
                coordinates,
                kink_crossings: kinks,
            })
        })
        .collect()
}
