use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backbone::{BackboneSpec, TinyBackbone};
use super::conv::Tensor;
use super::loss::{bce_with_logits, sigmoid, smooth_l1, SMOOTH_L1_BETA};
use crate::dataio::{generate_synthetic_scene, SyntheticScene};
use crate::error::{invalid, Error, Result};
use crate::geometry::{decode_box, encode_box, generate_anchors, iou, AnchorSpec, BBox, BoxDelta};
use crate::metrics::{coco_summary, report, ApSummary, Detection, EvalParams, GroundTruthBox};
use crate::proposals::{assign_anchor_labels, select_proposals, AnchorLabel, ScoredBox};
use crate::roi_align::{roi_align, roi_align_backward_into, FeatureMap, RoiFeatures};
use crate::surface::{
    cse_loss_accumulate, expected_geodesic_error, vertex_posterior, CorrespondenceSample,
    EmbeddingMatrix, PixelEmbeddingField, ScoreKind,
};

/// Category id given to synthetic objects.
pub const TOY_CATEGORY: u64 = 1;

/// Anchors sized for ellipses of 6 to 16 pixels on a stride-2 grid.
pub fn toy_anchor_spec() -> AnchorSpec {
    AnchorSpec {
        base_size: 4.0,
        scales: vec![1.5, 2.5, 4.0],
        ratios: vec![0.5, 1.0, 2.0],
        stride: 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub with_dense_head: bool,
    pub lambda_obj: f64,
    pub lambda_box: f64,
    pub lambda_cse: f64,
    /// Pixel/vertex embedding width `D`.
    pub embed_dim: usize,
    /// Width of the private 3x3 layer in front of the embedding head; 0 for none.
    pub embed_tower: usize,
    pub mesh_vertices: usize,
    pub image_size: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Seeds the synthetic data, independent of `seed`.
    pub data_seed: u64,
    pub anchors: AnchorSpec,
    /// `[out_channels, stride]` per 3x3 block.
    pub blocks: Vec<[usize; 2]>,
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Anchors sampled per scene for the objectness loss.
    pub anchor_batch: usize,
    pub roi_size: usize,
    pub sampling_ratio: usize,
    /// A proposal feeds the dense head only if it overlaps its object this much.
    pub roi_min_iou: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.05,
            seed: 1,
            with_dense_head: true,
            lambda_obj: 1.0,
            lambda_box: 1.0,
            lambda_cse: 1.0,
            embed_dim: 16,
            embed_tower: 16,
            mesh_vertices: 64,
            image_size: 32,
            train_scenes: 24,
            val_scenes: 16,
            data_seed: 7000,
            anchors: toy_anchor_spec(),
            blocks: BackboneSpec::default().blocks,
            pos_iou: 0.7,
            neg_iou: 0.3,
            anchor_batch: 256,
            roi_size: 14,
            sampling_ratio: 2,
            roi_min_iou: 0.5,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("lambda_obj", self.lambda_obj),
            ("lambda_box", self.lambda_box),
            ("lambda_cse", self.lambda_cse),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.train_scenes == 0 || self.val_scenes == 0 {
            return bad("train and validation splits must be non-empty".into());
        }
        if self.anchor_batch == 0 || self.roi_size == 0 || self.sampling_ratio == 0 || self.eval_every == 0 {
            return bad("anchor_batch, roi_size, sampling_ratio and eval_every must be positive".into());
        }
        if !(self.neg_iou > 0.0 && self.neg_iou <= self.pos_iou && self.pos_iou < 1.0) {
            return bad(format!("need 0 < neg_iou <= pos_iou < 1, got {} and {}", self.neg_iou, self.pos_iou));
        }
        if !(0.0..=1.0).contains(&self.roi_min_iou) {
            return bad(format!("roi_min_iou must be in [0, 1], got {}", self.roi_min_iou));
        }
        self.anchors.validate()?;
        let spec = self.backbone_spec();
        spec.validate()?;
        if spec.stride() != self.anchors.stride as usize {
            return bad(format!(
                "anchor stride {} differs from backbone stride {}",
                self.anchors.stride,
                spec.stride()
            ));
        }
        Ok(())
    }

    pub fn backbone_spec(&self) -> BackboneSpec {
        BackboneSpec {
            in_channels: 1,
            blocks: self.blocks.clone(),
            anchors_per_cell: self.anchors.anchors_per_cell(),
            embed_dim: self.embed_dim,
            embed_tower: self.embed_tower,
        }
    }
}

/// Training and validation scenes described by `config`.
pub fn synthetic_splits(config: &TrainConfig) -> Result<(Vec<SyntheticScene>, Vec<SyntheticScene>)> {
    let make = |offset: u64, n: usize| {
        (0..n as u64)
            .map(|k| generate_synthetic_scene(config.data_seed + offset + k, config.mesh_vertices, config.image_size))
            .collect::<Result<Vec<_>>>()
    };
    Ok((make(0, config.train_scenes)?, make(1_000_000, config.val_scenes)?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub obj: f64,
    #[serde(rename = "box")]
    pub box_reg: f64,
    pub cse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossParts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub summary: ApSummary,
    pub mean_geodesic_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub losses: Vec<EpochLoss>,
    pub evaluations: Vec<EvalPoint>,
    pub final_summary: ApSummary,
    pub mean_geodesic_error: Option<f64>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::dataio::from_json_bytes(text.as_bytes())
    }

    /// `epoch,loss_total,loss_obj,loss_box,loss_cse`
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss_total,loss_obj,loss_box,loss_cse\n");
        for e in &self.losses {
            let l = e.loss;
            s.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9}\n",
                e.epoch, l.total, l.obj, l.box_reg, l.cse
            ));
        }
        s
    }
}

/// Gradients of one scene's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStep {
    pub loss: LossParts,
    pub grad_backbone: Vec<f64>,
    pub grad_embedding: Vec<f64>,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    train: &'a [SyntheticScene],
    val: &'a [SyntheticScene],
    backbone: TinyBackbone,
    embedding: EmbeddingMatrix,
    anchors: Vec<BBox>,
    feat: (usize, usize),
}

/// Up to `k` of `0..n`, uniformly, in ascending order.
fn pick(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, train: &'a [SyntheticScene], val: &'a [SyntheticScene]) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(invalid("train and validation splits must be non-empty"));
        }
        for s in train.iter().chain(val) {
            if s.size != config.image_size || s.image.len() != s.size * s.size {
                return Err(Error::Dimension(format!(
                    "scene {} is {}px, config expects {}px",
                    s.seed, s.size, config.image_size
                )));
            }
            if s.mesh.vertex_count() != config.mesh_vertices {
                return Err(Error::Dimension(format!(
                    "scene {} mesh has {} vertices, config expects {}",
                    s.seed,
                    s.mesh.vertex_count(),
                    config.mesh_vertices
                )));
            }
        }
        let backbone = TinyBackbone::new(&config.backbone_spec(), config.seed)?;
        let embedding = EmbeddingMatrix::init_uniform(
            config.mesh_vertices,
            config.embed_dim,
            config.seed ^ 0x9E37_79B9_7F4A_7C15,
        )?;
        let feat = backbone.feature_size(config.image_size, config.image_size);
        let anchors = generate_anchors(&config.anchors, feat.0, feat.1)?;
        Ok(Trainer {
            config,
            train,
            val,
            backbone,
            embedding,
            anchors,
            feat,
        })
    }

    pub fn backbone(&self) -> &TinyBackbone {
        &self.backbone
    }

    pub fn embedding(&self) -> &EmbeddingMatrix {
        &self.embedding
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Generator for anchor sampling and scene order.
    pub fn training_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        rng
    }

    fn embedding_map(&self, out: &Tensor) -> Result<FeatureMap> {
        FeatureMap::new(
            out.channels,
            out.height,
            out.width,
            out.data.clone(),
            1.0 / self.config.anchors.stride as f64,
        )
    }

    fn anchor_delta(&self, deltas: &Tensor, anchor: usize) -> BoxDelta {
        let a_per = self.config.anchors.anchors_per_cell();
        let (a, cell) = (anchor % a_per, anchor / a_per);
        let plane = deltas.plane();
        BoxDelta::from_array(std::array::from_fn(|k| deltas.data[(4 * a + k) * plane + cell]))
    }

    /// Supervised pixels of object `instance` inside `roi`, mapped to ROI grid cells.
    fn roi_samples(&self, scene: &SyntheticScene, instance: usize, roi: &BBox) -> Vec<CorrespondenceSample> {
        let p = self.config.roi_size;
        let (w, h) = (roi.width(), roi.height());
        if w <= 0.0 || h <= 0.0 {
            return Vec::new();
        }
        let cell = |v: f64, lo: f64, len: f64| (((v - lo) / len * p as f64).floor() as usize).min(p - 1);
        scene
            .gt_correspondences
            .iter()
            .filter(|c| c.instance == instance)
            .filter_map(|c| {
                let (x, y) = (c.sample.col as f64 + 0.5, c.sample.row as f64 + 0.5);
                roi.contains_point(x, y).then(|| CorrespondenceSample {
                    row: cell(y, roi.y1, h),
                    col: cell(x, roi.x1, w),
                    ..c.sample
                })
            })
            .collect()
    }

    /// Loss and gradients for one scene; `rng` drives anchor sampling.
    pub fn scene_step(&self, scene: &SyntheticScene, rng: &mut ChaCha8Rng) -> Result<SceneStep> {
        let cfg = &self.config;
        let s = cfg.image_size;
        let out = self.backbone.forward(&Tensor::new(1, s, s, scene.image.clone())?)?;
        let a_per = cfg.anchors.anchors_per_cell();
        let plane = self.feat.0 * self.feat.1;
        let slot = |anchor: usize| (anchor % a_per) * plane + anchor / a_per;

        let labels = assign_anchor_labels(&self.anchors, &scene.gt_boxes, cfg.pos_iou, cfg.neg_iou)?;
        let positives: Vec<(usize, usize)> = labels.positives().collect();
        let negatives: Vec<usize> = labels
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == AnchorLabel::Negative)
            .map(|(i, _)| i)
            .collect();
        let pos: Vec<(usize, usize)> = pick(rng, positives.len(), cfg.anchor_batch / 2)
            .into_iter()
            .map(|k| positives[k])
            .collect();
        let neg: Vec<usize> = pick(rng, negatives.len(), cfg.anchor_batch - pos.len())
            .into_iter()
            .map(|k| negatives[k])
            .collect();

        let mut loss = LossParts::default();
        let mut g_obj = vec![0.0; out.objectness.data.len()];
        let mut g_delta = vec![0.0; out.deltas.data.len()];
        let mut g_embed = vec![0.0; out.embedding.data.len()];
        let mut g_e = vec![0.0; self.embedding.as_slice().len()];

        let n_obj = (pos.len() + neg.len()).max(1) as f64;
        let targets = pos.iter().map(|&(a, _)| (a, 1.0)).chain(neg.iter().map(|&a| (a, 0.0)));
        for (anchor, t) in targets {
            let (l, g) = bce_with_logits(out.objectness.data[slot(anchor)], t);
            loss.obj += l / n_obj;
            g_obj[slot(anchor)] += cfg.lambda_obj * g / n_obj;
        }

        if !pos.is_empty() {
            let n_pos = pos.len() as f64;
            for &(anchor, gt) in &pos {
                let target = encode_box(&self.anchors[anchor], &scene.gt_boxes[gt])?.to_array();
                let pred = self.anchor_delta(&out.deltas, anchor).to_array();
                let (a, cell) = (anchor % a_per, anchor / a_per);
                for k in 0..4 {
                    let (l, g) = smooth_l1(pred[k] - target[k], SMOOTH_L1_BETA);
                    loss.box_reg += l / n_pos;
                    g_delta[(4 * a + k) * plane + cell] += cfg.lambda_box * g / n_pos;
                }
            }
        }

        if cfg.with_dense_head && cfg.lambda_cse > 0.0 {
            let mut rois = Vec::new();
            for (gi, gt) in scene.gt_boxes.iter().enumerate() {
                let best = positives
                    .iter()
                    .filter(|(_, g)| *g == gi)
                    .map(|&(a, _)| a)
                    .max_by(|&x, &y| {
                        out.objectness.data[slot(x)]
                            .total_cmp(&out.objectness.data[slot(y)])
                            .then(y.cmp(&x))
                    });
                let Some(anchor) = best else { continue };
                let roi = decode_box(
                    &self.anchors[anchor],
                    &self.anchor_delta(&out.deltas, anchor),
                    Some((s as f64, s as f64)),
                )?;
                if iou(&roi, gt) < cfg.roi_min_iou {
                    continue;
                }
                let samples = self.roi_samples(scene, gi, &roi);
                if !samples.is_empty() {
                    rois.push((roi, samples));
                }
            }
            if !rois.is_empty() {
                let fm = self.embedding_map(&out.embedding)?;
                let shape = fm.shape();
                let (p, sr) = (cfg.roi_size, cfg.sampling_ratio);
                let n_roi = rois.len() as f64;
                for (roi, samples) in &rois {
                    let feats = roi_align(&fm, roi, p, sr)?;
                    let field = PixelEmbeddingField::new(cfg.embed_dim, p, feats.values)?;
                    let mut g_field = vec![0.0; field.values.len()];
                    let l = cse_loss_accumulate(
                        &self.embedding,
                        &field,
                        samples,
                        ScoreKind::default(),
                        cfg.lambda_cse / n_roi,
                        &mut g_e,
                        &mut g_field,
                    )?;
                    loss.cse += l / n_roi;
                    let upstream = RoiFeatures {
                        channels: cfg.embed_dim,
                        size: p,
                        values: g_field,
                        degenerate: false,
                    };
                    roi_align_backward_into(&upstream, &shape, roi, p, sr, &mut g_embed)?;
                }
            }
        }

        loss.total = cfg.lambda_obj * loss.obj + cfg.lambda_box * loss.box_reg + cfg.lambda_cse * loss.cse;
        let grad_backbone = self.backbone.backward(&out, &g_obj, &g_delta, &g_embed)?;
        Ok(SceneStep {
            loss,
            grad_backbone,
            grad_embedding: g_e,
        })
    }

    /// Plain SGD update from one scene's gradients.
    pub fn apply(&mut self, step: &SceneStep) -> Result<()> {
        let lr = self.config.learning_rate;
        self.backbone.sgd_step(&step.grad_backbone, lr)?;
        let e = self.embedding.as_mut_slice();
        if step.grad_embedding.len() != e.len() {
            return Err(Error::Dimension("embedding gradient length mismatch".into()));
        }
        for (w, g) in e.iter_mut().zip(&step.grad_embedding) {
            *w -= lr * g;
        }
        Ok(())
    }

    fn eval_scene(&self, index: usize, scene: &SyntheticScene) -> Result<(Vec<Detection>, Vec<GroundTruthBox>, (f64, usize))> {
        let s = self.config.image_size;
        let out = self.backbone.forward(&Tensor::new(1, s, s, scene.image.clone())?)?;
        let a_per = self.config.anchors.anchors_per_cell();
        let plane = self.feat.0 * self.feat.1;
        let scored = self
            .anchors
            .iter()
            .enumerate()
            .map(|(i, anchor)| {
                let score = sigmoid(out.objectness.data[(i % a_per) * plane + i / a_per]);
                let bbox = decode_box(anchor, &self.anchor_delta(&out.deltas, i), Some((s as f64, s as f64)))?;
                ScoredBox::new(bbox, score)
            })
            .collect::<Result<Vec<_>>>()?;
        let image_id = index as u64;
        let dets = select_proposals(&scored, 2000, 100, 0.5)?
            .into_iter()
            .map(|b| Detection::new(image_id, b.bbox, b.score, TOY_CATEGORY))
            .collect::<Result<Vec<_>>>()?;
        let gts = scene
            .gt_boxes
            .iter()
            .map(|b| GroundTruthBox::new(image_id, *b, TOY_CATEGORY))
            .collect();

        let mut geo = (0.0, 0);
        if self.config.with_dense_head {
            let fm = self.embedding_map(&out.embedding)?;
            let p = self.config.roi_size;
            for (gi, gt) in scene.gt_boxes.iter().enumerate() {
                let feats = roi_align(&fm, gt, p, self.config.sampling_ratio)?;
                let field = PixelEmbeddingField::new(self.config.embed_dim, p, feats.values)?;
                for c in self.roi_samples(scene, gi, gt) {
                    let post = vertex_posterior(&self.embedding, &field.pixel(c.row, c.col))?;
                    geo.0 += expected_geodesic_error(&post, c.gt_vertex, &scene.mesh)?;
                    geo.1 += 1;
                }
            }
        }
        Ok((dets, gts, geo))
    }

    /// COCO summary on the validation split, plus the mean expected geodesic
    /// error of gt-box correspondences when the dense head is active.
    pub fn evaluate(&self) -> Result<(ApSummary, Option<f64>)> {
        let parts = self
            .val
            .par_iter()
            .enumerate()
            .map(|(k, scene)| self.eval_scene(k, scene))
            .collect::<Result<Vec<_>>>()?;
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        let (mut geo_sum, mut geo_n) = (0.0, 0);
        for (d, g, (s, n)) in parts {
            dets.extend(d);
            gts.extend(g);
            geo_sum += s;
            geo_n += n;
        }
        let summary = coco_summary(&dets, &gts, &EvalParams::default())?;
        let geo = (self.config.with_dense_head && geo_n > 0).then(|| geo_sum / geo_n as f64);
        Ok((summary, geo))
    }

    pub fn run(mut self) -> Result<RunReport> {
        let start = Instant::now();
        let mut rng = self.training_rng();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut losses = Vec::with_capacity(self.config.epochs);
        let mut evaluations = Vec::new();
        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut rng);
            let mut sum = LossParts::default();
            for &k in &order {
                let step = self.scene_step(&self.train[k], &mut rng)?;
                if !step.loss.total.is_finite() || step.grad_backbone.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Divergence { epoch });
                }
                self.apply(&step)?;
                sum.total += step.loss.total;
                sum.obj += step.loss.obj;
                sum.box_reg += step.loss.box_reg;
                sum.cse += step.loss.cse;
            }
            let n = order.len() as f64;
            losses.push(EpochLoss {
                epoch,
                loss: LossParts {
                    total: sum.total / n,
                    obj: sum.obj / n,
                    box_reg: sum.box_reg / n,
                    cse: sum.cse / n,
                },
            });
            if epoch % self.config.eval_every == 0 || epoch == self.config.epochs {
                let (summary, geo) = self.evaluate()?;
                evaluations.push(EvalPoint {
                    epoch,
                    summary,
                    mean_geodesic_error: geo,
                });
            }
        }
        let last = *evaluations.last().expect("final epoch is always evaluated");
        Ok(RunReport {
            config: self.config,
            losses,
            evaluations,
            final_summary: last.summary,
            mean_geodesic_error: last.mean_geodesic_error,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Trains on `train`, evaluating on `val`.
pub fn train_toy_detector(config: &TrainConfig, train: &[SyntheticScene], val: &[SyntheticScene]) -> Result<RunReport> {
    Trainer::new(config.clone(), train, val)?.run()
}

/// Two summaries and their column-wise difference `b - a`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub a: ApSummary,
    pub b: ApSummary,
    /// Percent points; `None` where either side is undefined.
    pub delta: [Option<f64>; 6],
}

impl CompareTable {
    pub fn render(&self) -> String {
        let rows = report::render_text(&self.a, false);
        let b_row = report::render_text(&self.b, false);
        let delta = report::render_delta(&self.a, &self.b);
        format!(
            "{rows}{}\n{}\n",
            b_row.lines().nth(1).unwrap_or_default(),
            delta.lines().nth(1).unwrap_or_default()
        )
    }
}

pub fn compare_summaries(a: &ApSummary, b: &ApSummary) -> CompareTable {
    CompareTable {
        a: *a,
        b: *b,
        delta: report::delta_points(a, b),
    }
}

pub fn compare_runs(a: &RunReport, b: &RunReport) -> CompareTable {
    compare_summaries(&a.final_summary, &b.final_summary)
}
