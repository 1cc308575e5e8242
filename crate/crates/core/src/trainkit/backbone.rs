use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{Conv2d, Tensor};
use crate::error::{invalid, Error, Result};

/// Layer plan: `blocks` are `[out_channels, stride]` pairs of 3x3 conv+ReLU,
/// followed by 1x1 heads for the RPN (`5 * anchors_per_cell` channels) and
/// the pixel embedding (`embed_dim` channels). A non-zero `embed_tower` puts
/// a private 3x3 conv+ReLU of that width in front of the embedding head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub blocks: Vec<[usize; 2]>,
    pub anchors_per_cell: usize,
    pub embed_dim: usize,
    pub embed_tower: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            in_channels: 1,
            blocks: vec![[8, 1], [16, 2], [16, 1]],
            anchors_per_cell: 9,
            embed_dim: 16,
            embed_tower: 0,
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.anchors_per_cell == 0 || self.embed_dim == 0 {
            return Err(invalid("backbone channel counts must be positive"));
        }
        if self.blocks.is_empty() {
            return Err(invalid("backbone needs at least one block"));
        }
        if self.blocks.iter().any(|&[c, s]| c == 0 || s == 0) {
            return Err(invalid("block channels and strides must be positive"));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.blocks.iter().map(|b| b[1]).product()
    }
}

fn param_slices<'a>(grad: &'a mut [f64], offset: usize, layer: &Conv2d) -> (&'a mut [f64], &'a mut [f64]) {
    let (w, rest) = grad[offset..].split_at_mut(layer.weight.len());
    (w, &mut rest[..layer.bias.len()])
}

/// Per-layer ReLU on/off pattern of a forward pass.
pub type ReluMasks = Vec<Vec<bool>>;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    /// `A x h x w` logits.
    pub objectness: Tensor,
    /// `4A x h x w`, channel `4a + k` for anchor `a`, coordinate `k`.
    pub deltas: Tensor,
    /// `D x h x w` pixel embeddings.
    pub embedding: Tensor,
    /// Inputs to every block plus the final block output.
    activations: Vec<Tensor>,
    tower_out: Option<Tensor>,
    masks: ReluMasks,
}

impl BackboneOutput {
    pub fn masks(&self) -> &ReluMasks {
        &self.masks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyBackbone {
    spec: BackboneSpec,
    blocks: Vec<Conv2d>,
    rpn_head: Conv2d,
    embed_tower: Option<Conv2d>,
    embed_head: Conv2d,
}

fn init_uniform(conv: &mut Conv2d, bound: f64, rng: &mut ChaCha8Rng) {
    for w in &mut conv.weight {
        *w = rng.gen_range(-bound..=bound);
    }
}

impl TinyBackbone {
    /// He-uniform weights from `seed`, zero biases.
    pub fn new(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut c_in = spec.in_channels;
        for &[c_out, stride] in &spec.blocks {
            let mut conv = Conv2d::zeros(c_in, c_out, 3, stride);
            init_uniform(&mut conv, (6.0 / (9 * c_in) as f64).sqrt(), &mut rng);
            blocks.push(conv);
            c_in = c_out;
        }
        let head_bound = (1.0 / c_in as f64).sqrt() * 0.1;
        let mut rpn_head = Conv2d::zeros(c_in, 5 * spec.anchors_per_cell, 1, 1);
        init_uniform(&mut rpn_head, head_bound, &mut rng);
        let embed_tower = (spec.embed_tower > 0).then(|| {
            let mut conv = Conv2d::zeros(c_in, spec.embed_tower, 3, 1);
            init_uniform(&mut conv, (6.0 / (9 * c_in) as f64).sqrt(), &mut rng);
            conv
        });
        let e_in = if spec.embed_tower > 0 { spec.embed_tower } else { c_in };
        let mut embed_head = Conv2d::zeros(e_in, spec.embed_dim, 1, 1);
        init_uniform(&mut embed_head, (1.0 / e_in as f64).sqrt() * 0.1, &mut rng);
        Ok(TinyBackbone {
            spec: spec.clone(),
            blocks,
            rpn_head,
            embed_tower,
            embed_head,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn layers(&self) -> impl Iterator<Item = &Conv2d> {
        self.blocks
            .iter()
            .chain([&self.rpn_head])
            .chain(self.embed_tower.as_ref())
            .chain([&self.embed_head])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.blocks
            .iter_mut()
            .chain([&mut self.rpn_head])
            .chain(self.embed_tower.as_mut())
            .chain([&mut self.embed_head])
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Conv2d::num_params).sum()
    }

    /// Flat parameters: each layer's weights then biases, blocks first, then
    /// the RPN head, then the embedding head.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            p.extend_from_slice(&l.weight);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backbone parameters".into()));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// `w -= lr * grad` for every parameter.
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.num_params() {
            return Err(Error::Dimension("gradient length does not match parameters".into()));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w -= lr * grad[at];
                at += 1;
            }
        }
        Ok(())
    }

    /// Feature grid size for an `height x width` input.
    pub fn feature_size(&self, height: usize, width: usize) -> (usize, usize) {
        self.blocks
            .iter()
            .fold((height, width), |(h, w), b| b.output_size(h, w))
    }

    pub fn forward(&self, image: &Tensor) -> Result<BackboneOutput> {
        self.forward_impl(image, None)
    }

    /// Forward pass with ReLU gates taken from `masks` instead of the sign of
    /// the pre-activations. The result is then smooth in every weight, which
    /// is what a finite-difference check of the backward pass needs.
    pub fn forward_with_masks(&self, image: &Tensor, masks: &ReluMasks) -> Result<BackboneOutput> {
        self.forward_impl(image, Some(masks))
    }

    fn forward_impl(&self, image: &Tensor, fixed: Option<&ReluMasks>) -> Result<BackboneOutput> {
        if image.channels != self.spec.in_channels {
            return Err(Error::Dimension(format!(
                "image has {} channels, backbone expects {}",
                image.channels, self.spec.in_channels
            )));
        }
        let n_masks = self.blocks.len() + usize::from(self.embed_tower.is_some());
        if fixed.is_some_and(|m| m.len() != n_masks) {
            return Err(Error::Dimension("ReLU masks do not match the input".into()));
        }
        let relu = |k: usize, z: &mut Tensor| -> Result<Vec<bool>> {
            let mask: Vec<bool> = match fixed {
                Some(m) if m[k].len() != z.data.len() => {
                    return Err(Error::Dimension("ReLU masks do not match the input".into()));
                }
                Some(m) => m[k].clone(),
                None => z.data.iter().map(|&v| v > 0.0).collect(),
            };
            for (v, &on) in z.data.iter_mut().zip(&mask) {
                if !on {
                    *v = 0.0;
                }
            }
            Ok(mask)
        };
        let mut activations = vec![image.clone()];
        let mut masks = Vec::with_capacity(n_masks);
        for (k, conv) in self.blocks.iter().enumerate() {
            let mut z = conv.forward(&activations[k])?;
            masks.push(relu(k, &mut z)?);
            activations.push(z);
        }
        let feat = activations.last().expect("at least one block");
        let tower_out = match &self.embed_tower {
            Some(conv) => {
                let mut z = conv.forward(feat)?;
                masks.push(relu(self.blocks.len(), &mut z)?);
                Some(z)
            }
            None => None,
        };
        let rpn = self.rpn_head.forward(feat)?;
        let a = self.spec.anchors_per_cell;
        let plane = rpn.plane();
        let objectness = Tensor::new(a, rpn.height, rpn.width, rpn.data[..a * plane].to_vec())?;
        let deltas = Tensor::new(4 * a, rpn.height, rpn.width, rpn.data[a * plane..].to_vec())?;
        let embedding = self.embed_head.forward(tower_out.as_ref().unwrap_or(feat))?;
        Ok(BackboneOutput {
            objectness,
            deltas,
            embedding,
            activations,
            tower_out,
            masks,
        })
    }

    /// Exact parameter gradient, laid out like [`TinyBackbone::params`], for
    /// upstream gradients on the three outputs.
    pub fn backward(
        &self,
        out: &BackboneOutput,
        grad_objectness: &[f64],
        grad_deltas: &[f64],
        grad_embedding: &[f64],
    ) -> Result<Vec<f64>> {
        let feat = out.activations.last().expect("at least one block");
        if grad_objectness.len() != out.objectness.data.len()
            || grad_deltas.len() != out.deltas.data.len()
            || grad_embedding.len() != out.embedding.data.len()
        {
            return Err(Error::Dimension("output gradients do not match the forward pass".into()));
        }
        let mut grad = vec![0.0; self.num_params()];
        let mut offsets = Vec::new();
        let mut at = 0;
        for l in self.layers() {
            offsets.push(at);
            at += l.num_params();
        }
        let nb = self.blocks.len();

        let mut rpn_grad = Vec::with_capacity(grad_objectness.len() + grad_deltas.len());
        rpn_grad.extend_from_slice(grad_objectness);
        rpn_grad.extend_from_slice(grad_deltas);
        let rpn_grad = Tensor::new(5 * self.spec.anchors_per_cell, feat.height, feat.width, rpn_grad)?;
        let (gw, gb) = param_slices(&mut grad, offsets[nb], &self.rpn_head);
        let mut g_feat = self
            .rpn_head
            .backward(feat, &rpn_grad, gw, gb, true)?
            .expect("input gradient requested");

        let emb_grad = Tensor::new(self.spec.embed_dim, feat.height, feat.width, grad_embedding.to_vec())?;
        let head_in = out.tower_out.as_ref().unwrap_or(feat);
        let (gw, gb) = param_slices(&mut grad, *offsets.last().expect("embedding head"), &self.embed_head);
        let mut g2 = self
            .embed_head
            .backward(head_in, &emb_grad, gw, gb, true)?
            .expect("input gradient requested");
        if let Some(tower) = &self.embed_tower {
            for (g, &on) in g2.data.iter_mut().zip(&out.masks[nb]) {
                if !on {
                    *g = 0.0;
                }
            }
            let (gw, gb) = param_slices(&mut grad, offsets[nb + 1], tower);
            g2 = tower
                .backward(feat, &g2, gw, gb, true)?
                .expect("input gradient requested");
        }
        for (a, b) in g_feat.data.iter_mut().zip(&g2.data) {
            *a += b;
        }

        for k in (0..nb).rev() {
            for (g, &on) in g_feat.data.iter_mut().zip(&out.masks[k]) {
                if !on {
                    *g = 0.0;
                }
            }
            let (gw, gb) = param_slices(&mut grad, offsets[k], &self.blocks[k]);
            if let Some(n) = self.blocks[k].backward(&out.activations[k], &g_feat, gw, gb, k > 0)? {
                g_feat = n;
            }
        }
        Ok(grad)
    }
}
