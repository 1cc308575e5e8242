//! Continuous surface embeddings.
//!
//! Every mesh vertex `X` carries a learnable row `e_X` of the embedding matrix.
//! A pixel with network embedding `psi` gets the vertex posterior
//!
//! ```text
//! p(X | psi) = exp(s_X) / sum_Y exp(s_Y),   s_X = -|e_X - psi|^2
//! ```
//!
//! where the surface integral of the normalizer is discretized as an
//! unweighted sum over vertices. Training minimizes the mean negative
//! log-posterior of the ground-truth vertex.

mod mesh;

pub use mesh::{geodesic_distances, Mesh};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How a vertex embedding is compared with a pixel embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `-|e_X - psi|^2`
    #[default]
    NegSquaredDistance,
    /// `e_X . psi`
    Dot,
}

/// `V x D` table of per-vertex embeddings, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    vertices: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(vertices: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if vertices == 0 || dim == 0 {
            return Err(Error::Dimension("embedding matrix must be at least 1x1".into()));
        }
        if data.len() != vertices * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries for {vertices}x{dim}, got {}",
                vertices * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix entry".into()));
        }
        Ok(EmbeddingMatrix { vertices, dim, data })
    }

    /// I.i.d. uniform entries in `[-0.1, 0.1]` from a seeded generator.
    pub fn init_uniform(vertices: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..vertices * dim).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        EmbeddingMatrix::new(vertices, dim, data)
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `D x P x P` per-pixel embeddings over an ROI grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelEmbeddingField {
    pub dim: usize,
    pub size: usize,
    pub values: Vec<f64>,
}

impl PixelEmbeddingField {
    pub fn new(dim: usize, size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * size * size {
            return Err(Error::Dimension(format!(
                "expected {} values for {dim}x{size}x{size}, got {}",
                dim * size * size,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pixel embedding".into()));
        }
        Ok(PixelEmbeddingField { dim, size, values })
    }

    /// Embedding vector at grid cell `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        let plane = self.size * self.size;
        let at = row * self.size + col;
        (0..self.dim).map(|d| self.values[d * plane + at]).collect()
    }
}

/// Supervision triplet: a pixel, its ground-truth vertex and the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceSample {
    pub row: usize,
    pub col: usize,
    pub gt_vertex: usize,
    pub image_id: u64,
}

fn scores_into(e: &EmbeddingMatrix, psi: &[f64], kind: ScoreKind, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..e.vertices).map(|v| {
        let row = e.row(v);
        match kind {
            ScoreKind::NegSquaredDistance => -row
                .iter()
                .zip(psi)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>(),
            ScoreKind::Dot => row.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>(),
        }
    }));
}

/// In-place max-subtracted softmax; returns `log(sum(exp(s - max)))` and the max.
fn softmax_in_place(s: &mut [f64]) -> (f64, f64) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in s.iter_mut() {
        *v /= total;
    }
    (total.ln(), max)
}

/// Posterior over mesh vertices for one pixel embedding.
pub fn vertex_posterior(e: &EmbeddingMatrix, psi: &[f64]) -> Result<Vec<f64>> {
    vertex_posterior_with(e, psi, ScoreKind::default())
}

pub fn vertex_posterior_with(e: &EmbeddingMatrix, psi: &[f64], kind: ScoreKind) -> Result<Vec<f64>> {
    if psi.len() != e.dim {
        return Err(Error::Dimension(format!(
            "pixel embedding has {} dims, matrix has {}",
            psi.len(),
            e.dim
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pixel embedding".into()));
    }
    let mut p = Vec::with_capacity(e.vertices);
    scores_into(e, psi, kind, &mut p);
    softmax_in_place(&mut p);
    Ok(p)
}

/// Loss value with gradients for both the embedding matrix and the field.
#[derive(Debug, Clone, PartialEq)]
pub struct CseLoss {
    pub loss: f64,
    /// Same layout as [`EmbeddingMatrix::as_slice`].
    pub grad_embedding: Vec<f64>,
    /// Same layout as [`PixelEmbeddingField::values`].
    pub grad_field: Vec<f64>,
}

/// Mean negative log-posterior of the ground-truth vertices.
pub fn cse_loss(
    e: &EmbeddingMatrix,
    field: &PixelEmbeddingField,
    samples: &[CorrespondenceSample],
) -> Result<CseLoss> {
    cse_loss_with(e, field, samples, ScoreKind::default())
}

pub fn cse_loss_with(
    e: &EmbeddingMatrix,
    field: &PixelEmbeddingField,
    samples: &[CorrespondenceSample],
    kind: ScoreKind,
) -> Result<CseLoss> {
    let mut grad_embedding = vec![0.0; e.data.len()];
    let mut grad_field = vec![0.0; field.values.len()];
    let loss = cse_loss_accumulate(e, field, samples, kind, 1.0, &mut grad_embedding, &mut grad_field)?;
    Ok(CseLoss {
        loss,
        grad_embedding,
        grad_field,
    })
}

/// Adds `weight * d(loss)` into caller-owned gradient buffers and returns the
/// unweighted loss.
pub fn cse_loss_accumulate(
    e: &EmbeddingMatrix,
    field: &PixelEmbeddingField,
    samples: &[CorrespondenceSample],
    kind: ScoreKind,
    weight: f64,
    grad_embedding: &mut [f64],
    grad_field: &mut [f64],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("correspondence loss needs at least one sample"));
    }
    if field.dim != e.dim {
        return Err(Error::Dimension(format!(
            "field has {} channels, embedding matrix has {}",
            field.dim, e.dim
        )));
    }
    if grad_embedding.len() != e.data.len() || grad_field.len() != field.values.len() {
        return Err(Error::Dimension("gradient buffers do not match inputs".into()));
    }
    for (k, s) in samples.iter().enumerate() {
        if s.gt_vertex >= e.vertices {
            return Err(invalid(format!(
                "sample {k}: vertex {} out of range for {} vertices",
                s.gt_vertex, e.vertices
            )));
        }
        if s.row >= field.size || s.col >= field.size {
            return Err(invalid(format!(
                "sample {k}: pixel ({}, {}) outside {}x{} grid",
                s.row, s.col, field.size, field.size
            )));
        }
    }

    let n = samples.len() as f64;
    let scale = weight / n;
    let plane = field.size * field.size;
    let dim = e.dim;
    let mut total = 0.0;
    let mut p = Vec::with_capacity(e.vertices);
    let mut grad_psi = vec![0.0; dim];
    for s in samples {
        let at = s.row * field.size + s.col;
        let psi: Vec<f64> = (0..dim).map(|d| field.values[d * plane + at]).collect();
        scores_into(e, &psi, kind, &mut p);
        let gt_score = p[s.gt_vertex];
        let (log_z, max) = softmax_in_place(&mut p);
        total -= gt_score - max - log_z;

        // d(-log p_k)/d s_X = p_X - [X == k]
        grad_psi.iter_mut().for_each(|g| *g = 0.0);
        for v in 0..e.vertices {
            let coef = p[v] - if v == s.gt_vertex { 1.0 } else { 0.0 };
            if coef == 0.0 {
                continue;
            }
            let row = e.row(v);
            let grow = &mut grad_embedding[v * dim..(v + 1) * dim];
            match kind {
                ScoreKind::NegSquaredDistance => {
                    for d in 0..dim {
                        let diff = row[d] - psi[d];
                        grow[d] -= scale * coef * 2.0 * diff;
                        grad_psi[d] += coef * 2.0 * diff;
                    }
                }
                ScoreKind::Dot => {
                    for d in 0..dim {
                        grow[d] += scale * coef * psi[d];
                        grad_psi[d] += coef * row[d];
                    }
                }
            }
        }
        for d in 0..dim {
            grad_field[d * plane + at] += scale * grad_psi[d];
        }
    }
    Ok(total / n)
}

/// Expected geodesic distance between the posterior and the ground-truth vertex.
pub fn expected_geodesic_error(posterior: &[f64], gt_vertex: usize, mesh: &Mesh) -> Result<f64> {
    let v = mesh.vertex_count();
    if posterior.len() != v {
        return Err(Error::Dimension(format!(
            "posterior has {} entries, mesh has {v} vertices",
            posterior.len()
        )));
    }
    if posterior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid("posterior entries must be finite and non-negative"));
    }
    let sum: f64 = posterior.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("posterior sums to {sum}, not 1")));
    }
    let dist = geodesic_distances(mesh, gt_vertex)?;
    Ok(posterior.iter().zip(&dist).map(|(p, d)| p * d).sum())
}
