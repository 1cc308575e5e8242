use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|a - n| / max(1e-12, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Central differences of `f` at `params`, one coordinate at a time.
pub fn numeric_gradient<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("step {eps} must be positive")));
    }
    let mut x = params.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x);
        x[i] = orig - eps;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        g.push((fp - fm) / (2.0 * eps));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate attaining the maximum.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} analytic entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    if let Some(i) = analytic.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("analytic gradient at coordinate {i}")));
    }
    let numeric = numeric_gradient(f, params, eps)?;
    Ok(compare_gradients(analytic, &numeric))
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: numeric.first().copied().unwrap_or(0.0),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        if e > out.max_rel_error {
            out = GradCheck {
                max_rel_error: e,
                worst: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    out
}
