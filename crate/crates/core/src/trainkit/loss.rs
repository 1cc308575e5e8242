/// Switch point between the quadratic and linear pieces of smooth-L1.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Smooth-L1 value and derivative: `0.5 x^2 / beta` for `|x| < beta`,
/// `|x| - 0.5 beta` beyond.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    let a = x.abs();
    if a < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (a - 0.5 * beta, x.signum())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, with its derivative in the logit.
pub fn bce_with_logits(z: f64, target: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - target)
}
