//! Quantization-free ROI feature extraction and its exact adjoint.
//!
//! Feature cell `(i, j)` holds the value at continuous position
//! `(i + 0.5, j + 0.5)` in feature coordinates; sampling is bilinear with
//! zero padding outside the map. Each output bin averages
//! `sampling_ratio^2` samples placed at `(k + 0.5) / n` fractions of the bin.

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Dense `C x H x W` feature grid with its scale relative to the image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Feature pixels per image pixel.
    pub spatial_scale: f64,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
        spatial_scale: f64,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension("feature map dimensions must be >= 1".into()));
        }
        if values.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "expected {} values for {channels}x{height}x{width}, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if !(spatial_scale.is_finite() && spatial_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spatial_scale must be positive, got {spatial_scale}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map value".into()));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            values,
            spatial_scale,
        })
    }

    pub fn shape(&self) -> FeatureShape {
        FeatureShape {
            channels: self.channels,
            height: self.height,
            width: self.width,
            spatial_scale: self.spatial_scale,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }
}

/// Geometry of a feature map without its values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub spatial_scale: f64,
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `C x P x P` pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeatures {
    pub channels: usize,
    pub size: usize,
    pub values: Vec<f64>,
    /// Set when the box had zero area; values are then all zero.
    pub degenerate: bool,
}

impl RoiFeatures {
    pub fn zeros(channels: usize, size: usize) -> Self {
        RoiFeatures {
            channels,
            size,
            values: vec![0.0; channels * size * size],
            degenerate: false,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, py: usize, px: usize) -> f64 {
        self.values[(c * self.size + py) * self.size + px]
    }
}

/// One bilinear tap: flat spatial offset `y * W + x` and its weight.
type Tap = (usize, f64);

/// Interpolation taps for a sample at feature-space position `(y, x)`.
fn bilinear_taps(y: f64, x: f64, height: usize, width: usize, taps: &mut Vec<Tap>) {
    let u = y - 0.5;
    let v = x - 0.5;
    let y0 = u.floor();
    let x0 = v.floor();
    let fy = u - y0;
    let fx = v - x0;
    let (y0, x0) = (y0 as i64, x0 as i64);
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        let yy = y0 + dy;
        if wy == 0.0 || yy < 0 || yy >= height as i64 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let xx = x0 + dx;
            if wx == 0.0 || xx < 0 || xx >= width as i64 {
                continue;
            }
            taps.push((yy as usize * width + xx as usize, wy * wx));
        }
    }
}

/// Validated sampling plan shared by forward and backward.
struct Plan {
    /// For each output bin (row-major), the taps of all its samples, pre-divided
    /// by the sample count.
    bins: Vec<Vec<Tap>>,
    degenerate: bool,
}

fn plan(shape: &FeatureShape, bbox: &BBox, out_size: usize, sampling_ratio: usize) -> Result<Plan> {
    bbox.validate()?;
    if out_size == 0 || sampling_ratio == 0 {
        return Err(Error::InvalidArgument(
            "out_size and sampling_ratio must be >= 1".into(),
        ));
    }
    let s = shape.spatial_scale;
    let (x1, y1) = (bbox.x1 * s, bbox.y1 * s);
    let roi_w = bbox.width() * s;
    let roi_h = bbox.height() * s;
    if roi_w <= 0.0 || roi_h <= 0.0 {
        return Ok(Plan {
            bins: vec![Vec::new(); out_size * out_size],
            degenerate: true,
        });
    }
    let bin_w = roi_w / out_size as f64;
    let bin_h = roi_h / out_size as f64;
    let n = sampling_ratio;
    let norm = 1.0 / (n * n) as f64;
    let mut bins = Vec::with_capacity(out_size * out_size);
    for py in 0..out_size {
        for px in 0..out_size {
            let mut taps = Vec::with_capacity(4 * n * n);
            for iy in 0..n {
                let y = y1 + py as f64 * bin_h + (iy as f64 + 0.5) * bin_h / n as f64;
                for ix in 0..n {
                    let x = x1 + px as f64 * bin_w + (ix as f64 + 0.5) * bin_w / n as f64;
                    bilinear_taps(y, x, shape.height, shape.width, &mut taps);
                }
            }
            for t in &mut taps {
                t.1 *= norm;
            }
            bins.push(taps);
        }
    }
    Ok(Plan {
        bins,
        degenerate: false,
    })
}

/// Pool a `P x P` grid from `fm` inside `bbox` (image coordinates).
pub fn roi_align(
    fm: &FeatureMap,
    bbox: &BBox,
    out_size: usize,
    sampling_ratio: usize,
) -> Result<RoiFeatures> {
    let plan = plan(&fm.shape(), bbox, out_size, sampling_ratio)?;
    let plane = fm.height * fm.width;
    let bins = out_size * out_size;
    let mut out = RoiFeatures::zeros(fm.channels, out_size);
    out.degenerate = plan.degenerate;
    for c in 0..fm.channels {
        let src = &fm.values[c * plane..(c + 1) * plane];
        let dst = &mut out.values[c * bins..(c + 1) * bins];
        for (b, taps) in plan.bins.iter().enumerate() {
            dst[b] = taps.iter().map(|&(k, w)| w * src[k]).sum();
        }
    }
    Ok(out)
}

/// Adjoint of [`roi_align`]: scatters `grad_out` back onto a map of shape `shape`.
pub fn roi_align_backward(
    grad_out: &RoiFeatures,
    shape: &FeatureShape,
    bbox: &BBox,
    out_size: usize,
    sampling_ratio: usize,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; shape.len()];
    roi_align_backward_into(grad_out, shape, bbox, out_size, sampling_ratio, &mut grad)?;
    Ok(grad)
}

/// Accumulating form of [`roi_align_backward`].
pub fn roi_align_backward_into(
    grad_out: &RoiFeatures,
    shape: &FeatureShape,
    bbox: &BBox,
    out_size: usize,
    sampling_ratio: usize,
    grad: &mut [f64],
) -> Result<()> {
    if grad_out.channels != shape.channels
        || grad_out.size != out_size
        || grad_out.values.len() != shape.channels * out_size * out_size
    {
        return Err(Error::Dimension(format!(
            "upstream gradient is {}x{}x{}, expected {}x{out_size}x{out_size}",
            grad_out.channels, grad_out.size, grad_out.size, shape.channels
        )));
    }
    if grad.len() != shape.len() {
        return Err(Error::Dimension(format!(
            "gradient buffer has {} entries, expected {}",
            grad.len(),
            shape.len()
        )));
    }
    let plan = plan(shape, bbox, out_size, sampling_ratio)?;
    let plane = shape.height * shape.width;
    let bins = out_size * out_size;
    for c in 0..shape.channels {
        let up = &grad_out.values[c * bins..(c + 1) * bins];
        let dst = &mut grad[c * plane..(c + 1) * plane];
        for (b, taps) in plan.bins.iter().enumerate() {
            let g = up[b];
            if g == 0.0 {
                continue;
            }
            for &(k, w) in taps {
                dst[k] += w * g;
            }
        }
    }
    Ok(())
}
