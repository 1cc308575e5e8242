//! Axis-aligned box arithmetic, anchor generation and box-regression coding.
//!
//! Boxes use corner coordinates `(x1, y1, x2, y2)` in pixels with real-valued
//! edges. COCO `[x, y, w, h]` boxes are converted at the I/O boundary.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Axis-aligned rectangle in corner convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Validating constructor: all coordinates finite, `x2 >= x1`, `y2 >= y1`.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// COCO `[x, y, w, h]` to corners, with negative extents clamped to zero.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w.max(0.0), y + h.max(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let c = [self.x1, self.y1, self.x2, self.y2];
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("box {self:?}")));
        }
        if self.x2 < self.x1 || self.y2 < self.y1 {
            return Err(invalid(format!("box has negative extent: {self:?}")));
        }
        Ok(())
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clip to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }
}

/// Intersection over union. Zero when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Anchor layout for one feature level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorSpec {
    pub base_size: f64,
    pub scales: Vec<f64>,
    /// Height over width.
    pub ratios: Vec<f64>,
    pub stride: u32,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            base_size: 16.0,
            scales: vec![8.0, 16.0, 32.0],
            ratios: vec![0.5, 1.0, 2.0],
            stride: 16,
        }
    }
}

impl AnchorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.ratios.is_empty() {
            return Err(invalid("anchor scales and ratios must be non-empty"));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.scales.iter().all(positive) || !self.ratios.iter().all(positive) {
            return Err(invalid("anchor scales and ratios must be positive"));
        }
        if !positive(&self.base_size) {
            return Err(invalid("anchor base_size must be positive"));
        }
        if self.stride == 0 {
            return Err(invalid("anchor stride must be positive"));
        }
        Ok(())
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// Anchors for a `feat_h x feat_w` map, ordered row-major, then scale, then ratio.
pub fn generate_anchors(spec: &AnchorSpec, feat_h: usize, feat_w: usize) -> Result<Vec<BBox>> {
    spec.validate()?;
    if feat_h == 0 || feat_w == 0 {
        return Err(invalid(format!(
            "feature map must be at least 1x1, got {feat_h}x{feat_w}"
        )));
    }
    // Per-cell offsets relative to the cell center.
    let mut shapes = Vec::with_capacity(spec.anchors_per_cell());
    for &scale in &spec.scales {
        let side = spec.base_size * scale;
        for &ratio in &spec.ratios {
            let w = side / ratio.sqrt();
            let h = side * ratio.sqrt();
            shapes.push((0.5 * w, 0.5 * h));
        }
    }
    let stride = spec.stride as f64;
    let mut out = Vec::with_capacity(feat_h * feat_w * shapes.len());
    for row in 0..feat_h {
        let cy = (row as f64 + 0.5) * stride;
        for col in 0..feat_w {
            let cx = (col as f64 + 0.5) * stride;
            for &(hw, hh) in &shapes {
                out.push(BBox {
                    x1: cx - hw,
                    y1: cy - hh,
                    x2: cx + hw,
                    y2: cy + hh,
                });
            }
        }
    }
    Ok(out)
}

/// Regression target of a box relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub fn is_finite(&self) -> bool {
        self.tx.is_finite() && self.ty.is_finite() && self.tw.is_finite() && self.th.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxDelta {
            tx: a[0],
            ty: a[1],
            tw: a[2],
            th: a[3],
        }
    }
}

/// Largest log size ratio applied when decoding, so that `exp` cannot overflow.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Center-offset / log-size box coder with per-coordinate weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCoder {
    pub weights: [f64; 4],
}

impl Default for BoxCoder {
    fn default() -> Self {
        BoxCoder { weights: [1.0; 4] }
    }
}

fn check_anchor(anchor: &BBox) -> Result<(f64, f64, f64, f64)> {
    anchor.validate()?;
    let (w, h) = (anchor.width(), anchor.height());
    if w <= 0.0 || h <= 0.0 {
        return Err(invalid(format!("anchor must have positive size: {anchor:?}")));
    }
    let (cx, cy) = anchor.center();
    Ok((cx, cy, w, h))
}

impl BoxCoder {
    pub fn encode(&self, anchor: &BBox, target: &BBox) -> Result<BoxDelta> {
        let (acx, acy, aw, ah) = check_anchor(anchor)?;
        target.validate()?;
        let (tw, th) = (target.width(), target.height());
        if tw <= 0.0 || th <= 0.0 {
            return Err(invalid(format!("target must have positive size: {target:?}")));
        }
        let (tcx, tcy) = target.center();
        let [wx, wy, ww, wh] = self.weights;
        Ok(BoxDelta {
            tx: wx * (tcx - acx) / aw,
            ty: wy * (tcy - acy) / ah,
            tw: ww * (tw / aw).ln(),
            th: wh * (th / ah).ln(),
        })
    }

    /// Inverse of [`BoxCoder::encode`]; clips to `(width, height)` when given.
    pub fn decode(&self, anchor: &BBox, delta: &BoxDelta, bounds: Option<(f64, f64)>) -> Result<BBox> {
        let (acx, acy, aw, ah) = check_anchor(anchor)?;
        if !delta.is_finite() {
            return Err(Error::NonFinite(format!("box delta {delta:?}")));
        }
        let [wx, wy, ww, wh] = self.weights;
        let cx = acx + delta.tx / wx * aw;
        let cy = acy + delta.ty / wy * ah;
        let w = aw * (delta.tw / ww).min(MAX_LOG_SCALE).exp();
        let h = ah * (delta.th / wh).min(MAX_LOG_SCALE).exp();
        let b = BBox {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
        };
        Ok(match bounds {
            Some((bw, bh)) => b.clip(bw, bh),
            None => b,
        })
    }
}

/// Encode with unit weights.
pub fn encode_box(anchor: &BBox, target: &BBox) -> Result<BoxDelta> {
    BoxCoder::default().encode(anchor, target)
}

/// Decode with unit weights.
pub fn decode_box(anchor: &BBox, delta: &BoxDelta, bounds: Option<(f64, f64)>) -> Result<BBox> {
    BoxCoder::default().decode(anchor, delta, bounds)
}
