use crate::error::{Error, Result};

/// Dense `C x H x W` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{channels}x{height}x{width} tensor needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Square convolution with zero padding `kernel / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `out x in x k x k`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output indices `o` in `0..out` with `o * stride + k - pad` inside `0..len`.
fn valid_range(out: usize, len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k {
        ((len - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let p = 2 * self.pad();
        (
            (height + p - self.kernel) / self.stride + 1,
            (width + p - self.kernel) / self.stride + 1,
        )
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels != self.in_channels {
            return Err(Error::Dimension(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        if x.height + 2 * self.pad() < self.kernel || x.width + 2 * self.pad() < self.kernel {
            return Err(Error::Dimension("input smaller than the kernel".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (oh, ow) = self.output_size(x.height, x.width);
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for o in 0..self.out_channels {
            let dst = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = &x.data[i * x.plane()..(i + 1) * x.plane()];
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(oh, x.height, ky, p, s);
                    for kx in 0..k {
                        let w = self.weight[((o * self.in_channels + i) * k + ky) * k + kx];
                        let (x_lo, x_hi) = valid_range(ow, x.width, kx, p, s);
                        for oy in y_lo..y_hi {
                            let row = (oy * s + ky - p) * x.width;
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            for ox in x_lo..x_hi {
                                drow[ox] += w * src[row + ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates weight and bias gradients and returns the input gradient
    /// when `need_input` is set.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
        need_input: bool,
    ) -> Result<Option<Tensor>> {
        self.check_input(x)?;
        let (oh, ow) = self.output_size(x.height, x.width);
        if grad_out.channels != self.out_channels || grad_out.height != oh || grad_out.width != ow {
            return Err(Error::Dimension(format!(
                "upstream gradient is {}x{}x{}, expected {}x{oh}x{ow}",
                grad_out.channels, grad_out.height, grad_out.width, self.out_channels
            )));
        }
        if grad_weight.len() != self.weight.len() || grad_bias.len() != self.bias.len() {
            return Err(Error::Dimension("parameter gradient buffers do not match".into()));
        }
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        let mut grad_in = need_input.then(|| Tensor::zeros(x.channels, x.height, x.width));
        for o in 0..self.out_channels {
            let g = &grad_out.data[o * oh * ow..(o + 1) * oh * ow];
            grad_bias[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let src = &x.data[i * x.plane()..(i + 1) * x.plane()];
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(oh, x.height, ky, p, s);
                    for kx in 0..k {
                        let widx = ((o * self.in_channels + i) * k + ky) * k + kx;
                        let (x_lo, x_hi) = valid_range(ow, x.width, kx, p, s);
                        let mut acc = 0.0;
                        for oy in y_lo..y_hi {
                            let row = (oy * s + ky - p) * x.width;
                            for ox in x_lo..x_hi {
                                acc += g[oy * ow + ox] * src[row + ox * s + kx - p];
                            }
                        }
                        grad_weight[widx] += acc;
                        if let Some(gi) = grad_in.as_mut() {
                            let w = self.weight[widx];
                            let dst = &mut gi.data[i * x.plane()..(i + 1) * x.plane()];
                            for oy in y_lo..y_hi {
                                let row = (oy * s + ky - p) * x.width;
                                for ox in x_lo..x_hi {
                                    dst[row + ox * s + kx - p] += w * g[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}
