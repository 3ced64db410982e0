//! Classical layers with explicit forward and reverse rules.
//!
//! Each layer owns its parameters, gradient accumulators, and whatever
//! forward-pass state its backward rule needs. Batch work parallelizes over
//! samples (or output channels for weight gradients) with all floating-point
//! reductions running in a fixed order, so results are bit-reproducible.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Forward-pass mode; batch normalization behaves differently in the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Mutable view of one trainable tensor and its gradient accumulator.
pub struct ParamBinding<'a> {
    pub name: String,
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
}

/// Read-only named tensor; `trainable` distinguishes parameters from
/// buffers such as batch-norm running statistics.
pub struct NamedTensor<'a> {
    pub name: String,
    pub value: &'a Tensor,
    pub trainable: bool,
}

fn missing_cache(layer: &str) -> Error {
    Error::Config(format!("{layer}: backward called without a cached training forward pass"))
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2-D cross-correlation with stride and zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub grad_weight: Tensor,
    pub grad_bias: Option<Tensor>,
    cached_input: Option<Tensor>,
}

/// Valid output range for one kernel offset: all `o` with
/// 0 ≤ o·stride + k_off − pad < in_len.
fn conv_range(out_len: usize, in_len: usize, k_off: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k_off >= pad { 0 } else { (pad - k_off).div_ceil(stride) };
    let top = in_len as isize - 1 + pad as isize - k_off as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
    ) -> Self {
        let weight = Tensor::zeros(&[out_channels, in_channels, kernel, kernel]);
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            grad_weight: Tensor::zeros(weight.shape()),
            weight,
            bias: with_bias.then(|| Tensor::zeros(&[out_channels])),
            grad_bias: with_bias.then(|| Tensor::zeros(&[out_channels])),
            cached_input: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let padded_h = h + 2 * self.padding;
        let padded_w = w + 2 * self.padding;
        if padded_h < self.kernel || padded_w < self.kernel {
            return Err(Error::Shape(format!(
                "{h}×{w} input with padding {} cannot fit a {}×{} kernel",
                self.padding, self.kernel, self.kernel
            )));
        }
        Ok((
            (padded_h - self.kernel) / self.stride + 1,
            (padded_w - self.kernel) / self.stride + 1,
        ))
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        let (cout, k, s, p) = (self.out_channels, self.kernel, self.stride, self.padding);
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        let isz = c * h * w;
        let osz = cout * oh * ow;
        let weight = self.weight.data();
        let bias = self.bias.as_ref().map(|b| b.data());

        out.data_mut()
            .par_chunks_mut(osz)
            .zip(input.data().par_chunks(isz))
            .for_each(|(o, x)| {
                for co in 0..cout {
                    let oplane = &mut o[co * oh * ow..(co + 1) * oh * ow];
                    oplane.fill(bias.map_or(0.0, |b| b[co]));
                    for ci in 0..c {
                        let xplane = &x[ci * h * w..(ci + 1) * h * w];
                        for ky in 0..k {
                            let (oy_lo, oy_hi) = conv_range(oh, h, ky, s, p);
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                let xrow = &xplane[iy * w..(iy + 1) * w];
                                for kx in 0..k {
                                    let wgt = weight[((co * c + ci) * k + ky) * k + kx];
                                    let (ox_lo, ox_hi) = conv_range(ow, w, kx, s, p);
                                    for ox in ox_lo..ox_hi {
                                        oplane[oy * ow + ox] += wgt * xrow[ox * s + kx - p];
                                    }
                                }
                            }
                        }
                    }
                }
            });

        if mode == Mode::Train {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.take().ok_or_else(|| missing_cache("conv2d"))?;
        let (n, c, h, w) = input.dims4()?;
        let (gn, cout, oh, ow) = grad_out.dims4()?;
        if gn != n || cout != self.out_channels {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match conv output",
                grad_out.shape()
            )));
        }
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let isz = c * h * w;
        let osz = cout * oh * ow;
        let weight = self.weight.data();

        // Input cotangent, sample-parallel.
        let mut grad_in = Tensor::zeros(input.shape());
        grad_in
            .data_mut()
            .par_chunks_mut(isz)
            .zip(grad_out.data().par_chunks(osz))
            .for_each(|(dx, g)| {
                for co in 0..cout {
                    let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
                    for ci in 0..c {
                        let dxplane = &mut dx[ci * h * w..(ci + 1) * h * w];
                        for ky in 0..k {
                            let (oy_lo, oy_hi) = conv_range(oh, h, ky, s, p);
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                for kx in 0..k {
                                    let wgt = weight[((co * c + ci) * k + ky) * k + kx];
                                    let (ox_lo, ox_hi) = conv_range(ow, w, kx, s, p);
                                    for ox in ox_lo..ox_hi {
                                        dxplane[iy * w + ox * s + kx - p] +=
                                            wgt * gplane[oy * ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            });

        // Weight (and bias) gradients, output-channel-parallel with samples
        // accumulated in order.
        let x = input.data();
        let g = grad_out.data();
        let per_co = c * k * k;
        let bias_grads: Vec<f64> = self
            .grad_weight
            .data_mut()
            .par_chunks_mut(per_co)
            .enumerate()
            .map(|(co, gw)| {
                let mut gb = 0.0;
                for sample in 0..n {
                    let gplane = &g[sample * osz + co * oh * ow..][..oh * ow];
                    for ci in 0..c {
                        let xplane = &x[sample * isz + ci * h * w..][..h * w];
                        for ky in 0..k {
                            let (oy_lo, oy_hi) = conv_range(oh, h, ky, s, p);
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                let grow = &gplane[oy * ow..(oy + 1) * ow];
                                let xrow = &xplane[iy * w..(iy + 1) * w];
                                for kx in 0..k {
                                    let (ox_lo, ox_hi) = conv_range(ow, w, kx, s, p);
                                    let mut acc = 0.0;
                                    for ox in ox_lo..ox_hi {
                                        acc += grow[ox] * xrow[ox * s + kx - p];
                                    }
                                    gw[(ci * k + ky) * k + kx] += acc;
                                }
                            }
                        }
                    }
                    gb += gplane.iter().sum::<f64>();
                }
                gb
            })
            .collect();
        if let Some(grad_bias) = self.grad_bias.as_mut() {
            for (dst, src) in grad_bias.data_mut().iter_mut().zip(bias_grads) {
                *dst += src;
            }
        }
        Ok(grad_in)
    }

    pub fn bindings(&mut self, prefix: &str) -> Vec<ParamBinding<'_>> {
        let mut out = vec![ParamBinding {
            name: format!("{prefix}.weight"),
            value: &mut self.weight,
            grad: &mut self.grad_weight,
        }];
        if let (Some(bias), Some(grad)) = (self.bias.as_mut(), self.grad_bias.as_mut()) {
            out.push(ParamBinding { name: format!("{prefix}.bias"), value: bias, grad });
        }
        out
    }

    pub fn tensors(&self, prefix: &str) -> Vec<NamedTensor<'_>> {
        let mut out = vec![NamedTensor {
            name: format!("{prefix}.weight"),
            value: &self.weight,
            trainable: true,
        }];
        if let Some(bias) = self.bias.as_ref() {
            out.push(NamedTensor { name: format!("{prefix}.bias"), value: bias, trainable: true });
        }
        out
    }
}

// ---------------------------------------------------------------------------
// MaxPool2
// ---------------------------------------------------------------------------

/// 2×2 max pooling with stride 2. Requires even spatial dimensions.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cached: Option<(Vec<usize>, Vec<usize>)>, // input shape, argmax indices
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2::default()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = input.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "max pooling needs even spatial dims, got {h}×{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        let x = input.data();
        let o = out.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            let obase = plane * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = base + (oy * 2 + dy) * w + ox * 2 + dx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    o[obase + oy * ow + ox] = best;
                    argmax[obase + oy * ow + ox] = best_idx;
                }
            }
        }
        if mode == Mode::Train {
            self.cached = Some((input.shape().to_vec(), argmax));
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, argmax) = self.cached.take().ok_or_else(|| missing_cache("maxpool2"))?;
        let mut grad_in = Tensor::zeros(&shape);
        let dx = grad_in.data_mut();
        for (g, &idx) in grad_out.data().iter().zip(&argmax) {
            dx[idx] += g;
        }
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

/// Per-channel batch normalization with learned affine, for (N, C) or
/// (N, C, H, W) activations. Training uses batch statistics and updates the
/// running estimates used in eval mode.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(1.0);
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.fill(1.0);
        BatchNorm {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma,
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            cache: None,
        }
    }

    /// (batch, channels, spatial volume per channel).
    fn split(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        match input.shape()[..] {
            [n, c] if c == self.channels => Ok((n, c, 1)),
            [n, c, h, w] if c == self.channels => Ok((n, c, h * w)),
            _ => Err(Error::Shape(format!(
                "batch norm over {} channels cannot take shape {:?}",
                self.channels,
                input.shape()
            ))),
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, spatial) = self.split(input)?;
        let x = input.data();
        let mut out = Tensor::zeros(input.shape());

        if mode == Mode::Eval {
            let o = out.data_mut();
            for ch in 0..c {
                let mean = self.running_mean.data()[ch];
                let inv = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
                let g = self.gamma.data()[ch];
                let b = self.beta.data()[ch];
                for sample in 0..n {
                    let base = (sample * c + ch) * spatial;
                    for i in base..base + spatial {
                        o[i] = g * (x[i] - mean) * inv + b;
                    }
                }
            }
            return Ok(out);
        }

        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch normalization needs at least 2 samples in training mode, got {n}"
            )));
        }
        let m = (n * spatial) as f64;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let o = out.data_mut();
        for ch in 0..c {
            let mut sum = 0.0;
            for sample in 0..n {
                let base = (sample * c + ch) * spatial;
                sum += x[base..base + spatial].iter().sum::<f64>();
            }
            let mean = sum / m;
            let mut var_sum = 0.0;
            for sample in 0..n {
                let base = (sample * c + ch) * spatial;
                for i in base..base + spatial {
                    let d = x[i] - mean;
                    var_sum += d * d;
                }
            }
            let var = var_sum / m;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            let g = self.gamma.data()[ch];
            let b = self.beta.data()[ch];
            for sample in 0..n {
                let base = (sample * c + ch) * spatial;
                for i in base..base + spatial {
                    xhat[i] = (x[i] - mean) * inv;
                    o[i] = g * xhat[i] + b;
                }
            }
            // Running stats keep the unbiased variance estimate.
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * mean;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * unbiased;
        }
        self.cache = Some(BnCache { shape: input.shape().to_vec(), xhat, inv_std });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batch norm"))?;
        if grad_out.shape() != &cache.shape[..] {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match batch-norm input {:?}",
                grad_out.shape(),
                cache.shape
            )));
        }
        let (n, c, spatial) = match cache.shape[..] {
            [n, c] => (n, c, 1),
            [n, c, h, w] => (n, c, h * w),
            _ => unreachable!("cache shape validated in forward"),
        };
        let m = (n * spatial) as f64;
        let g = grad_out.data();
        let mut grad_in = Tensor::zeros(&cache.shape);
        let dx = grad_in.data_mut();

        for ch in 0..c {
            let gamma = self.gamma.data()[ch];
            let inv = cache.inv_std[ch];
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for sample in 0..n {
                let base = (sample * c + ch) * spatial;
                for i in base..base + spatial {
                    sum_g += g[i];
                    sum_gx += g[i] * cache.xhat[i];
                }
            }
            self.grad_beta.data_mut()[ch] += sum_g;
            self.grad_gamma.data_mut()[ch] += sum_gx;
            // dx = γ/√(σ²+ε) · (dy − mean(dy) − x̂·mean(dy·x̂))
            let k1 = gamma * inv;
            for sample in 0..n {
                let base = (sample * c + ch) * spatial;
                for i in base..base + spatial {
                    dx[i] = k1 * (g[i] - sum_g / m - cache.xhat[i] * sum_gx / m);
                }
            }
        }
        Ok(grad_in)
    }

    pub fn bindings(&mut self, prefix: &str) -> Vec<ParamBinding<'_>> {
        vec![
            ParamBinding {
                name: format!("{prefix}.gamma"),
                value: &mut self.gamma,
                grad: &mut self.grad_gamma,
            },
            ParamBinding {
                name: format!("{prefix}.beta"),
                value: &mut self.beta,
                grad: &mut self.grad_beta,
            },
        ]
    }

    pub fn tensors(&self, prefix: &str) -> Vec<NamedTensor<'_>> {
        vec![
            NamedTensor { name: format!("{prefix}.gamma"), value: &self.gamma, trainable: true },
            NamedTensor { name: format!("{prefix}.beta"), value: &self.beta, trainable: true },
            NamedTensor {
                name: format!("{prefix}.running_mean"),
                value: &self.running_mean,
                trainable: false,
            },
            NamedTensor {
                name: format!("{prefix}.running_var"),
                value: &self.running_var,
                trainable: false,
            },
        ]
    }
}

// ---------------------------------------------------------------------------
// Dense, ReLU, Flatten
// ---------------------------------------------------------------------------

/// Affine map y = W·x + b with W stored (out_features, in_features).
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Dense {
            in_features,
            out_features,
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
            grad_weight: Tensor::zeros(&[out_features, in_features]),
            grad_bias: Tensor::zeros(&[out_features]),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, f) = input.dims2()?;
        if f != self.in_features {
            return Err(Error::Shape(format!(
                "dense layer expects {} features, got {f}",
                self.in_features
            )));
        }
        let mut out = Tensor::zeros(&[n, self.out_features]);
        let weight = self.weight.data();
        let bias = self.bias.data();
        let fin = self.in_features;
        let fout = self.out_features;
        out.data_mut()
            .par_chunks_mut(fout)
            .zip(input.data().par_chunks(fin))
            .for_each(|(o, x)| {
                for j in 0..fout {
                    let row = &weight[j * fin..(j + 1) * fin];
                    o[j] = bias[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                }
            });
        if mode == Mode::Train {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.take().ok_or_else(|| missing_cache("dense"))?;
        let (n, fin) = input.dims2()?;
        let (gn, fout) = grad_out.dims2()?;
        if gn != n || fout != self.out_features {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match dense output",
                grad_out.shape()
            )));
        }
        let weight = self.weight.data();
        let x = input.data();
        let g = grad_out.data();

        let mut grad_in = Tensor::zeros(&[n, fin]);
        grad_in
            .data_mut()
            .par_chunks_mut(fin)
            .zip(g.par_chunks(fout))
            .for_each(|(dx, grow)| {
                for j in 0..fout {
                    let wrow = &weight[j * fin..(j + 1) * fin];
                    let gj = grow[j];
                    for i in 0..fin {
                        dx[i] += gj * wrow[i];
                    }
                }
            });

        self.grad_weight
            .data_mut()
            .par_chunks_mut(fin)
            .enumerate()
            .for_each(|(j, gw)| {
                for sample in 0..n {
                    let gj = g[sample * fout + j];
                    let xrow = &x[sample * fin..(sample + 1) * fin];
                    for i in 0..fin {
                        gw[i] += gj * xrow[i];
                    }
                }
            });
        for j in 0..fout {
            let mut acc = 0.0;
            for sample in 0..n {
                acc += g[sample * fout + j];
            }
            self.grad_bias.data_mut()[j] += acc;
        }
        Ok(grad_in)
    }

    pub fn bindings(&mut self, prefix: &str) -> Vec<ParamBinding<'_>> {
        vec![
            ParamBinding {
                name: format!("{prefix}.weight"),
                value: &mut self.weight,
                grad: &mut self.grad_weight,
            },
            ParamBinding {
                name: format!("{prefix}.bias"),
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }

    pub fn tensors(&self, prefix: &str) -> Vec<NamedTensor<'_>> {
        vec![
            NamedTensor { name: format!("{prefix}.weight"), value: &self.weight, trainable: true },
            NamedTensor { name: format!("{prefix}.bias"), value: &self.bias, trainable: true },
        ]
    }
}

/// Elementwise max(0, x).
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cached_input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut out = input.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if mode == Mode::Train {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.take().ok_or_else(|| missing_cache("relu"))?;
        let mut grad_in = grad_out.clone();
        for (g, &x) in grad_in.data_mut().iter_mut().zip(input.data()) {
            if x <= 0.0 {
                *g = 0.0;
            }
        }
        Ok(grad_in)
    }
}

/// Collapses all non-batch axes into one.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cached_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten::default()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Train {
            self.cached_shape = Some(input.shape().to_vec());
        }
        input.reshape(&[input.batch(), input.sample_len()])
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self.cached_shape.take().ok_or_else(|| missing_cache("flatten"))?;
        grad_out.reshape(&shape)
    }
}
