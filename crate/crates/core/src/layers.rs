//! Differentiable layers shared by both branches: linear, 2-D convolution
//! (im2col + matmul), max pooling, activations, dropout, layer normalization,
//! and the numerically stable softmax.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::init;
use crate::scalar::Scalar;
use crate::tensor::{custom_op, gather_op, unary_op, GradStore, Tensor, GATHER_PAD};

/// Per-forward-pass context: train/eval switch plus the seeded random source
/// dropout draws from in train mode.
pub struct ForwardCtx<'a> {
    train: bool,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> ForwardCtx<'static> {
        ForwardCtx {
            train: false,
            rng: None,
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> ForwardCtx<'a> {
        ForwardCtx {
            train: true,
            rng: Some(rng),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }
}

// ---------------------------------------------------------------------------
// activations

/// max(0, x); the subgradient at 0 is taken as 0.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary_op(
        "relu",
        x,
        |v| if v > T::zero() { v } else { T::zero() },
        |v, _| if v > T::zero() { T::one() } else { T::zero() },
    )
}

/// Gaussian error linear unit, tanh approximation.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = T::of_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::of_f64(0.044715);
    let half = T::of_f64(0.5);
    let three = T::of_f64(3.0);
    unary_op(
        "gelu",
        x,
        move |v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()),
        move |v, _| {
            let t = (c * (v + a * v * v * v)).tanh();
            let du = c * (T::one() + three * a * v * v);
            half * (T::one() + t) + half * v * (T::one() - t * t) * du
        },
    )
}

/// Row-wise softmax over the last axis, computed with max subtraction so
/// entries of magnitude 1e3 neither overflow nor underflow the row sum.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let cols = *x.shape().last().unwrap_or(&1);
    let cols = cols.max(1);
    let data = x.data();
    let mut out = vec![T::zero(); data.len()];
    for (row_in, row_out) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row_in.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            *o = (v - max).exp();
            sum = sum + *o;
        }
        for o in row_out.iter_mut() {
            *o = *o / sum;
        }
    }
    drop(data);

    let probs = out.clone();
    let input = x.clone();
    let backward = move |grad: &[T], store: &mut GradStore<T>| {
        // dx_i = p_i * (g_i - sum_j g_j p_j), row by row
        let mut d = vec![T::zero(); grad.len()];
        for r in 0..grad.len() / cols {
            let base = r * cols;
            let mut dot = T::zero();
            for c in 0..cols {
                dot = dot + grad[base + c] * probs[base + c];
            }
            for c in 0..cols {
                d[base + c] = probs[base + c] * (grad[base + c] - dot);
            }
        }
        store.accumulate(&input, &d);
    };
    custom_op("softmax", x.shape().to_vec(), out, &[x], backward)
}

// ---------------------------------------------------------------------------
// linear

/// Fully connected layer: `y = x Wᵀ + b` with weight shape `[out, in]`.
pub struct LinearLayer<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        LinearLayer {
            weight: init::kaiming_uniform(vec![out_features, in_features], in_features, rng),
            bias: init::zeros_param(vec![out_features]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Applies to the last axis of any rank >= 1 input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = x.shape().to_vec();
        let last = *shape.last().ok_or_else(|| {
            CoreError::config("linear layer input must have at least one axis")
        })?;
        if last != self.in_features() {
            return Err(CoreError::ShapeMismatch {
                op: "linear",
                lhs: shape,
                rhs: self.weight.shape().to_vec(),
            });
        }
        let rows = x.numel() / last;
        let flat = x.reshape(vec![rows, last])?;
        let wt = self.weight.transpose(0, 1)?;
        let out = flat.matmul(&wt)?.add(&self.bias)?;
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = self.out_features();
        out.reshape(out_shape)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        vec![
            (format!("{prefix}.weight"), self.weight.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }
}

// ---------------------------------------------------------------------------
// convolution

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial extent ceil(in/stride); zero padding split evenly,
    /// extra on the bottom/right. Preserves extent when stride is 1.
    Same,
    /// No padding; output extent (in - kernel)/stride + 1.
    Valid,
}

pub struct Conv2dLayer<T: Scalar> {
    /// `[out_channels, in_channels, kh, kw]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2dLayer {
            weight: init::kaiming_uniform(
                vec![out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: init::zeros_param(vec![out_channels]),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// `[B, C, H, W] -> [B, out_channels, H', W']`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = x.shape();
        if dims.len() != 4 {
            return Err(CoreError::config(format!(
                "conv2d expects a [B,C,H,W] input, got {dims:?}"
            )));
        }
        let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        if c != self.in_channels() {
            return Err(CoreError::ShapeMismatch {
                op: "conv2d channels",
                lhs: dims.to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let (kh, kw) = self.kernel();
        let stride = self.stride.max(1);
        let (oh, ow, pad_top, pad_left) = match self.padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(CoreError::config(format!(
                        "conv2d kernel {kh}x{kw} larger than input {h}x{w} under valid padding"
                    )));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };

        // im2col: rows index (b, oh, ow), columns index (c, kh, kw)
        let ckk = c * kh * kw;
        let mut map = Vec::with_capacity(b * oh * ow * ckk);
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad_top as isize;
                                let ix = (ox * stride + kx) as isize - pad_left as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    map.push(
                                        ((bi * c + ci) * h + iy as usize) * w + ix as usize,
                                    );
                                } else {
                                    map.push(GATHER_PAD);
                                }
                            }
                        }
                    }
                }
            }
        }
        let cols = gather_op("im2col", x, vec![b * oh * ow, ckk], Rc::new(map));
        let wmat = self
            .weight
            .reshape(vec![self.out_channels(), ckk])?
            .transpose(0, 1)?;
        let out = cols.matmul(&wmat)?; // [B*OH*OW, OC]
        let out = out
            .reshape(vec![b, oh, ow, self.out_channels()])?
            .transpose(1, 3)? // [B, OC, OW, OH]
            .transpose(2, 3)?; // [B, OC, OH, OW]
        out.add(&self.bias.reshape(vec![self.out_channels(), 1, 1])?)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        vec![
            (format!("{prefix}.weight"), self.weight.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }
}

// ---------------------------------------------------------------------------
// pooling

/// Max pooling with square window `k` and the given stride. Backward routes
/// each window's gradient to the first maximal element in row-major window
/// order.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let dims = x.shape();
    if dims.len() != 4 {
        return Err(CoreError::config(format!(
            "maxpool2d expects a [B,C,H,W] input, got {dims:?}"
        )));
    }
    let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    if h < k || w < k {
        return Err(CoreError::config(format!(
            "maxpool2d window {k}x{k} exceeds input {h}x{w}"
        )));
    }
    let stride = stride.max(1);
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut map = Vec::with_capacity(b * c * oh * ow);
    {
        let data = x.data();
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = plane + (oy * stride) * w + ox * stride;
                        let mut best = data[best_idx];
                        for ky in 0..k {
                            for kx in 0..k {
                                let idx = plane + (oy * stride + ky) * w + (ox * stride + kx);
                                if data[idx] > best {
                                    best = data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        map.push(best_idx);
                    }
                }
            }
        }
    }
    Ok(gather_op(
        "maxpool2d",
        x,
        vec![b, c, oh, ow],
        Rc::new(map),
    ))
}

/// Max pooling onto a fixed output extent; window `i` spans
/// `[floor(i*H/out), ceil((i+1)*H/out))`. Used to equalize feature-map
/// extents before channel merging when parallel backbones disagree.
pub fn adaptive_maxpool2d<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let dims = x.shape();
    if dims.len() != 4 {
        return Err(CoreError::config(format!(
            "adaptive_maxpool2d expects a [B,C,H,W] input, got {dims:?}"
        )));
    }
    let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(CoreError::config(format!(
            "adaptive_maxpool2d target {out_h}x{out_w} invalid for input {h}x{w}"
        )));
    }
    let mut map = Vec::with_capacity(b * c * out_h * out_w);
    {
        let data = x.data();
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                for oy in 0..out_h {
                    let y0 = oy * h / out_h;
                    let y1 = ((oy + 1) * h).div_ceil(out_h);
                    for ox in 0..out_w {
                        let x0 = ox * w / out_w;
                        let x1 = ((ox + 1) * w).div_ceil(out_w);
                        let mut best_idx = plane + y0 * w + x0;
                        let mut best = data[best_idx];
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                let idx = plane + y * w + xx;
                                if data[idx] > best {
                                    best = data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        map.push(best_idx);
                    }
                }
            }
        }
    }
    Ok(gather_op(
        "adaptive_maxpool2d",
        x,
        vec![b, c, out_h, out_w],
        Rc::new(map),
    ))
}

// ---------------------------------------------------------------------------
// dropout

/// Inverted dropout: each element is zeroed independently with probability
/// `rate` and survivors are scaled by 1/(1-rate), so the expected value of
/// the train-mode output equals the input. Eval mode is the identity.
pub struct DropoutLayer {
    rate: f64,
}

impl DropoutLayer {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(CoreError::config(format!(
                "dropout rate must lie in [0,1), got {rate}"
            )));
        }
        Ok(DropoutLayer { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        if !ctx.train || self.rate == 0.0 {
            return Ok(x.clone());
        }
        let rng = ctx.rng.as_deref_mut().ok_or_else(|| {
            CoreError::config("dropout in train mode requires a seeded random source")
        })?;
        let keep_scale = T::of_f64(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let mask = Tensor::from_vec(x.shape().to_vec(), mask)?;
        x.mul(&mask)
    }
}

// ---------------------------------------------------------------------------
// layer normalization

/// Normalizes over the last axis to zero mean and unit variance, then applies
/// a learnable scale and shift.
pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: init::ones_param(vec![dim]),
            beta: init::zeros_param(vec![dim]),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let dim = self.gamma.numel();
        let last = *x.shape().last().unwrap_or(&0);
        if last != dim {
            return Err(CoreError::ShapeMismatch {
                op: "layernorm",
                lhs: x.shape().to_vec(),
                rhs: self.gamma.shape().to_vec(),
            });
        }
        let rows = x.numel() / dim;
        let eps = T::of_f64(self.eps);
        let dim_t = T::of_usize(dim);

        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.numel()];
        {
            let data = x.data();
            let gamma = self.gamma.data();
            let beta = self.beta.data();
            for r in 0..rows {
                let row = &data[r * dim..(r + 1) * dim];
                let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dim_t;
                let var = row
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                    / dim_t;
                let inv = T::one() / (var + eps).sqrt();
                inv_std[r] = inv;
                for c in 0..dim {
                    let n = (row[c] - mean) * inv;
                    xhat[r * dim + c] = n;
                    out[r * dim + c] = gamma[c] * n + beta[c];
                }
            }
        }

        let input = x.clone();
        let gamma_t = self.gamma.clone();
        let beta_t = self.beta.clone();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            let g = gamma_t.data().clone();
            let mut d_x = vec![T::zero(); grad.len()];
            let mut d_gamma = vec![T::zero(); dim];
            let mut d_beta = vec![T::zero(); dim];
            for r in 0..rows {
                let base = r * dim;
                let mut mean_dxhat = T::zero();
                let mut mean_dxhat_xhat = T::zero();
                for c in 0..dim {
                    let go = grad[base + c];
                    d_beta[c] = d_beta[c] + go;
                    d_gamma[c] = d_gamma[c] + go * xhat[base + c];
                    let dxhat = go * g[c];
                    mean_dxhat = mean_dxhat + dxhat;
                    mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat[base + c];
                }
                mean_dxhat = mean_dxhat / dim_t;
                mean_dxhat_xhat = mean_dxhat_xhat / dim_t;
                for c in 0..dim {
                    let dxhat = grad[base + c] * g[c];
                    d_x[base + c] =
                        inv_std[r] * (dxhat - mean_dxhat - xhat[base + c] * mean_dxhat_xhat);
                }
            }
            store.accumulate(&input, &d_x);
            store.accumulate(&gamma_t, &d_gamma);
            store.accumulate(&beta_t, &d_beta);
        };
        Ok(custom_op(
            "layernorm",
            x.shape().to_vec(),
            out,
            &[x, &self.gamma, &self.beta],
            backward,
        ))
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        vec![
            (format!("{prefix}.gamma"), self.gamma.clone()),
            (format!("{prefix}.beta"), self.beta.clone()),
        ]
    }
}
