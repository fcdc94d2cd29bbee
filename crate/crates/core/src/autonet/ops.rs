//! Forward and backward kernels for the fixed layer set.
//!
//! Convolution kernels are laid out `[kh, kw, c_in, c_out]` for both the
//! regular and the transposed convolution; dense weights are `[f_in, f_out]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `ceil(H / stride)`; odd padding puts the extra row/column bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

fn kernel_dims(kernel: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match kernel.shape() {
        &[kh, kw, ci, co] => Ok((kh, kw, ci, co)),
        s => Err(Error::Shape(format!("kernel must be [kh, kw, c_in, c_out], got {s:?}"))),
    }
}

/// Output extent and leading pad for one spatial axis.
fn conv_geometry(len: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if len < k {
                return Err(Error::Shape(format!("input extent {len} smaller than kernel {k}")));
            }
            Ok(((len - k) / stride + 1, 0))
        }
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Ok((out, total / 2))
        }
    }
}

struct ConvPlan {
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    co: usize,
    oh: usize,
    ow: usize,
    pad_t: usize,
    pad_l: usize,
    stride: usize,
}

fn plan_conv(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Result<ConvPlan> {
    let (n, h, w, ci) = input.dims4()?;
    let (kh, kw, kci, co) = kernel_dims(kernel)?;
    if kci != ci {
        return Err(Error::Shape(format!("conv2d kernel expects {kci} input channels, input has {ci}")));
    }
    if bias.len() != co {
        return Err(Error::Shape(format!("conv2d bias has {} values for {co} output channels", bias.len())));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    let (oh, pad_t) = conv_geometry(h, kh, stride, padding)?;
    let (ow, pad_l) = conv_geometry(w, kw, stride, padding)?;
    Ok(ConvPlan { n, h, w, ci, kh, kw, co, oh, ow, pad_t, pad_l, stride })
}

impl ConvPlan {
    /// Input coordinate for an output position and kernel tap, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let p = plan_conv(input, kernel, bias, stride, padding)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; p.n * p.oh * p.ow * p.co];
    for b in 0..p.n {
        for oy in 0..p.oh {
            for ox in 0..p.ow {
                let o = ((b * p.oh + oy) * p.ow + ox) * p.co;
                let acc = &mut out[o..o + p.co];
                acc.copy_from_slice(bias.data());
                for ky in 0..p.kh {
                    let Some(iy) = p.src(oy, ky, p.pad_t, p.h) else { continue };
                    for kx in 0..p.kw {
                        let Some(ix) = p.src(ox, kx, p.pad_l, p.w) else { continue };
                        let xi = ((b * p.h + iy) * p.w + ix) * p.ci;
                        for c in 0..p.ci {
                            let xv = x[xi + c];
                            let kr = ((ky * p.kw + kx) * p.ci + c) * p.co;
                            for (a, kv) in acc.iter_mut().zip(&k[kr..kr + p.co]) {
                                *a += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![p.n, p.oh, p.ow, p.co], out)
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (_, _, _, co) = kernel_dims(kernel)?;
    let p = plan_conv(input, kernel, &Tensor::zeros(&[co]), stride, padding)?;
    if grad_out.shape() != [p.n, p.oh, p.ow, p.co] {
        return Err(Error::Shape(format!("conv2d upstream gradient has shape {:?}", grad_out.shape())));
    }
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; p.co];
    for b in 0..p.n {
        for oy in 0..p.oh {
            for ox in 0..p.ow {
                let o = ((b * p.oh + oy) * p.ow + ox) * p.co;
                let go = &g[o..o + p.co];
                gb.iter_mut().zip(go).for_each(|(a, v)| *a += v);
                for ky in 0..p.kh {
                    let Some(iy) = p.src(oy, ky, p.pad_t, p.h) else { continue };
                    for kx in 0..p.kw {
                        let Some(ix) = p.src(ox, kx, p.pad_l, p.w) else { continue };
                        let xi = ((b * p.h + iy) * p.w + ix) * p.ci;
                        for c in 0..p.ci {
                            let kr = ((ky * p.kw + kx) * p.ci + c) * p.co;
                            let xv = x[xi + c];
                            let mut s = 0.0;
                            for ((gkv, kv), gv) in gk[kr..kr + p.co].iter_mut().zip(&k[kr..kr + p.co]).zip(go) {
                                *gkv += xv * gv;
                                s += kv * gv;
                            }
                            gx[xi + c] += s;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![p.co], gb)?,
    })
}

struct DeconvPlan {
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    co: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

fn plan_deconv(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<DeconvPlan> {
    let (n, h, w, ci) = input.dims4()?;
    let (kh, kw, kci, co) = kernel_dims(kernel)?;
    if kci != ci {
        return Err(Error::Shape(format!("conv2d_transpose kernel expects {kci} input channels, input has {ci}")));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    Ok(DeconvPlan { n, h, w, ci, kh, kw, co, oh: (h - 1) * stride + kh, ow: (w - 1) * stride + kw, stride })
}

/// Transposed convolution without padding: output extent `(H - 1) * stride + kh`.
pub fn conv2d_transpose(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let p = plan_deconv(input, kernel, stride)?;
    if bias.len() != p.co {
        return Err(Error::Shape(format!("conv2d_transpose bias has {} values for {} channels", bias.len(), p.co)));
    }
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; p.n * p.oh * p.ow * p.co];
    for px in out.chunks_exact_mut(p.co) {
        px.copy_from_slice(bias.data());
    }
    for b in 0..p.n {
        for iy in 0..p.h {
            for ix in 0..p.w {
                let xi = ((b * p.h + iy) * p.w + ix) * p.ci;
                for ky in 0..p.kh {
                    for kx in 0..p.kw {
                        let o = ((b * p.oh + iy * p.stride + ky) * p.ow + ix * p.stride + kx) * p.co;
                        let acc = &mut out[o..o + p.co];
                        for c in 0..p.ci {
                            let xv = x[xi + c];
                            let kr = ((ky * p.kw + kx) * p.ci + c) * p.co;
                            for (a, kv) in acc.iter_mut().zip(&k[kr..kr + p.co]) {
                                *a += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![p.n, p.oh, p.ow, p.co], out)
}

pub fn conv2d_transpose_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let p = plan_deconv(input, kernel, stride)?;
    if grad_out.shape() != [p.n, p.oh, p.ow, p.co] {
        return Err(Error::Shape(format!("conv2d_transpose upstream gradient has shape {:?}", grad_out.shape())));
    }
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; p.co];
    for go in g.chunks_exact(p.co) {
        gb.iter_mut().zip(go).for_each(|(a, v)| *a += v);
    }
    for b in 0..p.n {
        for iy in 0..p.h {
            for ix in 0..p.w {
                let xi = ((b * p.h + iy) * p.w + ix) * p.ci;
                for ky in 0..p.kh {
                    for kx in 0..p.kw {
                        let o = ((b * p.oh + iy * p.stride + ky) * p.ow + ix * p.stride + kx) * p.co;
                        let go = &g[o..o + p.co];
                        for c in 0..p.ci {
                            let xv = x[xi + c];
                            let kr = ((ky * p.kw + kx) * p.ci + c) * p.co;
                            let mut s = 0.0;
                            for ((gkv, kv), gv) in gk[kr..kr + p.co].iter_mut().zip(&k[kr..kr + p.co]).zip(go) {
                                *gkv += xv * gv;
                                s += kv * gv;
                            }
                            gx[xi + c] += s;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![p.co], gb)?,
    })
}

/// 2x2 max pooling with stride 2. Returns the output and, per output element,
/// the flat input index it was taken from (first maximum in row-major order).
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, h, w, c) = input.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("maxpool2 needs at least 2x2 input, got {h}x{w}")));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, argmax))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    g
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient is taken as zero at the kink.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(input.data()).for_each(|(gv, &x)| {
        if x <= 0.0 {
            *gv = 0.0
        }
    });
    g
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Backward pass expressed in terms of the forward output `y`.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(output.data()).for_each(|(gv, &y)| *gv *= y * (1.0 - y));
    g
}

/// Running statistics and hyper-parameters of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: Mode,
}

impl BatchNormState {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            mode: Mode::Train,
        }
    }
}

/// Values retained from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Normalizes over every axis but the last using batch statistics (biased variance).
pub fn batchnorm_train(input: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Result<(Tensor, BnCache)> {
    let c = input.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("batchnorm has {} gains for {c} channels", gamma.len())));
    }
    let x = input.data();
    let m = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for px in x.chunks_exact(c) {
        mean.iter_mut().zip(px).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; c];
    for px in x.chunks_exact(c) {
        for ((a, v), mu) in var.iter_mut().zip(px).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|a| *a /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for ((px, xh), yo) in x.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(y.chunks_exact_mut(c)) {
        for k in 0..c {
            xh[k] = (px[k] - mean[k]) * inv_std[k];
            yo[k] = gamma[k] * xh[k] + beta[k];
        }
    }
    let shape = input.shape().to_vec();
    Ok((Tensor::new(shape.clone(), y)?, BnCache { xhat: Tensor::new(shape, xhat)?, inv_std, mean, var }))
}

pub fn batchnorm_infer(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let c = input.channels();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape(format!("batchnorm parameters do not match {c} channels")));
    }
    let scale: Vec<f64> = (0..c).map(|k| gamma[k] / (running_var[k] + eps).sqrt()).collect();
    let mut y = input.clone();
    for px in y.data_mut().chunks_exact_mut(c) {
        for k in 0..c {
            px[k] = (px[k] - running_mean[k]) * scale[k] + beta[k];
        }
    }
    Ok(y)
}

/// `running = momentum * running + (1 - momentum) * batch`.
pub fn update_running(running: &mut [f64], batch: &[f64], momentum: f64) {
    running.iter_mut().zip(batch).for_each(|(r, b)| *r = momentum * *r + (1.0 - momentum) * b);
}

/// Returns `(d input, d gamma, d beta)`.
pub fn batchnorm_backward(cache: &BnCache, gamma: &[f64], grad_out: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let m = (g.len() / c) as f64;
    let mut gbeta = vec![0.0; c];
    let mut ggamma = vec![0.0; c];
    for (gp, xp) in g.chunks_exact(c).zip(xh.chunks_exact(c)) {
        for k in 0..c {
            gbeta[k] += gp[k];
            ggamma[k] += gp[k] * xp[k];
        }
    }
    let mut gx = vec![0.0; g.len()];
    for ((gp, xp), out) in g.chunks_exact(c).zip(xh.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
        for k in 0..c {
            out[k] = gamma[k] * cache.inv_std[k] / m * (m * gp[k] - gbeta[k] - xp[k] * ggamma[k]);
        }
    }
    (Tensor::new(grad_out.shape().to_vec(), gx).expect("same shape"), ggamma, gbeta)
}

/// Stateful convenience wrapper: training mode uses batch statistics and
/// updates the running estimates, inference mode uses the running estimates.
pub fn batchnorm(input: &Tensor, state: &mut BatchNormState, gamma: &[f64], beta: &[f64]) -> Result<Tensor> {
    match state.mode {
        Mode::Train => {
            let (y, cache) = batchnorm_train(input, gamma, beta, state.eps)?;
            update_running(&mut state.running_mean, &cache.mean, state.momentum);
            update_running(&mut state.running_var, &cache.var, state.momentum);
            Ok(y)
        }
        Mode::Infer => batchnorm_infer(input, gamma, beta, &state.running_mean, &state.running_var, state.eps),
    }
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

pub fn dropout(input: &Tensor, p: f64, seed: u64, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Infer => Ok(input.clone()),
        Mode::Train => {
            let mask = dropout_mask(input.len(), p, seed)?;
            Ok(apply_mask(input, &mask))
        }
    }
}

pub fn apply_mask(t: &Tensor, mask: &[f64]) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    out
}

pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fi) = input.dims2()?;
    let (wi, fo) = weights.dims2()?;
    if wi != fi || bias.len() != fo {
        return Err(Error::Shape(format!(
            "dense weights {:?} / bias {:?} incompatible with input {:?}",
            weights.shape(),
            bias.shape(),
            input.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let mut out = vec![0.0; n * fo];
    for (row, acc) in x.chunks_exact(fi).zip(out.chunks_exact_mut(fo)) {
        acc.copy_from_slice(bias.data());
        for (i, &xv) in row.iter().enumerate() {
            for (a, wv) in acc.iter_mut().zip(&w[i * fo..(i + 1) * fo]) {
                *a += xv * wv;
            }
        }
    }
    Tensor::new(vec![n, fo], out)
}

/// Returns `(d input, d weights, d bias)`.
pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, fi) = input.dims2()?;
    let (_, fo) = weights.dims2()?;
    if grad_out.shape() != [n, fo] {
        return Err(Error::Shape(format!("dense upstream gradient has shape {:?}", grad_out.shape())));
    }
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; n * fi];
    let mut gw = vec![0.0; fi * fo];
    let mut gb = vec![0.0; fo];
    for ((row, grow), gxrow) in x.chunks_exact(fi).zip(g.chunks_exact(fo)).zip(gx.chunks_exact_mut(fi)) {
        gb.iter_mut().zip(grow).for_each(|(a, v)| *a += v);
        for i in 0..fi {
            let wr = &w[i * fo..(i + 1) * fo];
            let gwr = &mut gw[i * fo..(i + 1) * fo];
            let mut s = 0.0;
            for ((gwv, wv), gv) in gwr.iter_mut().zip(wr).zip(grow) {
                *gwv += row[i] * gv;
                s += wv * gv;
            }
            gxrow[i] = s;
        }
    }
    Ok((Tensor::new(vec![n, fi], gx)?, Tensor::new(vec![fi, fo], gw)?, Tensor::new(vec![fo], gb)?))
}

pub fn flatten(input: &Tensor) -> Result<Tensor> {
    let n = *input.shape().first().ok_or_else(|| Error::Shape("cannot flatten a rank-0 tensor".into()))?;
    let f = input.len() / n.max(1);
    input.clone().reshape(vec![n, f])
}

/// Concatenates along the last axis; every other axis must agree.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(Error::Shape(format!("cannot concatenate {sa:?} with {sb:?} along channels")));
    }
    let (ca, cb) = (a.channels(), b.channels());
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    let mut shape = sa.to_vec();
    *shape.last_mut().unwrap() = ca + cb;
    Tensor::new(shape, out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(g: &Tensor, ca: usize) -> Result<(Tensor, Tensor)> {
    let c = g.channels();
    if ca > c {
        return Err(Error::Shape(format!("cannot split {c} channels at {ca}")));
    }
    let cb = c - ca;
    let mut a = Vec::with_capacity(g.len() / c * ca);
    let mut b = Vec::with_capacity(g.len() / c * cb);
    for px in g.data().chunks_exact(c) {
        a.extend_from_slice(&px[..ca]);
        b.extend_from_slice(&px[ca..]);
    }
    let mut sa = g.shape().to_vec();
    let mut sb = sa.clone();
    *sa.last_mut().unwrap() = ca;
    *sb.last_mut().unwrap() = cb;
    Ok((Tensor::new(sa, a)?, Tensor::new(sb, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(h: usize, w: usize, c: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(vec![1, h, w, c], v).unwrap()
    }

    #[test]
    fn unit_kernel_scales() {
        let x = t4(2, 2, 1, vec![1., 2., 3., 4.]);
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn valid_conv_sums_windows() {
        // ramp 0..9 on a 3x3 grid, window sums computed by hand
        let x = t4(3, 3, 1, (0..9).map(f64::from).collect());
        let k = Tensor::filled(&[2, 2, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[8., 12., 20., 24.]);
    }

    #[test]
    fn same_padding_keeps_extent_and_pads_bottom_right() {
        let x = t4(4, 5, 2, vec![1.0; 40]);
        let k = Tensor::filled(&[3, 3, 2, 3], 1.0);
        assert_eq!(conv2d(&x, &k, &Tensor::zeros(&[3]), 1, Padding::Same).unwrap().shape(), &[1, 4, 5, 3]);
        // even kernel: one pad row at the bottom, none on top
        let x = t4(2, 2, 1, vec![1., 2., 3., 4.]);
        let k = Tensor::filled(&[2, 2, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[10., 6., 7., 4.]);
    }

    #[test]
    fn conv_channel_mismatch_is_an_error() {
        let x = t4(2, 2, 2, vec![0.0; 8]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(matches!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, Padding::Same), Err(Error::Shape(_))));
    }

    #[test]
    fn deconv_single_pixel_broadcasts_kernel() {
        let x = t4(1, 1, 1, vec![3.0]);
        let k = Tensor::new(vec![2, 2, 1, 1], vec![1., 2., 3., 4.]).unwrap();
        let y = conv2d_transpose(&x, &k, &Tensor::zeros(&[1]), 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[3., 6., 9., 12.]);
    }

    #[test]
    fn maxpool_picks_max_and_first_tie() {
        let x = t4(2, 2, 1, vec![1., 2., 3., 4.]);
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let x = t4(2, 2, 1, vec![5.0; 4]);
        let (_, arg) = maxpool2(&x).unwrap();
        let g = maxpool2_backward(x.shape(), &arg, &Tensor::filled(&[1, 1, 1, 1], 1.0));
        assert_eq!(g.data(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn activations() {
        let r = relu(&Tensor::new(vec![3], vec![-1., 0., 2.]).unwrap());
        assert_eq!(r.data(), &[0., 0., 2.]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn batchnorm_constant_channel_yields_beta() {
        let x = t4(2, 2, 2, vec![3., -1., 3., -1., 3., -1., 3., -1.]);
        let (y, _) = batchnorm_train(&x, &[2.0, 0.5], &[0.25, -4.0], 1e-5).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.25, -4.0]);
        }
    }

    #[test]
    fn batchnorm_two_values() {
        let a: f64 = 0.3;
        let eps = 1e-5;
        let x = Tensor::new(vec![2, 1], vec![-a, a]).unwrap();
        let (y, _) = batchnorm_train(&x, &[1.0], &[0.0], eps).unwrap();
        let expect = a / (a * a + eps).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_state_tracks_running_stats() {
        let x = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        let mut st = BatchNormState::new(1);
        batchnorm(&x, &mut st, &[1.0], &[0.0]).unwrap();
        assert!((st.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((st.running_var[0] - (0.9 + 0.1)).abs() < 1e-15);
        st.mode = Mode::Infer;
        let y = batchnorm(&x, &mut st, &[1.0], &[0.0]).unwrap();
        assert!((y.data()[0] - (1.0 - 0.2) / (1.0 + 1e-5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::from_fn(&[4, 8], |i| i as f64 + 1.0);
        assert_eq!(dropout(&x, 0.0, 1, Mode::Train).unwrap(), x);
        assert_eq!(dropout(&x, 0.7, 1, Mode::Infer).unwrap(), x);
        let a = dropout(&x, 0.3, 42, Mode::Train).unwrap();
        let b = dropout(&x, 0.3, 42, Mode::Train).unwrap();
        assert_eq!(a, b);
        for (o, i) in a.data().iter().zip(x.data()) {
            assert!(*o == 0.0 || (o - i / 0.7).abs() < 1e-12);
        }
        assert!(dropout(&x, 1.0, 1, Mode::Train).is_err());
    }

    #[test]
    fn dense_identity_and_concat_slicing() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);

        let a = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let b = Tensor::from_fn(&[1, 2, 2, 3], |i| 100.0 + i as f64);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2, 5]);
        let (ra, rb) = split_channels(&c, 2).unwrap();
        assert_eq!((ra, rb), (a, b));
    }

    #[test]
    fn flatten_keeps_batch() {
        let x = Tensor::zeros(&[3, 2, 2, 4]);
        assert_eq!(flatten(&x).unwrap().shape(), &[3, 16]);
    }
}
