//! Layer operations: channel-mixing 1-d convolution, same-padded 2-d
//! convolution, batch normalization, max pooling, inverted dropout and
//! row-wise softmax, each with its exact analytic backward pass.

use super::{Prng, Tensor};
use crate::error::{Error, Result};

/// Dot product with four independent accumulators. Fixed association order
/// (deterministic across platforms) while still auto-vectorizing.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let q = n / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut j = 0;
    while j < q {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
        j += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while j < n {
        s += a[j] * b[j];
        j += 1;
    }
    s
}

/// out += c * a
#[inline]
pub(crate) fn axpy(out: &mut [f64], c: f64, a: &[f64]) {
    debug_assert_eq!(out.len(), a.len());
    for (o, &v) in out.iter_mut().zip(a) {
        *o += c * v;
    }
}

#[inline]
fn sum_slice(a: &[f64]) -> f64 {
    let n = a.len();
    let q = n / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut j = 0;
    while j < q {
        s0 += a[j];
        s1 += a[j + 1];
        s2 += a[j + 2];
        s3 += a[j + 3];
        j += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while j < n {
        s += a[j];
        j += 1;
    }
    s
}

// ---------------------------------------------------------------------------
// Channel-mixing 1-d convolution
// ---------------------------------------------------------------------------

/// Per-time-step linear mix of channels: out[k][t] = bias[k] + sum_c
/// kernels[k][c] * input[c][t]. Input [C,T], kernels [K,C], bias [K],
/// output [K,T].
pub fn channel_mix_conv(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::config(
            "channel_mix_conv",
            "input must be rank 2 (channels x time)",
        ));
    }
    if kernels.rank() != 2 {
        return Err(Error::config(
            "channel_mix_conv",
            "kernels must be rank 2 (filters x channels)",
        ));
    }
    let (c, t) = (input.shape()[0], input.shape()[1]);
    let (k, kc) = (kernels.shape()[0], kernels.shape()[1]);
    if kc != c {
        return Err(Error::dim("channel_mix_conv", "kernel channel axis", c, kc));
    }
    if bias.len() != k {
        return Err(Error::dim("channel_mix_conv", "bias axis", k, bias.len()));
    }
    let mut out = Tensor::zeros(vec![k, t]);
    channel_mix_into(
        input.data(),
        c,
        t,
        kernels.data(),
        k,
        bias.data(),
        out.data_mut(),
    );
    Ok(out)
}

pub(crate) fn channel_mix_into(
    x: &[f64],
    c: usize,
    t: usize,
    kernels: &[f64],
    k: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    for ki in 0..k {
        let orow = &mut out[ki * t..(ki + 1) * t];
        orow.iter_mut().for_each(|o| *o = bias[ki]);
        let krow = &kernels[ki * c..(ki + 1) * c];
        for (ci, &w) in krow.iter().enumerate() {
            axpy(orow, w, &x[ci * t..(ci + 1) * t]);
        }
    }
}

/// Gradients of [`channel_mix_conv`] w.r.t. input, kernels and bias.
pub fn channel_mix_conv_backward(
    input: &Tensor,
    kernels: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (c, t) = (input.shape()[0], input.shape()[1]);
    let k = kernels.shape()[0];
    debug_assert_eq!(dy.shape(), &[k, t]);
    let mut dx = Tensor::zeros(vec![c, t]);
    let mut dk = Tensor::zeros(vec![k, c]);
    let mut db = Tensor::zeros(vec![k]);
    channel_mix_grads(
        input.data(),
        c,
        t,
        kernels.data(),
        k,
        dy.data(),
        dk.data_mut(),
        db.data_mut(),
        Some(dx.data_mut()),
    );
    (dx, dk, db)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn channel_mix_grads(
    x: &[f64],
    c: usize,
    t: usize,
    kernels: &[f64],
    k: usize,
    dy: &[f64],
    dk: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for ki in 0..k {
        let grow = &dy[ki * t..(ki + 1) * t];
        db[ki] += sum_slice(grow);
        let dkrow = &mut dk[ki * c..(ki + 1) * c];
        for (ci, dkv) in dkrow.iter_mut().enumerate() {
            *dkv += dot(grow, &x[ci * t..(ci + 1) * t]);
        }
    }
    if let Some(dx) = dx {
        for ki in 0..k {
            let grow = &dy[ki * t..(ki + 1) * t];
            let krow = &kernels[ki * c..(ki + 1) * c];
            for (ci, &w) in krow.iter().enumerate() {
                axpy(&mut dx[ci * t..(ci + 1) * t], w, grow);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Same-padded 2-d convolution (cross-correlation)
// ---------------------------------------------------------------------------

/// 2-d cross-correlation with zero padding chosen so the spatial extents are
/// preserved. Input [H,W,D], kernels [F,kh,kw,D] with kh and kw odd, bias
/// [F], output [H,W,F].
pub fn conv2d_same(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::config(
            "conv2d_same",
            "input must be rank 3 (H x W x D)",
        ));
    }
    if kernels.rank() != 4 {
        return Err(Error::config(
            "conv2d_same",
            "kernels must be rank 4 (F x kh x kw x D)",
        ));
    }
    let (h, w, d) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (f, kh, kw, kd) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config(
            "conv2d_same",
            format!("kernel extents must be odd for same padding, got {kh}x{kw}"),
        ));
    }
    if kd != d {
        return Err(Error::dim("conv2d_same", "kernel depth axis", d, kd));
    }
    if bias.len() != f {
        return Err(Error::dim("conv2d_same", "bias axis", f, bias.len()));
    }
    let mut out = Tensor::zeros(vec![h, w, f]);
    conv2d_into(
        input.data(),
        h,
        w,
        d,
        kernels.data(),
        f,
        kh,
        kw,
        bias.data(),
        out.data_mut(),
    );
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_into(
    x: &[f64],
    h: usize,
    w: usize,
    d: usize,
    ker: &[f64],
    f: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    let ph = (kh - 1) / 2;
    let pw = (kw - 1) / 2;
    // Valid kernel-column window per output column (zero padding elsewhere).
    let dw_lo: Vec<usize> = (0..w).map(|wi| pw.saturating_sub(wi)).collect();
    let dw_hi: Vec<usize> = (0..w).map(|wi| kw.min(w + pw - wi)).collect();
    for hi in 0..h {
        let dh_lo = ph.saturating_sub(hi);
        let dh_hi = kh.min(h + ph - hi);
        for fi in 0..f {
            for wi in 0..w {
                let (lo, hi_w) = (dw_lo[wi], dw_hi[wi]);
                let span = (hi_w - lo) * d;
                let mut acc = bias[fi];
                for dh in dh_lo..dh_hi {
                    let ih = hi + dh - ph;
                    let iw0 = wi + lo - pw;
                    let xrow = &x[(ih * w + iw0) * d..(ih * w + iw0) * d + span];
                    let kbase = ((fi * kh + dh) * kw + lo) * d;
                    acc += dot(xrow, &ker[kbase..kbase + span]);
                }
                out[(hi * w + wi) * f + fi] = acc;
            }
        }
    }
}

/// Gradients of [`conv2d_same`] w.r.t. input, kernels and bias.
pub fn conv2d_same_backward(
    input: &Tensor,
    kernels: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (h, w, d) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (f, kh, kw) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    debug_assert_eq!(dy.shape(), &[h, w, f]);
    let mut dx = Tensor::zeros(vec![h, w, d]);
    let mut dk = Tensor::zeros(kernels.shape().to_vec());
    let mut db = Tensor::zeros(vec![f]);
    conv2d_grads(
        input.data(),
        h,
        w,
        d,
        kernels.data(),
        f,
        kh,
        kw,
        dy.data(),
        dk.data_mut(),
        db.data_mut(),
        Some(dx.data_mut()),
    );
    (dx, dk, db)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_grads(
    x: &[f64],
    h: usize,
    w: usize,
    d: usize,
    ker: &[f64],
    f: usize,
    kh: usize,
    kw: usize,
    dy: &[f64],
    dk: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let ph = (kh - 1) / 2;
    let pw = (kw - 1) / 2;
    let dw_lo: Vec<usize> = (0..w).map(|wi| pw.saturating_sub(wi)).collect();
    let dw_hi: Vec<usize> = (0..w).map(|wi| kw.min(w + pw - wi)).collect();
    for hi in 0..h {
        let dh_lo = ph.saturating_sub(hi);
        let dh_hi = kh.min(h + ph - hi);
        for wi in 0..w {
            let (lo, hi_w) = (dw_lo[wi], dw_hi[wi]);
            let span = (hi_w - lo) * d;
            let obase = (hi * w + wi) * f;
            for fi in 0..f {
                let g = dy[obase + fi];
                if g == 0.0 {
                    continue;
                }
                db[fi] += g;
                for dh in dh_lo..dh_hi {
                    let ih = hi + dh - ph;
                    let iw0 = wi + lo - pw;
                    let xbase = (ih * w + iw0) * d;
                    let kbase = ((fi * kh + dh) * kw + lo) * d;
                    axpy(&mut dk[kbase..kbase + span], g, &x[xbase..xbase + span]);
                    if let Some(dx) = dx.as_deref_mut() {
                        axpy(&mut dx[xbase..xbase + span], g, &ker[kbase..kbase + span]);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Batch-statistics cache produced by [`batchnorm_train`], consumed by
/// [`batchnorm_backward`] and by the running-statistics update.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    outer: usize,
    feats: usize,
    inner: usize,
    shape: Vec<usize>,
}

fn bn_split(shape: &[usize], feat_axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..feat_axis].iter().product();
    let feats = shape[feat_axis];
    let inner: usize = shape[feat_axis + 1..].iter().product();
    (outer, feats, inner)
}

/// Standardize per feature over all remaining axes using batch statistics,
/// then apply the affine transform gamma * xhat + beta. `feat_axis` selects
/// which axis holds the features.
pub fn batchnorm_train(
    input: &Tensor,
    feat_axis: usize,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BnCache)> {
    let (outer, feats, inner) = bn_split(input.shape(), feat_axis);
    if gamma.len() != feats || beta.len() != feats {
        return Err(Error::dim("batchnorm", "feature axis", feats, gamma.len()));
    }
    let x = input.data();
    let m = (outer * inner) as f64;
    let mut mean = vec![0.0; feats];
    let mut var = vec![0.0; feats];
    for o in 0..outer {
        for (fi, mu) in mean.iter_mut().enumerate() {
            let base = (o * feats + fi) * inner;
            *mu += sum_slice(&x[base..base + inner]);
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for o in 0..outer {
        for (fi, &mu) in mean.iter().enumerate() {
            let base = (o * feats + fi) * inner;
            let mut acc = 0.0;
            for &v in &x[base..base + inner] {
                let c = v - mu;
                acc += c * c;
            }
            var[fi] += acc;
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for fi in 0..feats {
            let base = (o * feats + fi) * inner;
            let (mu, is, g, b) = (mean[fi], inv_std[fi], gamma.data()[fi], beta.data()[fi]);
            for i in base..base + inner {
                let xh = (x[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?;
    Ok((
        out,
        BnCache {
            mean,
            var,
            xhat,
            inv_std,
            outer,
            feats,
            inner,
            shape: input.shape().to_vec(),
        },
    ))
}

/// Normalize with frozen running statistics (inference path).
pub fn batchnorm_eval(
    input: &Tensor,
    feat_axis: usize,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let (outer, feats, inner) = bn_split(input.shape(), feat_axis);
    if gamma.len() != feats {
        return Err(Error::dim("batchnorm", "feature axis", feats, gamma.len()));
    }
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for fi in 0..feats {
            let base = (o * feats + fi) * inner;
            let is = 1.0 / (running_var.data()[fi] + eps).sqrt();
            let (mu, g, b) = (running_mean.data()[fi], gamma.data()[fi], beta.data()[fi]);
            for i in base..base + inner {
                out[i] = g * (x[i] - mu) * is + b;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Gradients of [`batchnorm_train`] w.r.t. input, gamma and beta. The input
/// gradient includes the batch-statistics terms.
pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (outer, feats, inner) = (cache.outer, cache.feats, cache.inner);
    let m = (outer * inner) as f64;
    let g = dy.data();
    let mut sum_dy = vec![0.0; feats];
    let mut sum_dy_xhat = vec![0.0; feats];
    for o in 0..outer {
        for fi in 0..feats {
            let base = (o * feats + fi) * inner;
            sum_dy[fi] += sum_slice(&g[base..base + inner]);
            sum_dy_xhat[fi] += dot(&g[base..base + inner], &cache.xhat[base..base + inner]);
        }
    }
    let mut dx = vec![0.0; g.len()];
    for o in 0..outer {
        for fi in 0..feats {
            let base = (o * feats + fi) * inner;
            let scale = gamma.data()[fi] * cache.inv_std[fi];
            let mean_dy = sum_dy[fi] / m;
            let mean_dy_xhat = sum_dy_xhat[fi] / m;
            for i in base..base + inner {
                dx[i] = scale * (g[i] - mean_dy - cache.xhat[i] * mean_dy_xhat);
            }
        }
    }
    (
        Tensor::new(cache.shape.clone(), dx).expect("cache shape is valid"),
        Tensor::new(vec![feats], sum_dy_xhat).expect("feats > 0"),
        Tensor::new(vec![feats], sum_dy).expect("feats > 0"),
    )
}

/// Trainable batch-normalization state: affine parameters plus running
/// statistics for the inference path.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    /// Fresh state: gamma 1, beta 0, running mean 0, running var 1.
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(vec![features], 1.0),
            beta: Tensor::zeros(vec![features]),
            running_mean: Tensor::zeros(vec![features]),
            running_var: Tensor::full(vec![features], 1.0),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward_train(&self, input: &Tensor, feat_axis: usize) -> Result<(Tensor, BnCache)> {
        batchnorm_train(input, feat_axis, &self.gamma, &self.beta, self.eps)
    }

    pub fn forward_eval(&self, input: &Tensor, feat_axis: usize) -> Result<Tensor> {
        batchnorm_eval(
            input,
            feat_axis,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.eps,
        )
    }

    pub fn backward(&self, cache: &BnCache, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        batchnorm_backward(cache, &self.gamma, dy)
    }

    /// Exponential moving average update of the running statistics from the
    /// batch statistics recorded in `cache`.
    pub fn update_running(&mut self, cache: &BnCache) {
        let k = self.momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = k * *r + (1.0 - k) * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = k * *r + (1.0 - k) * b;
        }
    }
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Argmax positions recorded by [`maxpool2d`]; gradients route to these.
#[derive(Clone, Debug)]
pub struct MaxpoolCache {
    argmax: Vec<u32>,
    in_shape: Vec<usize>,
}

/// Non-overlapping window maximum over [H,W,D] (or [N,H,W,D]) input with
/// window (ph, pw). Pool extents must divide the spatial extents. Ties take
/// the first (lowest flat index) maximum.
pub fn maxpool2d(input: &Tensor, ph: usize, pw: usize) -> Result<(Tensor, MaxpoolCache)> {
    let (n, h, w, d, batched) = match input.shape() {
        [h, w, d] => (1, *h, *w, *d, false),
        [n, h, w, d] => (*n, *h, *w, *d, true),
        other => {
            return Err(Error::config(
                "maxpool2d",
                format!("input must be rank 3 or 4, got rank {}", other.len()),
            ))
        }
    };
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::config(
            "maxpool2d",
            format!("pool ({ph},{pw}) must divide spatial extents ({h},{w})"),
        ));
    }
    let (oh, ow) = (h / ph, w / pw);
    let mut out = vec![0.0; n * oh * ow * d];
    let mut argmax = vec![0u32; n * oh * ow * d];
    let x = input.data();
    let img = h * w * d;
    for ni in 0..n {
        let xoff = ni * img;
        for hi in 0..oh {
            for wi in 0..ow {
                for di in 0..d {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dh in 0..ph {
                        let ih = hi * ph + dh;
                        for dw in 0..pw {
                            let iw = wi * pw + dw;
                            let idx = xoff + (ih * w + iw) * d + di;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((ni * oh + hi) * ow + wi) * d + di;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    let out_shape = if batched {
        vec![n, oh, ow, d]
    } else {
        vec![oh, ow, d]
    };
    Ok((
        Tensor::new(out_shape, out)?,
        MaxpoolCache {
            argmax,
            in_shape: input.shape().to_vec(),
        },
    ))
}

/// Scatter the upstream gradient to the recorded argmax positions. The total
/// gradient mass is conserved.
pub fn maxpool2d_backward(cache: &MaxpoolCache, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(cache.in_shape.clone());
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        d[idx as usize] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Keep/scale multipliers recorded by [`dropout_train`]; the backward pass
/// reuses the same mask.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    mult: Vec<f64>,
}

/// Inverted dropout: each element is zeroed with probability p and survivors
/// are scaled by 1/(1-p), so the evaluation path is an exact identity.
pub fn dropout_train(input: &Tensor, p: f64, rng: &mut Prng) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(
            "dropout",
            format!("rate must be in [0,1), got {p}"),
        ));
    }
    let mult: Vec<f64> = if p == 0.0 {
        vec![1.0; input.len()]
    } else {
        let keep = 1.0 / (1.0 - p);
        (0..input.len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect()
    };
    let data = input
        .data()
        .iter()
        .zip(&mult)
        .map(|(&v, &m)| v * m)
        .collect();
    Ok((
        Tensor::new(input.shape().to_vec(), data)?,
        DropoutMask { mult },
    ))
}

/// Evaluation-mode dropout is the identity.
pub fn dropout_eval(input: &Tensor) -> Tensor {
    input.clone()
}

pub fn dropout_backward(mask: &DropoutMask, dy: &Tensor) -> Tensor {
    let data = dy
        .data()
        .iter()
        .zip(&mask.mult)
        .map(|(&g, &m)| g * m)
        .collect();
    Tensor::new(dy.shape().to_vec(), data).expect("shape preserved")
}

// ---------------------------------------------------------------------------
// Row-wise softmax
// ---------------------------------------------------------------------------

/// Softmax over the last axis of a [T,n] matrix, computed with
/// max-subtraction. Every output row is positive and sums to 1.
pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::config("softmax_rows", "input must be rank 2"));
    }
    let (t, n) = (input.shape()[0], input.shape()[1]);
    let mut out = vec![0.0; t * n];
    for ti in 0..t {
        let row = &input.data()[ti * n..(ti + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[ti * n..(ti + 1) * n];
        let mut z = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            z += *o;
        }
        orow.iter_mut().for_each(|o| *o /= z);
    }
    Tensor::new(vec![t, n], out)
}

/// Gradient through [`softmax_rows`] given its output y:
/// dx = y * (dy - sum(dy * y)) per row.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (t, n) = (y.shape()[0], y.shape()[1]);
    let mut dx = vec![0.0; t * n];
    for ti in 0..t {
        let yr = &y.data()[ti * n..(ti + 1) * n];
        let gr = &dy.data()[ti * n..(ti + 1) * n];
        let s = dot(yr, gr);
        for i in 0..n {
            dx[ti * n + i] = yr[i] * (gr[i] - s);
        }
    }
    Tensor::new(vec![t, n], dx).expect("shape preserved")
}
