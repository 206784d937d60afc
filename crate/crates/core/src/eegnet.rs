//! Per-segment EEG feature extractor: a channel-mixing 1-d convolution
//! followed by two same-padded 2-d convolutions, each with batch
//! normalization, pooling after layers 2 and 3, and dropout. One segment of
//! C channels x 50 samples maps to a 50-value feature vector.
//!
//! The batch entry points operate on a stack of segments [N,C,S] so that
//! batch normalization sees all segments of a training batch jointly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{
    channel_mix_grads, channel_mix_into, conv2d_grads, conv2d_into, dropout_backward,
    dropout_train, maxpool2d, maxpool2d_backward, BatchNorm, BnCache, DropoutMask, MaxpoolCache,
    Prng, Tensor,
};

pub const L1_FILTERS: usize = 20;
pub const L2_FILTERS: usize = 5;
pub const L2_KERNEL: (usize, usize) = (3, 33); // spatial x temporal
pub const L3_FILTERS: usize = 5;
pub const L3_KERNEL: (usize, usize) = (11, 3);
pub const POOL: (usize, usize) = (2, 5);

/// Segments processed per partial-gradient chunk. Fixed so that parallel and
/// serial backward passes reduce partial sums in the same order.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One EEG segment: C channels by S time samples of normalized amplitude.
#[derive(Clone, Debug)]
pub struct Segment {
    signal: Tensor,
}

impl Segment {
    pub fn new(signal: Tensor) -> Result<Self> {
        if signal.rank() != 2 {
            return Err(Error::config(
                "Segment::new",
                "signal must be rank 2 (channels x time)",
            ));
        }
        if !signal.all_finite() {
            return Err(Error::config(
                "Segment::new",
                "signal contains non-finite values",
            ));
        }
        Ok(Segment { signal })
    }

    pub fn channels(&self) -> usize {
        self.signal.shape()[0]
    }

    pub fn samples(&self) -> usize {
        self.signal.shape()[1]
    }

    pub fn signal(&self) -> &Tensor {
        &self.signal
    }
}

/// All trainable state of the feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct EegnetParams {
    pub l1_kernels: Tensor, // [20, C]
    pub l1_bias: Tensor,    // [20]
    pub bn1: BatchNorm,     // 20 features
    pub l2_kernels: Tensor, // [5, 3, 33, 1]
    pub l2_bias: Tensor,    // [5]
    pub bn2: BatchNorm,     // 5 features
    pub l3_kernels: Tensor, // [5, 11, 3, 5]
    pub l3_bias: Tensor,    // [5]
    pub bn3: BatchNorm,     // 5 features
    pub dropout_p: f64,
    pub channels: usize,
    pub seg_len: usize,
}

impl EegnetParams {
    /// Centered-uniform initialization scaled by 1/sqrt(fan-in); biases zero.
    pub fn init(channels: usize, seg_len: usize, dropout_p: f64, rng: &mut Prng) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::config(
                "EegnetParams::init",
                "dropout rate must be in [0,1)",
            ));
        }
        let (l2h, l2w) = L2_KERNEL;
        let (l3h, l3w) = L3_KERNEL;
        let mut uniform_scaled = |shape: Vec<usize>, fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0) * scale)
        };
        Ok(EegnetParams {
            l1_kernels: uniform_scaled(vec![L1_FILTERS, channels], channels),
            l1_bias: Tensor::zeros(vec![L1_FILTERS]),
            bn1: BatchNorm::new(L1_FILTERS),
            l2_kernels: uniform_scaled(vec![L2_FILTERS, l2h, l2w, 1], l2h * l2w),
            l2_bias: Tensor::zeros(vec![L2_FILTERS]),
            bn2: BatchNorm::new(L2_FILTERS),
            l3_kernels: uniform_scaled(
                vec![L3_FILTERS, l3h, l3w, L2_FILTERS],
                l3h * l3w * L2_FILTERS,
            ),
            l3_bias: Tensor::zeros(vec![L3_FILTERS]),
            bn3: BatchNorm::new(L3_FILTERS),
            dropout_p,
            channels,
            seg_len,
        })
    }

    /// Feature-vector length produced for this segment length.
    pub fn feature_len(&self) -> usize {
        let (p2h, p2w) = POOL;
        let h = L1_FILTERS / p2h / p2h; // 20 -> 10 -> 5
        let w = self.seg_len / p2w / p2w;
        h * w * L3_FILTERS
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor, bool)> {
        vec![
            ("eegnet.l1.kernels", &self.l1_kernels, true),
            ("eegnet.l1.bias", &self.l1_bias, true),
            ("eegnet.bn1.gamma", &self.bn1.gamma, true),
            ("eegnet.bn1.beta", &self.bn1.beta, true),
            ("eegnet.bn1.running_mean", &self.bn1.running_mean, false),
            ("eegnet.bn1.running_var", &self.bn1.running_var, false),
            ("eegnet.l2.kernels", &self.l2_kernels, true),
            ("eegnet.l2.bias", &self.l2_bias, true),
            ("eegnet.bn2.gamma", &self.bn2.gamma, true),
            ("eegnet.bn2.beta", &self.bn2.beta, true),
            ("eegnet.bn2.running_mean", &self.bn2.running_mean, false),
            ("eegnet.bn2.running_var", &self.bn2.running_var, false),
            ("eegnet.l3.kernels", &self.l3_kernels, true),
            ("eegnet.l3.bias", &self.l3_bias, true),
            ("eegnet.bn3.gamma", &self.bn3.gamma, true),
            ("eegnet.bn3.beta", &self.bn3.beta, true),
            ("eegnet.bn3.running_mean", &self.bn3.running_mean, false),
            ("eegnet.bn3.running_var", &self.bn3.running_var, false),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor, bool)> {
        vec![
            ("eegnet.l1.kernels", &mut self.l1_kernels, true),
            ("eegnet.l1.bias", &mut self.l1_bias, true),
            ("eegnet.bn1.gamma", &mut self.bn1.gamma, true),
            ("eegnet.bn1.beta", &mut self.bn1.beta, true),
            ("eegnet.bn1.running_mean", &mut self.bn1.running_mean, false),
            ("eegnet.bn1.running_var", &mut self.bn1.running_var, false),
            ("eegnet.l2.kernels", &mut self.l2_kernels, true),
            ("eegnet.l2.bias", &mut self.l2_bias, true),
            ("eegnet.bn2.gamma", &mut self.bn2.gamma, true),
            ("eegnet.bn2.beta", &mut self.bn2.beta, true),
            ("eegnet.bn2.running_mean", &mut self.bn2.running_mean, false),
            ("eegnet.bn2.running_var", &mut self.bn2.running_var, false),
            ("eegnet.l3.kernels", &mut self.l3_kernels, true),
            ("eegnet.l3.bias", &mut self.l3_bias, true),
            ("eegnet.bn3.gamma", &mut self.bn3.gamma, true),
            ("eegnet.bn3.beta", &mut self.bn3.beta, true),
            ("eegnet.bn3.running_mean", &mut self.bn3.running_mean, false),
            ("eegnet.bn3.running_var", &mut self.bn3.running_var, false),
        ]
    }
}

/// Activations cached by the training forward pass, consumed by
/// [`backward_batch`] and by the running-statistics update. Backward takes
/// the cache by reference, so repeated backward calls see identical state.
#[derive(Clone, Debug)]
pub struct EegnetCache {
    x: Tensor, // [N,C,S]
    bn1: BnCache,
    drop1: DropoutMask,
    l2_in: Tensor, // [N,20,S,1]
    bn2: BnCache,
    pool2: MaxpoolCache,
    drop2: DropoutMask,
    l3_in: Tensor, // [N,10,S/5,5]
    bn3: BnCache,
    pool3: MaxpoolCache,
    drop3: DropoutMask,
    /// Per-segment shapes after: channel mix, conv 2, pool 2, conv 3, pool 3.
    pub trace: Vec<Vec<usize>>,
}

/// Gradients for every parameter of [`EegnetParams`].
#[derive(Clone, Debug)]
pub struct EegnetGrads {
    pub l1_kernels: Tensor,
    pub l1_bias: Tensor,
    pub bn1_gamma: Tensor,
    pub bn1_beta: Tensor,
    pub l2_kernels: Tensor,
    pub l2_bias: Tensor,
    pub bn2_gamma: Tensor,
    pub bn2_beta: Tensor,
    pub l3_kernels: Tensor,
    pub l3_bias: Tensor,
    pub bn3_gamma: Tensor,
    pub bn3_beta: Tensor,
}

fn check_input(params: &EegnetParams, x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::config(
            "eegnet",
            "segment stack must be rank 3 (N x C x S)",
        ));
    }
    let (n, c, s) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if c != params.channels {
        return Err(Error::dim("eegnet", "channel axis", params.channels, c));
    }
    if s != params.seg_len {
        return Err(Error::dim(
            "eegnet",
            "segment length axis",
            params.seg_len,
            s,
        ));
    }
    Ok((n, c, s))
}

fn mix_layer(params: &EegnetParams, x: &Tensor, n: usize, c: usize, s: usize) -> Tensor {
    let mut out = Tensor::zeros(vec![n, L1_FILTERS, s]);
    let kern = params.l1_kernels.data();
    let bias = params.l1_bias.data();
    let xin = x.data();
    out.data_mut()
        .par_chunks_mut(L1_FILTERS * s)
        .zip(xin.par_chunks(c * s))
        .for_each(|(o, xi)| channel_mix_into(xi, c, s, kern, L1_FILTERS, bias, o));
    out
}

fn conv_layer(
    x: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    n: usize,
    (h, w, d): (usize, usize, usize),
) -> Tensor {
    let f = kernels.shape()[0];
    let (kh, kw) = (kernels.shape()[1], kernels.shape()[2]);
    let mut out = Tensor::zeros(vec![n, h, w, f]);
    let ker = kernels.data();
    let b = bias.data();
    out.data_mut()
        .par_chunks_mut(h * w * f)
        .zip(x.data().par_chunks(h * w * d))
        .for_each(|(o, xi)| conv2d_into(xi, h, w, d, ker, f, kh, kw, b, o));
    out
}

/// Training-mode forward over a stack of segments [N,C,S]. Batch
/// normalization uses batch statistics over all segments jointly; dropout
/// masks are drawn from `rng`. Running statistics are *not* updated here;
/// apply [`apply_bn_updates`] once per training step.
pub fn forward_batch_train(
    params: &EegnetParams,
    x: &Tensor,
    rng: &mut Prng,
) -> Result<(Tensor, EegnetCache)> {
    let (n, c, s) = check_input(params, x)?;
    let (p2h, p2w) = POOL;
    let mut trace = Vec::with_capacity(5);

    // Layer 1: channel mix, batchnorm over the filter axis, dropout.
    let mixed = mix_layer(params, x, n, c, s);
    trace.push(vec![L1_FILTERS, s]);
    let (bn1_out, bn1) = params.bn1.forward_train(&mixed, 1)?;
    drop(mixed);
    let (d1, drop1) = dropout_train(&bn1_out, params.dropout_p, rng)?;
    drop(bn1_out);

    // Layer 2: reshape to a one-deep image, convolve, batchnorm, pool, dropout.
    let l2_in = d1.reshape(vec![n, L1_FILTERS, s, 1])?;
    let conv2 = conv_layer(
        &l2_in,
        &params.l2_kernels,
        &params.l2_bias,
        n,
        (L1_FILTERS, s, 1),
    );
    trace.push(vec![L1_FILTERS, s, L2_FILTERS]);
    let (bn2_out, bn2) = params.bn2.forward_train(&conv2, 3)?;
    drop(conv2);
    let (pool2_out, pool2) = maxpool2d(&bn2_out, p2h, p2w)?;
    drop(bn2_out);
    trace.push(pool2_out.shape()[1..].to_vec());
    let (d2, drop2) = dropout_train(&pool2_out, params.dropout_p, rng)?;
    drop(pool2_out);

    // Layer 3: convolve across the five maps, batchnorm, pool, dropout.
    let l3_in = d2;
    let (h3, w3) = (l3_in.shape()[1], l3_in.shape()[2]);
    let conv3 = conv_layer(
        &l3_in,
        &params.l3_kernels,
        &params.l3_bias,
        n,
        (h3, w3, L2_FILTERS),
    );
    trace.push(vec![h3, w3, L3_FILTERS]);
    let (bn3_out, bn3) = params.bn3.forward_train(&conv3, 3)?;
    drop(conv3);
    let (pool3_out, pool3) = maxpool2d(&bn3_out, p2h, p2w)?;
    drop(bn3_out);
    trace.push(pool3_out.shape()[1..].to_vec());
    let (d3, drop3) = dropout_train(&pool3_out, params.dropout_p, rng)?;
    drop(pool3_out);

    let feat_len = d3.len() / n;
    let features = d3.reshape(vec![n, feat_len])?;
    let cache = EegnetCache {
        x: x.clone(),
        bn1,
        drop1,
        l2_in,
        bn2,
        pool2,
        drop2,
        l3_in,
        bn3,
        pool3,
        drop3,
        trace,
    };
    Ok((features, cache))
}

/// Evaluation-mode forward: running statistics, dropout as identity.
/// Deterministic and read-only over the parameters.
pub fn forward_batch_eval(params: &EegnetParams, x: &Tensor) -> Result<Tensor> {
    let (n, c, s) = check_input(params, x)?;
    let (p2h, p2w) = POOL;

    let mixed = mix_layer(params, x, n, c, s);
    let bn1_out = params.bn1.forward_eval(&mixed, 1)?;
    let l2_in = bn1_out.reshape(vec![n, L1_FILTERS, s, 1])?;
    let conv2 = conv_layer(
        &l2_in,
        &params.l2_kernels,
        &params.l2_bias,
        n,
        (L1_FILTERS, s, 1),
    );
    let bn2_out = params.bn2.forward_eval(&conv2, 3)?;
    let (pool2_out, _) = maxpool2d(&bn2_out, p2h, p2w)?;
    let (h3, w3) = (pool2_out.shape()[1], pool2_out.shape()[2]);
    let conv3 = conv_layer(
        &pool2_out,
        &params.l3_kernels,
        &params.l3_bias,
        n,
        (h3, w3, L2_FILTERS),
    );
    let bn3_out = params.bn3.forward_eval(&conv3, 3)?;
    let (pool3_out, _) = maxpool2d(&bn3_out, p2h, p2w)?;
    let feat_len = pool3_out.len() / n;
    pool3_out.reshape(vec![n, feat_len])
}

/// Single-segment convenience wrapper. Train mode normalizes the lone
/// segment over its own positions.
pub fn eegnet_forward(
    seg: &Segment,
    params: &EegnetParams,
    mode: Mode,
    rng: &mut Prng,
) -> Result<Tensor> {
    let (c, s) = (seg.channels(), seg.samples());
    let x = seg.signal().clone().reshape(vec![1, c, s])?;
    let feats = match mode {
        Mode::Train => forward_batch_train(params, &x, rng)?.0,
        Mode::Eval => forward_batch_eval(params, &x)?,
    };
    let len = feats.len();
    feats.reshape(vec![len])
}

/// Parallel per-segment convolution backward with deterministic reduction:
/// fixed-size chunks produce partial kernel/bias gradients that are summed
/// serially in chunk order.
#[allow(clippy::too_many_arguments)]
fn conv_backward_batch(
    x: &Tensor,
    kernels: &Tensor,
    dy: &Tensor,
    (h, w, d): (usize, usize, usize),
    dk: &mut Tensor,
    db: &mut Tensor,
    dx: &mut Tensor,
) {
    let f = kernels.shape()[0];
    let (kh, kw) = (kernels.shape()[1], kernels.shape()[2]);
    let seg_in = h * w * d;
    let seg_out = h * w * f;
    let ker = kernels.data();
    let kelems = ker.len();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = dx
        .data_mut()
        .par_chunks_mut(GRAD_CHUNK * seg_in)
        .zip(x.data().par_chunks(GRAD_CHUNK * seg_in))
        .zip(dy.data().par_chunks(GRAD_CHUNK * seg_out))
        .map(|((dxc, xc), dyc)| {
            let mut dk_part = vec![0.0; kelems];
            let mut db_part = vec![0.0; f];
            for i in 0..dxc.len() / seg_in {
                conv2d_grads(
                    &xc[i * seg_in..(i + 1) * seg_in],
                    h,
                    w,
                    d,
                    ker,
                    f,
                    kh,
                    kw,
                    &dyc[i * seg_out..(i + 1) * seg_out],
                    &mut dk_part,
                    &mut db_part,
                    Some(&mut dxc[i * seg_in..(i + 1) * seg_in]),
                );
            }
            (dk_part, db_part)
        })
        .collect();
    for (dk_part, db_part) in partials {
        for (a, b) in dk.data_mut().iter_mut().zip(&dk_part) {
            *a += b;
        }
        for (a, b) in db.data_mut().iter_mut().zip(&db_part) {
            *a += b;
        }
    }
}

/// Exact analytic gradients for the whole extractor given the upstream
/// feature gradients [N,feat]. Returns parameter gradients and the gradient
/// w.r.t. the input stack. Dropout masks and pooling argmax positions are
/// reused from the cached forward pass.
pub fn backward_batch(
    params: &EegnetParams,
    cache: &EegnetCache,
    dfeat: &Tensor,
) -> Result<(EegnetGrads, Tensor)> {
    let (n, c, s) = (cache.x.shape()[0], cache.x.shape()[1], cache.x.shape()[2]);
    if dfeat.shape()[0] != n {
        return Err(Error::dim(
            "eegnet_backward",
            "batch axis",
            n,
            dfeat.shape()[0],
        ));
    }

    // Layer 3, reversed: dropout, pool, batchnorm, conv.
    let pool3_shape = {
        let t = &cache.trace[4];
        vec![n, t[0], t[1], t[2]]
    };
    let d = dfeat.clone().reshape(pool3_shape)?;
    let d = dropout_backward(&cache.drop3, &d);
    let d = maxpool2d_backward(&cache.pool3, &d);
    let (d, bn3_gamma, bn3_beta) = params.bn3.backward(&cache.bn3, &d);
    let (h3, w3) = (cache.l3_in.shape()[1], cache.l3_in.shape()[2]);
    let mut l3_k = Tensor::zeros(params.l3_kernels.shape().to_vec());
    let mut l3_b = Tensor::zeros(vec![L3_FILTERS]);
    let mut d_l3_in = Tensor::zeros(cache.l3_in.shape().to_vec());
    conv_backward_batch(
        &cache.l3_in,
        &params.l3_kernels,
        &d,
        (h3, w3, L2_FILTERS),
        &mut l3_k,
        &mut l3_b,
        &mut d_l3_in,
    );
    drop(d);

    // Layer 2, reversed.
    let d = dropout_backward(&cache.drop2, &d_l3_in);
    let d = maxpool2d_backward(&cache.pool2, &d);
    let (d, bn2_gamma, bn2_beta) = params.bn2.backward(&cache.bn2, &d);
    let mut l2_k = Tensor::zeros(params.l2_kernels.shape().to_vec());
    let mut l2_b = Tensor::zeros(vec![L2_FILTERS]);
    let mut d_l2_in = Tensor::zeros(cache.l2_in.shape().to_vec());
    conv_backward_batch(
        &cache.l2_in,
        &params.l2_kernels,
        &d,
        (L1_FILTERS, s, 1),
        &mut l2_k,
        &mut l2_b,
        &mut d_l2_in,
    );
    drop(d);

    // Layer 1, reversed.
    let d = d_l2_in.reshape(vec![n, L1_FILTERS, s])?;
    let d = dropout_backward(&cache.drop1, &d);
    let (d, bn1_gamma, bn1_beta) = params.bn1.backward(&cache.bn1, &d);
    let mut l1_k = Tensor::zeros(vec![L1_FILTERS, c]);
    let mut l1_b = Tensor::zeros(vec![L1_FILTERS]);
    let mut dx = Tensor::zeros(vec![n, c, s]);
    {
        let kern = params.l1_kernels.data();
        let seg_in = c * s;
        let seg_out = L1_FILTERS * s;
        let partials: Vec<(Vec<f64>, Vec<f64>)> = dx
            .data_mut()
            .par_chunks_mut(GRAD_CHUNK * seg_in)
            .zip(cache.x.data().par_chunks(GRAD_CHUNK * seg_in))
            .zip(d.data().par_chunks(GRAD_CHUNK * seg_out))
            .map(|((dxc, xc), dyc)| {
                let mut dk_part = vec![0.0; L1_FILTERS * c];
                let mut db_part = vec![0.0; L1_FILTERS];
                for i in 0..dxc.len() / seg_in {
                    channel_mix_grads(
                        &xc[i * seg_in..(i + 1) * seg_in],
                        c,
                        s,
                        kern,
                        L1_FILTERS,
                        &dyc[i * seg_out..(i + 1) * seg_out],
                        &mut dk_part,
                        &mut db_part,
                        Some(&mut dxc[i * seg_in..(i + 1) * seg_in]),
                    );
                }
                (dk_part, db_part)
            })
            .collect();
        for (dk_part, db_part) in partials {
            for (a, b) in l1_k.data_mut().iter_mut().zip(&dk_part) {
                *a += b;
            }
            for (a, b) in l1_b.data_mut().iter_mut().zip(&db_part) {
                *a += b;
            }
        }
    }

    Ok((
        EegnetGrads {
            l1_kernels: l1_k,
            l1_bias: l1_b,
            bn1_gamma,
            bn1_beta,
            l2_kernels: l2_k,
            l2_bias: l2_b,
            bn2_gamma,
            bn2_beta,
            l3_kernels: l3_k,
            l3_bias: l3_b,
            bn3_gamma,
            bn3_beta,
        },
        dx,
    ))
}

/// Fold the batch statistics recorded during a training forward pass into
/// the running statistics. Call exactly once per training step.
pub fn apply_bn_updates(params: &mut EegnetParams, cache: &EegnetCache) {
    params.bn1.update_running(&cache.bn1);
    params.bn2.update_running(&cache.bn2);
    params.bn3.update_running(&cache.bn3);
}
