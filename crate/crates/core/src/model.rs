//! The full decoding model: segment stack through the feature extractor,
//! per-sample LSTM and projection, CTC loss. Batches of variable-length
//! samples share one extractor pass so batch normalization sees every
//! segment of the batch jointly.

use rayon::prelude::*;

use crate::ctc::{ctc_loss, greedy_decode, CtcOutcome, LabelSequence};
use crate::eegnet::{self, EegnetParams};
use crate::error::{Error, Result};
use crate::rnn::{
    lstm_backward, lstm_forward, project_posteriors, projection_backward, LstmParams,
};
use crate::tensor::{Prng, Tensor};

/// All trainable weights of the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub eegnet: EegnetParams,
    pub lstm: LstmParams,
}

impl ModelParams {
    /// `n_total` is the blank-extended alphabet size.
    pub fn init(
        channels: usize,
        seg_len: usize,
        hidden: usize,
        n_total: usize,
        dropout_p: f64,
        rng: &mut Prng,
    ) -> Result<Self> {
        let eegnet = EegnetParams::init(channels, seg_len, dropout_p, rng)?;
        let lstm = LstmParams::init(eegnet.feature_len(), hidden, n_total, rng);
        Ok(ModelParams { eegnet, lstm })
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor, bool)> {
        let mut v = self.eegnet.named_tensors();
        v.extend(self.lstm.named_tensors());
        v
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor, bool)> {
        let mut v = self.eegnet.named_tensors_mut();
        v.extend(self.lstm.named_tensors_mut());
        v
    }

    pub fn zero_grads(&mut self) {
        for (_, t, trainable) in self.named_tensors_mut() {
            if trainable {
                t.zero_grad();
            }
        }
    }

    /// Concatenation of all trainable parameter values, in the fixed
    /// `named_tensors` order.
    pub fn flat_trainable(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (_, t, trainable) in self.named_tensors() {
            if trainable {
                v.extend_from_slice(t.data());
            }
        }
        v
    }

    /// Accumulated gradients in the same layout as [`flat_trainable`].
    pub fn flat_trainable_grads(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (_, t, trainable) in self.named_tensors() {
            if trainable {
                match t.grad() {
                    Some(g) => v.extend_from_slice(g),
                    None => v.extend(std::iter::repeat_n(0.0, t.len())),
                }
            }
        }
        v
    }

    pub fn set_flat_trainable(&mut self, theta: &[f64]) -> Result<()> {
        let mut off = 0;
        for (name, t, trainable) in self.named_tensors_mut() {
            if !trainable {
                continue;
            }
            let n = t.len();
            if off + n > theta.len() {
                return Err(Error::Arg(format!(
                    "parameter vector too short at {name}: need {} more values",
                    off + n - theta.len()
                )));
            }
            t.data_mut().copy_from_slice(&theta[off..off + n]);
            off += n;
        }
        if off != theta.len() {
            return Err(Error::Arg(format!(
                "parameter vector has {} extra values",
                theta.len() - off
            )));
        }
        Ok(())
    }
}

/// One training/evaluation item: a C x (S*M) signal and its target label
/// sequence.
#[derive(Clone, Debug)]
pub struct Sample {
    pub signal: Tensor,
    pub label: LabelSequence,
}

/// Split a [C, L] signal into non-overlapping segments [M, C, S]. A trailing
/// remainder shorter than one segment is dropped with a warning.
pub fn split_signal_segments(signal: &Tensor, seg_len: usize) -> Result<Tensor> {
    if signal.rank() != 2 {
        return Err(Error::Arg("signal must be rank 2 (channels x time)".into()));
    }
    let (c, l) = (signal.shape()[0], signal.shape()[1]);
    let m = l / seg_len;
    if m == 0 {
        return Err(Error::Arg(format!(
            "signal of {l} samples is shorter than one {seg_len}-sample segment"
        )));
    }
    if l % seg_len != 0 {
        eprintln!(
            "warning: dropping trailing {} samples not filling a {seg_len}-sample segment",
            l % seg_len
        );
    }
    let mut out = Tensor::zeros(vec![m, c, seg_len]);
    let dst = out.data_mut();
    for mi in 0..m {
        for ci in 0..c {
            let src = &signal.data()[ci * l + mi * seg_len..ci * l + (mi + 1) * seg_len];
            dst[(mi * c + ci) * seg_len..(mi * c + ci + 1) * seg_len].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Stack every sample's segments into one [N, C, S] block; returns the block
/// and per-sample offsets (prefix sums, length batch+1).
fn stack_batch(params: &ModelParams, batch: &[Sample]) -> Result<(Tensor, Vec<usize>)> {
    let c = params.eegnet.channels;
    let s = params.eegnet.seg_len;
    let mut offsets = Vec::with_capacity(batch.len() + 1);
    offsets.push(0);
    let mut stacks = Vec::with_capacity(batch.len());
    for sample in batch {
        let st = split_signal_segments(&sample.signal, s)?;
        if st.shape()[1] != c {
            return Err(Error::dim("stack_batch", "channel axis", c, st.shape()[1]));
        }
        offsets.push(offsets.last().unwrap() + st.shape()[0]);
        stacks.push(st);
    }
    let total = *offsets.last().unwrap();
    let mut block = Tensor::zeros(vec![total, c, s]);
    let mut pos = 0;
    let dst = block.data_mut();
    for st in stacks {
        dst[pos..pos + st.len()].copy_from_slice(st.data());
        pos += st.len();
    }
    Ok((block, offsets))
}

/// Loss statistics for one batch.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    /// Mean negative log probability over the feasible samples.
    pub mean_loss: f64,
    pub feasible: usize,
    /// Samples with no valid alignment, skipped.
    pub skipped: usize,
}

struct PerSample {
    nll: f64,
    dxs: Tensor,
    lstm_w_ih: Tensor,
    lstm_w_hh: Tensor,
    lstm_bias: Tensor,
    proj_w: Tensor,
    proj_b: Tensor,
}

/// Training step core: forward through the whole pipeline, backward, and
/// gradient accumulation into the parameter gradient buffers, scaled by
/// 1/feasible (mean gradient). Batch-normalization running statistics are
/// updated once from this batch. Fails if every sample is infeasible.
pub fn train_batch(
    params: &mut ModelParams,
    batch: &[Sample],
    rng: &mut Prng,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Arg("train_batch: empty batch".into()));
    }
    let (stack, offsets) = stack_batch(params, batch)?;
    let (feats, cache) = eegnet::forward_batch_train(&params.eegnet, &stack, rng)?;
    let f_len = params.eegnet.feature_len();

    let shared: &ModelParams = params;
    let results: Vec<Option<PerSample>> = (0..batch.len())
        .into_par_iter()
        .map(|i| -> Result<Option<PerSample>> {
            let m = offsets[i + 1] - offsets[i];
            let xs = Tensor::new(
                vec![m, f_len],
                feats.data()[offsets[i] * f_len..offsets[i + 1] * f_len].to_vec(),
            )?;
            let (hs, lcache) = lstm_forward(&xs, &shared.lstm)?;
            let (_logits, y) = project_posteriors(&hs, &shared.lstm)?;
            match ctc_loss(&y, &batch[i].label)? {
                CtcOutcome::Finite { nll, logit_grad } => {
                    let (d_hs, dpw, dpb) = projection_backward(&shared.lstm, &hs, &logit_grad);
                    let (dxs, lgrads) = lstm_backward(&shared.lstm, &lcache, &d_hs);
                    Ok(Some(PerSample {
                        nll,
                        dxs,
                        lstm_w_ih: lgrads.w_ih,
                        lstm_w_hh: lgrads.w_hh,
                        lstm_bias: lgrads.bias,
                        proj_w: dpw,
                        proj_b: dpb,
                    }))
                }
                CtcOutcome::Infeasible => Ok(None),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    // Deterministic reduction in sample order. Infeasible samples leave
    // their feature-gradient rows at zero.
    let mut dfeat = Tensor::zeros(vec![*offsets.last().unwrap(), f_len]);
    let mut acc_w_ih = Tensor::zeros(params.lstm.w_ih.shape().to_vec());
    let mut acc_w_hh = Tensor::zeros(params.lstm.w_hh.shape().to_vec());
    let mut acc_bias = Tensor::zeros(params.lstm.bias.shape().to_vec());
    let mut acc_pw = Tensor::zeros(params.lstm.proj_w.shape().to_vec());
    let mut acc_pb = Tensor::zeros(params.lstm.proj_b.shape().to_vec());
    let mut sum_nll = 0.0;
    let mut feasible = 0usize;
    for (i, r) in results.iter().enumerate() {
        let Some(ps) = r else { continue };
        feasible += 1;
        sum_nll += ps.nll;
        let dst = &mut dfeat.data_mut()[offsets[i] * f_len..offsets[i + 1] * f_len];
        dst.copy_from_slice(ps.dxs.data());
        add_into(&mut acc_w_ih, &ps.lstm_w_ih);
        add_into(&mut acc_w_hh, &ps.lstm_w_hh);
        add_into(&mut acc_bias, &ps.lstm_bias);
        add_into(&mut acc_pw, &ps.proj_w);
        add_into(&mut acc_pb, &ps.proj_b);
    }
    let skipped = batch.len() - feasible;
    if feasible == 0 {
        return Err(Error::Diagnostic(
            "train_batch: every sample in the batch is infeasible; check the synthesis ranges"
                .into(),
        ));
    }

    let (egrads, _dinput) = eegnet::backward_batch(&params.eegnet, &cache, &dfeat)?;
    let scale = 1.0 / feasible as f64;
    params
        .eegnet
        .l1_kernels
        .accumulate_grad(egrads.l1_kernels.data(), scale);
    params
        .eegnet
        .l1_bias
        .accumulate_grad(egrads.l1_bias.data(), scale);
    params
        .eegnet
        .bn1
        .gamma
        .accumulate_grad(egrads.bn1_gamma.data(), scale);
    params
        .eegnet
        .bn1
        .beta
        .accumulate_grad(egrads.bn1_beta.data(), scale);
    params
        .eegnet
        .l2_kernels
        .accumulate_grad(egrads.l2_kernels.data(), scale);
    params
        .eegnet
        .l2_bias
        .accumulate_grad(egrads.l2_bias.data(), scale);
    params
        .eegnet
        .bn2
        .gamma
        .accumulate_grad(egrads.bn2_gamma.data(), scale);
    params
        .eegnet
        .bn2
        .beta
        .accumulate_grad(egrads.bn2_beta.data(), scale);
    params
        .eegnet
        .l3_kernels
        .accumulate_grad(egrads.l3_kernels.data(), scale);
    params
        .eegnet
        .l3_bias
        .accumulate_grad(egrads.l3_bias.data(), scale);
    params
        .eegnet
        .bn3
        .gamma
        .accumulate_grad(egrads.bn3_gamma.data(), scale);
    params
        .eegnet
        .bn3
        .beta
        .accumulate_grad(egrads.bn3_beta.data(), scale);
    params.lstm.w_ih.accumulate_grad(acc_w_ih.data(), scale);
    params.lstm.w_hh.accumulate_grad(acc_w_hh.data(), scale);
    params.lstm.bias.accumulate_grad(acc_bias.data(), scale);
    params.lstm.proj_w.accumulate_grad(acc_pw.data(), scale);
    params.lstm.proj_b.accumulate_grad(acc_pb.data(), scale);

    eegnet::apply_bn_updates(&mut params.eegnet, &cache);
    Ok(StepOutcome {
        mean_loss: sum_nll * scale,
        feasible,
        skipped,
    })
}

/// Forward-only batch loss (training-mode normalization, no parameter or
/// running-statistic mutation). The dropout stream is pinned to a fixed
/// seed; run with dropout rate 0 when verifying gradients.
pub fn batch_loss(params: &ModelParams, batch: &[Sample]) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Arg("batch_loss: empty batch".into()));
    }
    let (stack, offsets) = stack_batch(params, batch)?;
    let mut rng = Prng::new(0);
    let (feats, _cache) = eegnet::forward_batch_train(&params.eegnet, &stack, &mut rng)?;
    let f_len = params.eegnet.feature_len();
    let nlls: Vec<Option<f64>> = (0..batch.len())
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let m = offsets[i + 1] - offsets[i];
            let xs = Tensor::new(
                vec![m, f_len],
                feats.data()[offsets[i] * f_len..offsets[i + 1] * f_len].to_vec(),
            )?;
            let (hs, _) = lstm_forward(&xs, &params.lstm)?;
            let (_, y) = project_posteriors(&hs, &params.lstm)?;
            Ok(ctc_loss(&y, &batch[i].label)?.nll())
        })
        .collect::<Result<Vec<_>>>()?;
    let feasible = nlls.iter().flatten().count();
    if feasible == 0 {
        return Err(Error::Diagnostic(
            "batch_loss: every sample infeasible".into(),
        ));
    }
    let sum: f64 = nlls.iter().flatten().sum();
    Ok(StepOutcome {
        mean_loss: sum / feasible as f64,
        feasible,
        skipped: batch.len() - feasible,
    })
}

/// Per-frame label posteriors for one signal, inference mode (running
/// statistics, no dropout).
pub fn posteriors_for_signal(params: &ModelParams, signal: &Tensor) -> Result<Tensor> {
    let stack = split_signal_segments(signal, params.eegnet.seg_len)?;
    let feats = eegnet::forward_batch_eval(&params.eegnet, &stack)?;
    let (hs, _) = lstm_forward(&feats, &params.lstm)?;
    let (_, y) = project_posteriors(&hs, &params.lstm)?;
    Ok(y)
}

/// Greedy best-path decode of one signal.
pub fn decode_signal(params: &ModelParams, signal: &Tensor) -> Result<LabelSequence> {
    greedy_decode(&posteriors_for_signal(params, signal)?)
}

fn add_into(acc: &mut Tensor, delta: &Tensor) {
    for (a, &d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}
