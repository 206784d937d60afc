//! One-layer unidirectional LSTM over the per-segment feature sequence,
//! plus an affine projection and row softmax producing per-frame label
//! posteriors.

use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid_scalar, softmax_rows, Prng, Tensor};

/// LSTM gate weights (input/forget/cell/output stacked along the first
/// axis) and the posterior projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Size of the blank-extended alphabet.
    pub n_out: usize,
    pub w_ih: Tensor,   // [4H, input]
    pub w_hh: Tensor,   // [4H, H]
    pub bias: Tensor,   // [4H], gate order i, f, g, o
    pub proj_w: Tensor, // [n_out, H]
    pub proj_b: Tensor, // [n_out]
}

impl LstmParams {
    /// Centered-uniform init scaled by 1/sqrt(fan-in); forget-gate bias 1,
    /// all other biases 0.
    pub fn init(input_size: usize, hidden_size: usize, n_out: usize, rng: &mut Prng) -> Self {
        let h = hidden_size;
        let s_in = 1.0 / (input_size as f64).sqrt();
        let s_h = 1.0 / (h as f64).sqrt();
        let w_ih = Tensor::from_fn(vec![4 * h, input_size], |_| {
            rng.uniform_in(-1.0, 1.0) * s_in
        });
        let w_hh = Tensor::from_fn(vec![4 * h, h], |_| rng.uniform_in(-1.0, 1.0) * s_h);
        let mut bias = Tensor::zeros(vec![4 * h]);
        bias.data_mut()[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        let proj_w = Tensor::from_fn(vec![n_out, h], |_| rng.uniform_in(-1.0, 1.0) * s_h);
        let proj_b = Tensor::zeros(vec![n_out]);
        LstmParams {
            input_size,
            hidden_size,
            n_out,
            w_ih,
            w_hh,
            bias,
            proj_w,
            proj_b,
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor, bool)> {
        vec![
            ("lstm.w_ih", &self.w_ih, true),
            ("lstm.w_hh", &self.w_hh, true),
            ("lstm.bias", &self.bias, true),
            ("proj.weight", &self.proj_w, true),
            ("proj.bias", &self.proj_b, true),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor, bool)> {
        vec![
            ("lstm.w_ih", &mut self.w_ih, true),
            ("lstm.w_hh", &mut self.w_hh, true),
            ("lstm.bias", &mut self.bias, true),
            ("proj.weight", &mut self.proj_w, true),
            ("proj.bias", &mut self.proj_b, true),
        ]
    }
}

/// Per-step activations cached by [`lstm_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    xs: Tensor,
    gates: Vec<f64>, // [T x 4H], post-activation, order i f g o
    cs: Vec<f64>,    // [T x H] cell states
    tcs: Vec<f64>,   // [T x H] tanh(cell)
    hs: Vec<f64>,    // [T x H] hidden states
}

/// Gradients for the recurrent parameters.
#[derive(Clone, Debug)]
pub struct LstmGrads {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Left-to-right LSTM recurrence from zero initial hidden and cell states.
/// Input [T, input_size], output hidden sequence [T, H].
pub fn lstm_forward(xs: &Tensor, params: &LstmParams) -> Result<(Tensor, LstmCache)> {
    if xs.rank() != 2 {
        return Err(Error::Arg(
            "lstm_forward: input must be rank 2 (T x features)".into(),
        ));
    }
    let (t_len, in_len) = (xs.shape()[0], xs.shape()[1]);
    if t_len == 0 {
        return Err(Error::Arg("lstm_forward: empty feature sequence".into()));
    }
    if in_len != params.input_size {
        return Err(Error::dim(
            "lstm_forward",
            "feature axis",
            params.input_size,
            in_len,
        ));
    }
    let h = params.hidden_size;
    let g4 = 4 * h;
    let mut gates = vec![0.0; t_len * g4];
    let mut cs = vec![0.0; t_len * h];
    let mut tcs = vec![0.0; t_len * h];
    let mut hs = vec![0.0; t_len * h];
    let (w_ih, w_hh, bias) = (params.w_ih.data(), params.w_hh.data(), params.bias.data());

    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for t in 0..t_len {
        let x_t = &xs.data()[t * in_len..(t + 1) * in_len];
        let z: Vec<f64> = (0..g4)
            .map(|j| {
                bias[j]
                    + dot(&w_ih[j * in_len..(j + 1) * in_len], x_t)
                    + dot(&w_hh[j * h..(j + 1) * h], &h_prev)
            })
            .collect();
        let gate = &mut gates[t * g4..(t + 1) * g4];
        for j in 0..h {
            gate[j] = sigmoid_scalar(z[j]); // input gate
            gate[h + j] = sigmoid_scalar(z[h + j]); // forget gate
            gate[2 * h + j] = z[2 * h + j].tanh(); // cell candidate
            gate[3 * h + j] = sigmoid_scalar(z[3 * h + j]); // output gate
        }
        for j in 0..h {
            let c = gate[h + j] * c_prev[j] + gate[j] * gate[2 * h + j];
            let tc = c.tanh();
            cs[t * h + j] = c;
            tcs[t * h + j] = tc;
            hs[t * h + j] = gate[3 * h + j] * tc;
        }
        c_prev.copy_from_slice(&cs[t * h..(t + 1) * h]);
        h_prev.copy_from_slice(&hs[t * h..(t + 1) * h]);
    }
    let out = Tensor::new(vec![t_len, h], hs.clone())?;
    Ok((
        out,
        LstmCache {
            xs: xs.clone(),
            gates,
            cs,
            tcs,
            hs,
        },
    ))
}

/// Backpropagation through time. `d_hs` is the upstream gradient on the
/// hidden sequence [T, H]; returns the input gradient and parameter
/// gradients.
pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, d_hs: &Tensor) -> (Tensor, LstmGrads) {
    let h = params.hidden_size;
    let g4 = 4 * h;
    let in_len = params.input_size;
    let t_len = cache.xs.shape()[0];
    debug_assert_eq!(d_hs.shape(), &[t_len, h]);

    let (w_ih, w_hh) = (params.w_ih.data(), params.w_hh.data());
    let mut dw_ih = vec![0.0; g4 * in_len];
    let mut dw_hh = vec![0.0; g4 * h];
    let mut db = vec![0.0; g4];
    let mut dxs = vec![0.0; t_len * in_len];
    let zeros = vec![0.0; h];

    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; g4];
    for t in (0..t_len).rev() {
        let gate = &cache.gates[t * g4..(t + 1) * g4];
        let c_prev: &[f64] = if t == 0 {
            &zeros
        } else {
            &cache.cs[(t - 1) * h..t * h]
        };
        let h_prev: &[f64] = if t == 0 {
            &zeros
        } else {
            &cache.hs[(t - 1) * h..t * h]
        };
        for j in 0..h {
            let dh = d_hs.data()[t * h + j] + dh_next[j];
            let (i_g, f_g, g_g, o_g) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
            let tc = cache.tcs[t * h + j];
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
            let d_i = dc * g_g;
            let d_g = dc * i_g;
            let d_f = dc * c_prev[j];
            dc_next[j] = dc * f_g;
            dz[j] = d_i * i_g * (1.0 - i_g);
            dz[h + j] = d_f * f_g * (1.0 - f_g);
            dz[2 * h + j] = d_g * (1.0 - g_g * g_g);
            dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
        }
        let x_t = &cache.xs.data()[t * in_len..(t + 1) * in_len];
        let dx_t = &mut dxs[t * in_len..(t + 1) * in_len];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..g4 {
            let g = dz[j];
            db[j] += g;
            if g == 0.0 {
                continue;
            }
            for (a, &b) in dw_ih[j * in_len..(j + 1) * in_len].iter_mut().zip(x_t) {
                *a += g * b;
            }
            for (a, &b) in dw_hh[j * h..(j + 1) * h].iter_mut().zip(h_prev) {
                *a += g * b;
            }
            for (a, &b) in dx_t.iter_mut().zip(&w_ih[j * in_len..(j + 1) * in_len]) {
                *a += g * b;
            }
            for (a, &b) in dh_next.iter_mut().zip(&w_hh[j * h..(j + 1) * h]) {
                *a += g * b;
            }
        }
    }
    (
        Tensor::new(vec![t_len, in_len], dxs).expect("shape valid"),
        LstmGrads {
            w_ih: Tensor::new(vec![g4, in_len], dw_ih).expect("shape valid"),
            w_hh: Tensor::new(vec![g4, h], dw_hh).expect("shape valid"),
            bias: Tensor::new(vec![g4], db).expect("shape valid"),
        },
    )
}

/// Affine map of each hidden state to label logits followed by a row
/// softmax. Returns (logits, posteriors), both [T, n_out]; every posterior
/// row sums to 1.
pub fn project_posteriors(hs: &Tensor, params: &LstmParams) -> Result<(Tensor, Tensor)> {
    let (t_len, h) = (hs.shape()[0], hs.shape()[1]);
    if h != params.hidden_size {
        return Err(Error::dim(
            "project_posteriors",
            "hidden axis",
            params.hidden_size,
            h,
        ));
    }
    let n = params.n_out;
    let mut logits = vec![0.0; t_len * n];
    for t in 0..t_len {
        let hrow = &hs.data()[t * h..(t + 1) * h];
        for k in 0..n {
            logits[t * n + k] =
                params.proj_b.data()[k] + dot(&params.proj_w.data()[k * h..(k + 1) * h], hrow);
        }
    }
    let logits = Tensor::new(vec![t_len, n], logits)?;
    let posteriors = softmax_rows(&logits)?;
    Ok((logits, posteriors))
}

/// Gradients of the projection given upstream logit gradients [T, n_out]:
/// returns (d_hs, d_proj_w, d_proj_b).
pub fn projection_backward(
    params: &LstmParams,
    hs: &Tensor,
    dlogits: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (t_len, h) = (hs.shape()[0], hs.shape()[1]);
    let n = params.n_out;
    debug_assert_eq!(dlogits.shape(), &[t_len, n]);
    let mut d_hs = vec![0.0; t_len * h];
    let mut dw = vec![0.0; n * h];
    let mut d_pb = vec![0.0; n];
    for t in 0..t_len {
        let hrow = &hs.data()[t * h..(t + 1) * h];
        let drow = &mut d_hs[t * h..(t + 1) * h];
        for k in 0..n {
            let g = dlogits.data()[t * n + k];
            d_pb[k] += g;
            if g == 0.0 {
                continue;
            }
            for (a, &b) in dw[k * h..(k + 1) * h].iter_mut().zip(hrow) {
                *a += g * b;
            }
            for (a, &b) in drow
                .iter_mut()
                .zip(&params.proj_w.data()[k * h..(k + 1) * h])
            {
                *a += g * b;
            }
        }
    }
    (
        Tensor::new(vec![t_len, h], d_hs).expect("shape valid"),
        Tensor::new(vec![n, h], dw).expect("shape valid"),
        Tensor::new(vec![n], d_pb).expect("shape valid"),
    )
}
