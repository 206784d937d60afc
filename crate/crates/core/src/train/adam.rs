//! Adaptive moment estimation over the model's trainable tensors.

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Slot {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam state: first/second moment estimates per trainable tensor plus the
/// shared step counter. Slot order mirrors the model's tensor order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let slots = params
            .named_tensors()
            .into_iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(name, t, _)| Slot {
                name: name.to_string(),
                m: vec![0.0; t.len()],
                v: vec![0.0; t.len()],
            })
            .collect();
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected update from the gradients accumulated in the
    /// parameter gradient buffers.
    pub fn step(&mut self, params: &mut ModelParams) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut slots = self.slots.iter_mut();
        for (name, tensor, trainable) in params.named_tensors_mut() {
            if !trainable {
                continue;
            }
            let slot = slots
                .next()
                .ok_or_else(|| Error::Diagnostic("optimizer slot count mismatch".into()))?;
            if slot.name != name {
                return Err(Error::Diagnostic(format!(
                    "optimizer slot {} does not match tensor {name}",
                    slot.name
                )));
            }
            let grad = tensor
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tensor.len()]);
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / c1;
                let v_hat = slot.v[i] / c2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub(crate) fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub(crate) fn restore(&mut self, step: u64, slots: Vec<Slot>) {
        self.step = step;
        self.slots = slots;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;

    fn model(seed: u64) -> ModelParams {
        let mut rng = Prng::new(seed);
        ModelParams::init(4, 50, 8, 4, 0.0, &mut rng).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut params = model(1);
        for (_, t, trainable) in params.named_tensors_mut() {
            if trainable {
                let n = t.len();
                t.accumulate_grad(&vec![0.37; n], 1.0);
            }
        }
        let before: Vec<Vec<u64>> = params
            .named_tensors()
            .iter()
            .map(|(_, t, _)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut adam = Adam::new(&params, 0.0, 0.9, 0.999, 1e-8);
        adam.step(&mut params).unwrap();
        let after: Vec<Vec<u64>> = params
            .named_tensors()
            .iter()
            .map(|(_, t, _)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn gradient_direction_reduces_parameter() {
        let mut params = model(2);
        let w0 = params.lstm.proj_b.data()[0];
        let n = params.lstm.proj_b.len();
        params.lstm.proj_b.accumulate_grad(&vec![1.0; n], 1.0);
        let mut adam = Adam::new(&params, 1e-2, 0.9, 0.999, 1e-8);
        adam.step(&mut params).unwrap();
        assert!(params.lstm.proj_b.data()[0] < w0);
        assert_eq!(adam.step_count(), 1);
    }
}
