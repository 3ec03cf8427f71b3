use super::tensor::{shape_str, Scalar, Tensor};
use crate::error::{HttError, Result};

/// Adam moments and hyperparameters for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F = f64> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Zero moments with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(params: &[Tensor<F>], learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            second: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
        }
    }

    /// Rebuilds a state from saved moments (checkpoint resume).
    pub fn from_parts(
        learning_rate: f64,
        step: u64,
        first: Vec<Vec<F>>,
        second: Vec<Vec<F>>,
    ) -> Result<Self> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.len() != b.len()) {
            return Err(HttError::shape("adam moment arrays disagree in shape"));
        }
        Ok(AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<F>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<F>] {
        &self.second
    }

    /// One bias-corrected Adam update over every parameter that requires a
    /// gradient; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut [Tensor<F>]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(HttError::shape(format!(
                "adam state tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first[i].len() {
                return Err(HttError::shape(format!(
                    "parameter {i} has shape {} but its moments hold {} values",
                    shape_str(p.shape()),
                    self.first[i].len()
                )));
            }
            if p.requires_grad && p.grad.is_none() {
                return Err(HttError::invalid(format!("parameter {i} has no gradient")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::of(self.beta1);
        let b2 = F::of(self.beta2);
        let one = F::one();
        let corr1 = F::of(1.0 - self.beta1.powi(t));
        let corr2 = F::of(1.0 - self.beta2.powi(t));
        let lr = F::of(self.learning_rate);
        let eps = F::of(self.epsilon);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.grad = Some(grad);
            p.zero_grad();
        }
        Ok(())
    }
}
