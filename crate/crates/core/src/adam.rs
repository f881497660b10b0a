//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad Adam settings {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for a single tensor-valued variable.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
        }
    }

    /// One update of `variable` in place.
    pub fn step(&mut self, variable: &mut Tensor, gradient: &Tensor) -> Result<()> {
        if variable.shape() != gradient.shape() || variable.shape() != self.first_moment.shape() {
            return Err(Error::dimension(
                "adam_step",
                self.first_moment.shape(),
                gradient.shape(),
            ));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        for (((x, &g), m), v) in variable
            .data_mut()
            .iter_mut()
            .zip(gradient.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *x -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One [`AdamState`] per parameter tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Self {
        Self {
            states: params.into_iter().map(|p| AdamState::new(p.shape(), config)).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::dimension("Adam::step", self.states.len(), params.len()));
        }
        for ((state, p), g) in self.states.iter_mut().zip(params).zip(grads) {
            state.step(p, g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(lr: f64) -> AdamConfig {
        AdamConfig::with_learning_rate(lr)
    }

    #[test]
    fn zero_gradient_leaves_variable_unchanged() {
        let mut x = Tensor::vector(vec![0.3, -2.0, 7.5]);
        let before = x.clone();
        let mut state = AdamState::new(x.shape(), config(0.1));
        for _ in 0..5 {
            state.step(&mut x, &Tensor::zeros(&[3])).unwrap();
        }
        assert_eq!(x, before);
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = Tensor::scalar(0.0);
        let mut state = AdamState::new(&[1], config(0.1));
        state.step(&mut x, &Tensor::scalar(1.0)).unwrap();
        assert!((x.item() + 0.1).abs() < 1e-6);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        // Hand-unrolled update rule for a constant gradient g = 0.5, lr = 0.05.
        let (lr, b1, b2, eps, g) = (0.05f64, 0.9f64, 0.999f64, 1e-8f64, 0.5f64);
        let mut expected = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            expected -= lr * mh / (vh.sqrt() + eps);
        }

        let mut x = Tensor::scalar(1.0);
        let mut state = AdamState::new(&[1], config(lr));
        for _ in 0..2 {
            state.step(&mut x, &Tensor::scalar(g)).unwrap();
        }
        assert!((x.item() - expected).abs() < 1e-10);
    }

    #[test]
    fn moments_start_at_zero() {
        let state = AdamState::new(&[2, 2], AdamConfig::default());
        assert_eq!(state.step_count, 0);
        assert!(state.first_moment.data().iter().all(|&v| v == 0.0));
        assert!(state.second_moment.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut x = Tensor::vector(vec![1.0, 2.0]);
        let mut state = AdamState::new(&[2], AdamConfig::default());
        assert!(state.step(&mut x, &Tensor::vector(vec![1.0, 2.0, 3.0])).is_err());
    }
}
