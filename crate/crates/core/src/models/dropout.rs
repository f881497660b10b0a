use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use super::{DenseLayer, SampledNetwork};
use crate::error::{Error, Result};
use crate::rng::{self, RngStream};
use crate::tape::{self, ComputationTape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Deterministic MLP whose hidden activations are dropped at sampling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<DenseLayer>,
    /// Probability of dropping a hidden unit.
    pub p: f64,
}

impl DropoutMlp {
    pub fn new(sizes: &[usize], p: f64, seed: u64) -> Result<Self> {
        super::validate_sizes(sizes)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout p {p} outside [0, 1)")));
        }
        let mut rng = rng::stream(seed, &[rng::label::INIT]);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                DenseLayer {
                    weights: Tensor::from_fn(&[w[0], w[1]], |_| rng.sample(dist)),
                    bias: Tensor::from_fn(&[w[1]], |_| rng.sample(dist)),
                }
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            p,
        })
    }

    pub fn validate(&self) -> Result<()> {
        super::validate_sizes(&self.sizes)?;
        if self.layers.len() + 1 != self.sizes.len() {
            return Err(Error::dimension(
                "DropoutMlp layers",
                self.sizes.len() - 1,
                self.layers.len(),
            ));
        }
        for (l, w) in self.layers.iter().zip(self.sizes.windows(2)) {
            if l.weights.shape() != [w[0], w[1]] || l.bias.shape() != [w[1]] {
                return Err(Error::dimension("DropoutMlp layer", w, l.weights.shape()));
            }
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Contract(format!("dropout p {} outside [0, 1)", self.p)));
        }
        Ok(())
    }

    fn keep_scale(&self) -> f64 {
        1.0 / (1.0 - self.p)
    }

    /// One Bernoulli keep-mask per hidden unit, already scaled by `1 / (1 - p)`.
    pub(crate) fn draw_mask(&self, rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
        let scale = self.keep_scale();
        Tensor::from_fn(&[rows, cols], |_| {
            if self.p == 0.0 || rng.random::<f64>() >= self.p {
                scale
            } else {
                0.0
            }
        })
    }

    pub fn sample_network(&self, rng: &mut RngStream) -> SampledNetwork {
        let hidden = &self.sizes[1..self.sizes.len() - 1];
        SampledNetwork {
            layers: self.layers.clone(),
            masks: hidden.iter().map(|&h| self.draw_mask(1, h, rng).into_data()).collect(),
        }
    }

    /// Logits of a batch with independent masks per row (training-time dropout).
    pub(crate) fn logits_with_dropout(
        &self,
        tape: &mut ComputationTape,
        params: &[(Var, Var)],
        x: Var,
        rng: &mut RngStream,
    ) -> Var {
        let last = params.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in params.iter().enumerate() {
            h = tape::affine(tape, h, w, b);
            if i < last {
                h = tape.relu(h);
                let (rows, cols) = tape.value(h).matrix_dims();
                let mask = tape.constant(self.draw_mask(rows, cols, rng));
                h = tape.mul(h, mask);
            }
        }
        h
    }

    pub(crate) fn sample_log_probs(
        &self,
        tape: &mut ComputationTape,
        x: Var,
        samples: usize,
        rng: &mut RngStream,
    ) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.constant(l.weights.clone());
            let b = tape.constant(l.bias.clone());
            h = tape::affine(tape, h, w, b);
            if i == 0 {
                h = tape.repeat_rows(h, samples);
            }
            if i < last {
                h = tape.relu(h);
                let mask = tape.constant(self.draw_mask(samples, l.bias.len(), rng));
                h = tape.mul(h, mask);
            }
        }
        tape.log_softmax(h)
    }
}
