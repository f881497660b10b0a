//! Generative models used for plausibility: a Gaussian VAE whose ELBO and
//! latent means enter the PSCE objective, and plain per-class autoencoders
//! for the IM1 metric.

mod autoencoder;
mod vae;

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

pub use self::autoencoder::{train_autoencoder, train_class_autoencoders, ClassAutoencoder};
pub use self::vae::{elbo, elbo_samples, train_vae, ElboEstimator, OutputActivation, Vae, VaeVars};

use crate::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::models::DenseLayer;
use crate::rng::RngStream;
use crate::tape::{self, ComputationTape, Var};
use crate::tensor::Tensor;

/// Hidden width of the tabular VAE and autoencoders.
pub const TABULAR_HIDDEN: usize = 40;
/// Latent width for tabular data.
pub const TABULAR_LATENT: usize = 8;
/// Latent width for flattened images.
pub const IMAGE_LATENT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()
    }
}

pub(crate) fn init_dense(inputs: usize, outputs: usize, rng: &mut RngStream) -> DenseLayer {
    let bound = 1.0 / (inputs as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    DenseLayer {
        weights: Tensor::from_fn(&[inputs, outputs], |_| rng.sample(dist)),
        bias: Tensor::from_fn(&[outputs], |_| rng.sample(dist)),
    }
}

pub(crate) fn bind_dense(tape: &mut ComputationTape, layer: &DenseLayer, trainable: bool) -> (Var, Var) {
    if trainable {
        (tape.leaf(layer.weights.clone()), tape.leaf(layer.bias.clone()))
    } else {
        (tape.constant(layer.weights.clone()), tape.constant(layer.bias.clone()))
    }
}

pub(crate) fn dense_on_tape(tape: &mut ComputationTape, (w, b): (Var, Var), x: Var, relu: bool) -> Var {
    let h = tape::affine(tape, x, w, b);
    if relu {
        tape.relu(h)
    } else {
        h
    }
}

pub(crate) fn dense_forward(layer: &DenseLayer, x: &Tensor, relu: bool) -> Result<Tensor> {
    let h = crate::tensor::affine_forward(x, &layer.weights, &layer.bias)?;
    Ok(if relu { crate::tensor::relu(&h) } else { h })
}

pub(crate) fn check_row(context: &'static str, expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::dimension(context, expected, x.len()));
    }
    Ok(())
}
