use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{bind_dense, check_row, dense_forward, dense_on_tape, init_dense, FitConfig};
use crate::adam::{Adam, AdamConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::DenseLayer;
use crate::rng::{self, RngStream};
use crate::tape::{ComputationTape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Used for tabular data.
    #[default]
    Linear,
    /// Used by the image VAE.
    Relu,
}

/// How the ELBO expectation is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElboEstimator {
    /// Sampled reconstruction term minus the analytic `KL(q(z|x) || N(0, I))`.
    #[default]
    ClosedFormKl,
    /// Sampled reconstruction plus sampled `log p(z) - log q(z|x)`.
    MonteCarlo,
    /// Decodes at `z = mu(x)` and subtracts the analytic KL; no randomness.
    DecoderAtMean,
}

/// Gaussian VAE: `D_in -> hidden -> (mu, logvar)` and `D_z -> hidden -> D_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vae {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: DenseLayer,
    pub encoder_mu: DenseLayer,
    pub encoder_logvar: DenseLayer,
    pub decoder_hidden: DenseLayer,
    pub decoder_out: DenseLayer,
    pub output_activation: OutputActivation,
    /// Fixed variance of the Gaussian likelihood `p(x | z)`.
    pub decoder_variance: f64,
}

/// VAE parameters bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct VaeVars {
    encoder_hidden: (Var, Var),
    encoder_mu: (Var, Var),
    encoder_logvar: (Var, Var),
    decoder_hidden: (Var, Var),
    decoder_out: (Var, Var),
}

impl VaeVars {
    fn all(&self) -> [(Var, Var); 5] {
        [
            self.encoder_hidden,
            self.encoder_mu,
            self.encoder_logvar,
            self.decoder_hidden,
            self.decoder_out,
        ]
    }
}

impl Vae {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        latent_dim: usize,
        output_activation: OutputActivation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || latent_dim == 0 {
            return Err(Error::InvalidConfig("VAE widths must be positive".into()));
        }
        let mut rng = rng::stream(seed, &[rng::label::INIT, 2]);
        Ok(Self {
            input_dim,
            latent_dim,
            encoder_hidden: init_dense(input_dim, hidden, &mut rng),
            encoder_mu: init_dense(hidden, latent_dim, &mut rng),
            encoder_logvar: init_dense(hidden, latent_dim, &mut rng),
            decoder_hidden: init_dense(latent_dim, hidden, &mut rng),
            decoder_out: init_dense(hidden, input_dim, &mut rng),
            output_activation,
            decoder_variance: 1.0,
        })
    }

    /// Tabular defaults: 40 hidden units, 8 latent dimensions, linear output.
    pub fn tabular(input_dim: usize, seed: u64) -> Result<Self> {
        Self::new(
            input_dim,
            super::TABULAR_HIDDEN,
            super::TABULAR_LATENT,
            OutputActivation::Linear,
            seed,
        )
    }

    fn layers(&self) -> [&DenseLayer; 5] {
        [
            &self.encoder_hidden,
            &self.encoder_mu,
            &self.encoder_logvar,
            &self.decoder_hidden,
            &self.decoder_out,
        ]
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 5] {
        [
            &mut self.encoder_hidden,
            &mut self.encoder_mu,
            &mut self.encoder_logvar,
            &mut self.decoder_hidden,
            &mut self.decoder_out,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = self.encoder_hidden.bias.len();
        let expected = [
            (self.input_dim, hidden),
            (hidden, self.latent_dim),
            (hidden, self.latent_dim),
            (self.latent_dim, hidden),
            (hidden, self.input_dim),
        ];
        for (l, (i, o)) in self.layers().iter().zip(expected) {
            if l.weights.shape() != [i, o] || l.bias.shape() != [o] {
                return Err(Error::dimension("Vae layer", (i, o), l.weights.shape()));
            }
        }
        if !(self.decoder_variance > 0.0) {
            return Err(Error::Contract("decoder_variance must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic encoder mean `mu(x)`.
    pub fn encode_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_row("Vae::encode_mean", self.input_dim, x)?;
        let h = dense_forward(&self.encoder_hidden, &Tensor::vector(x.to_vec()), true)?;
        Ok(dense_forward(&self.encoder_mu, &h, false)?.into_data())
    }

    /// `(mu, logvar)` of `q(z | x)`.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_row("Vae::encode", self.input_dim, x)?;
        let h = dense_forward(&self.encoder_hidden, &Tensor::vector(x.to_vec()), true)?;
        Ok((
            dense_forward(&self.encoder_mu, &h, false)?.into_data(),
            dense_forward(&self.encoder_logvar, &h, false)?.into_data(),
        ))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_row("Vae::decode", self.latent_dim, z)?;
        let h = dense_forward(&self.decoder_hidden, &Tensor::vector(z.to_vec()), true)?;
        let relu = self.output_activation == OutputActivation::Relu;
        Ok(dense_forward(&self.decoder_out, &h, relu)?.into_data())
    }

    pub fn bind(&self, tape: &mut ComputationTape, trainable: bool) -> VaeVars {
        VaeVars {
            encoder_hidden: bind_dense(tape, &self.encoder_hidden, trainable),
            encoder_mu: bind_dense(tape, &self.encoder_mu, trainable),
            encoder_logvar: bind_dense(tape, &self.encoder_logvar, trainable),
            decoder_hidden: bind_dense(tape, &self.decoder_hidden, trainable),
            decoder_out: bind_dense(tape, &self.decoder_out, trainable),
        }
    }

    pub fn encode_mean_on_tape(&self, tape: &mut ComputationTape, vars: &VaeVars, x: Var) -> Var {
        let h = dense_on_tape(tape, vars.encoder_hidden, x, true);
        dense_on_tape(tape, vars.encoder_mu, h, false)
    }

    /// Mean ELBO over the rows of `x`, up to the dropped likelihood constant.
    ///
    /// `noise` must have the shape of the latent batch for the two sampled
    /// estimators and is ignored by [`ElboEstimator::DecoderAtMean`].
    pub fn elbo_on_tape(
        &self,
        tape: &mut ComputationTape,
        vars: &VaeVars,
        x: Var,
        estimator: ElboEstimator,
        noise: Option<Tensor>,
    ) -> Var {
        let rows = tape.value(x).matrix_dims().0 as f64;
        let h = dense_on_tape(tape, vars.encoder_hidden, x, true);
        let mu = dense_on_tape(tape, vars.encoder_mu, h, false);
        let logvar = dense_on_tape(tape, vars.encoder_logvar, h, false);

        let (z, zeta) = match estimator {
            ElboEstimator::DecoderAtMean => (mu, None),
            _ => {
                let shape = tape.value(mu).shape().to_vec();
                let noise = noise
                    .expect("sampled ELBO needs latent noise")
                    .reshape(shape)
                    .unwrap_or_else(|e| panic!("latent noise: {e}"));
                let zeta = tape.constant(noise);
                let half = tape.scale(logvar, 0.5);
                let sd = tape.exp(half);
                let spread = tape.mul(sd, zeta);
                (tape.add(mu, spread), Some(zeta))
            }
        };
        let hd = dense_on_tape(tape, vars.decoder_hidden, z, true);
        let x_hat = dense_on_tape(
            tape,
            vars.decoder_out,
            hd,
            self.output_activation == OutputActivation::Relu,
        );
        let resid = tape.sub(x, x_hat);
        let sq = tape.square(resid);
        let sse = tape.sum(sq);
        let recon = tape.scale(sse, -0.5 / self.decoder_variance);

        let kl = match (estimator, zeta) {
            (ElboEstimator::MonteCarlo, Some(zeta)) => {
                // log q(z|x) - log p(z) = 0.5 * sum(z^2 - zeta^2 - logvar)
                let z2 = tape.square(z);
                let zeta2 = tape.square(zeta);
                let a = tape.sub(z2, zeta2);
                let b = tape.sub(a, logvar);
                let s = tape.sum(b);
                tape.scale(s, 0.5)
            }
            _ => closed_form_kl(tape, mu, logvar),
        };
        let total = tape.sub(recon, kl);
        tape.scale(total, 1.0 / rows)
    }
}

/// `0.5 * sum(mu^2 + exp(logvar) - logvar - 1)` over every entry.
fn closed_form_kl(tape: &mut ComputationTape, mu: Var, logvar: Var) -> Var {
    let n = tape.value(mu).len() as f64;
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu2, var);
    let b = tape.sub(a, logvar);
    let s = tape.sum(b);
    let s = tape.add_scalar(s, -n);
    tape.scale(s, 0.5)
}

fn latent_noise(rows: usize, latent: usize, rng: &mut RngStream) -> Tensor {
    Tensor::from_fn(&[rows, latent], |_| rng.sample(StandardNormal))
}

/// `M` independent single-sample ELBO estimates at `x`.
pub fn elbo_samples(
    vae: &Vae,
    x: &[f64],
    samples: usize,
    estimator: ElboEstimator,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_row("elbo", vae.input_dim, x)?;
    if samples == 0 {
        return Err(Error::InvalidConfig("ELBO needs at least one sample".into()));
    }
    let mut tape = ComputationTape::new();
    let vars = vae.bind(&mut tape, false);
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    (0..samples)
        .map(|_| {
            let noise = match estimator {
                ElboEstimator::DecoderAtMean => None,
                _ => Some(latent_noise(1, vae.latent_dim, rng)),
            };
            let e = vae.elbo_on_tape(&mut tape, &vars, xv, estimator, noise);
            let v = tape.value(e).item();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Contract("non-finite ELBO".into()))
            }
        })
        .collect()
}

/// Monte Carlo ELBO at `x` averaged over `M` latent draws.
pub fn elbo(vae: &Vae, x: &[f64], samples: usize, estimator: ElboEstimator, rng: &mut RngStream) -> Result<f64> {
    let s = elbo_samples(vae, x, samples, estimator, rng)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Maximizes the mean ELBO with Adam; returns the mean ELBO of every epoch.
pub fn train_vae(vae: &mut Vae, data: &Dataset, indices: &[usize], config: &FitConfig) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    check_row("train_vae features", vae.input_dim, data.row(indices[0]))?;
    let mut adam = Adam::new(
        vae.layers().into_iter().flat_map(|l| [&l.weights, &l.bias]),
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    let mut order = indices.to_vec();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(config.seed, &[rng::label::SHUFFLE, 2, epoch as u64]));
        let mut total = 0.0;
        let mut count = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut noise_rng = rng::stream(config.seed, &[rng::label::VAE_NOISE, epoch as u64, b as u64]);
            let (x, _) = data.batch(batch);
            let mut tape = ComputationTape::new();
            let vars = vae.bind(&mut tape, true);
            let xv = tape.constant(x);
            let noise = latent_noise(batch.len(), vae.latent_dim, &mut noise_rng);
            let e = vae.elbo_on_tape(&mut tape, &vars, xv, ElboEstimator::ClosedFormKl, Some(noise));
            let value = tape.value(e).item();
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    detail: format!("ELBO is {value}"),
                });
            }
            let loss = tape.neg(e);
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars
                .all()
                .iter()
                .flat_map(|&(w, bias)| [grads.wrt(w), grads.wrt(bias)])
                .collect();
            let params = vae
                .layers_mut()
                .into_iter()
                .flat_map(|l| [&mut l.weights, &mut l.bias])
                .collect();
            adam.step(params, &g)?;
            total += value * batch.len() as f64;
            count += batch.len();
        }
        trace.push(total / count as f64);
    }
    Ok(trace)
}
