//! The five PSCE loss terms, both as tape builders (for gradients) and as
//! plain values.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::generative::{ElboEstimator, Vae, VaeVars};
use crate::models::PosteriorClassifier;
use crate::rng::RngStream;
use crate::tape::{ComputationTape, Var};
use crate::tensor::{squared_distance, Tensor};

/// Posterior-dependent terms sharing one set of `S` draws.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorTerms {
    /// `S x C` log-probabilities.
    pub log_probs: Var,
    /// `S` probabilities of the target class.
    pub probs: Var,
    pub mean: Var,
    /// Population variance of `probs`.
    pub variance: Var,
    /// `-(1/S) Σ log p(y'|x', ω_s)`
    pub clf: Var,
    /// `max((1 - δ) - mean, 0)`
    pub del: Var,
    /// `max(variance - ε, 0)`
    pub var: Var,
}

pub fn posterior_terms(
    tape: &mut ComputationTape,
    model: &dyn PosteriorClassifier,
    x: Var,
    target: usize,
    delta: f64,
    epsilon: f64,
    samples: usize,
    rng: &mut RngStream,
) -> PosteriorTerms {
    let log_probs = model.sample_log_probs(tape, x, samples, rng);
    let target_lp = tape.column(log_probs, target);
    let mean_lp = tape.mean(target_lp);
    let clf = tape.neg(mean_lp);
    let probs = tape.exp(target_lp);
    let mean = tape.mean(probs);
    let neg_mean = tape.neg(mean);
    let shortfall = tape.add_scalar(neg_mean, 1.0 - delta);
    let del = tape.relu(shortfall);
    let shape = tape.value(probs).shape().to_vec();
    let mean_b = tape.broadcast(mean, &shape);
    let centred = tape.sub(probs, mean_b);
    let sq = tape.square(centred);
    let variance = tape.mean(sq);
    let excess = tape.add_scalar(variance, -epsilon);
    let var = tape.relu(excess);
    PosteriorTerms {
        log_probs,
        probs,
        mean,
        variance,
        clf,
        del,
        var,
    }
}

/// `||mu(x) - mu(x')||²` with `mu(x)` fixed.
pub fn ldist_term(tape: &mut ComputationTape, vae: &Vae, vars: &VaeVars, mu_orig: &[f64], x: Var) -> Var {
    let mu = vae.encode_mean_on_tape(tape, vars, x);
    let shape = tape.value(mu).shape().to_vec();
    let fixed = tape.constant(Tensor::new(shape, mu_orig.to_vec()).expect("latent width"));
    let d = tape.sub(mu, fixed);
    let sq = tape.square(d);
    tape.sum(sq)
}

/// Single-sample ELBO of `x'`.
pub fn elbo_term(
    tape: &mut ComputationTape,
    vae: &Vae,
    vars: &VaeVars,
    x: Var,
    estimator: ElboEstimator,
    rng: &mut RngStream,
) -> Var {
    let noise = match estimator {
        ElboEstimator::DecoderAtMean => None,
        _ => Some(Tensor::from_fn(&[vae.latent_dim], |_| rng.sample(StandardNormal))),
    };
    vae.elbo_on_tape(tape, vars, x, estimator, noise)
}

/// `||x' - x||²` with `x` fixed.
pub fn prox_term(tape: &mut ComputationTape, x_orig: &[f64], x: Var) -> Var {
    let fixed = tape.constant(Tensor::vector(x_orig.to_vec()));
    let d = tape.sub(x, fixed);
    let sq = tape.square(d);
    tape.sum(sq)
}

fn scalar_terms(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target: usize,
    delta: f64,
    epsilon: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64, f64)> {
    if x.len() != model.input_dim() {
        return Err(Error::dimension("loss input", model.input_dim(), x.len()));
    }
    if target >= model.num_classes() {
        return Err(Error::InvalidClass {
            class: target,
            num_classes: model.num_classes(),
        });
    }
    if samples == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let mut tape = ComputationTape::new();
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    let t = posterior_terms(&mut tape, model, xv, target, delta, epsilon, samples, rng);
    Ok((
        tape.value(t.clf).item(),
        tape.value(t.del).item(),
        tape.value(t.var).item(),
    ))
}

pub fn loss_clf(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target: usize,
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    Ok(scalar_terms(model, x, target, 0.0, 0.0, samples, rng)?.0)
}

pub fn loss_del(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target: usize,
    delta: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    Ok(scalar_terms(model, x, target, delta, 0.0, samples, rng)?.1)
}

pub fn loss_var(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target: usize,
    epsilon: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    Ok(scalar_terms(model, x, target, 0.0, epsilon, samples, rng)?.2)
}

pub fn loss_ldist(vae: &Vae, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    Ok(squared_distance(&vae.encode_mean(x)?, &vae.encode_mean(x_prime)?))
}

/// Hinge on the mean: `max((1 - δ) - mean, 0)`.
pub fn delta_hinge(mean: f64, delta: f64) -> f64 {
    ((1.0 - delta) - mean).max(0.0)
}

/// Hinge on the variance: `max(variance - ε, 0)`.
pub fn variance_hinge(variance: f64, epsilon: f64) -> f64 {
    (variance - epsilon).max(0.0)
}
