use serde::{Deserialize, Serialize};

use super::loss::{posterior_terms, prox_term};
use super::psce::add_weighted;
use super::{prepare, CounterfactualResult, EarlyStop, EvaluationPolicy, LossRecord};
use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::models::{argmax, PosteriorClassifier};
use crate::rng;
use crate::tape::ComputationTape;
use crate::tensor::Tensor;

/// Posterior NLL with an input-space L2 proximity penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesCfConfig {
    pub lambda_prox: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub samples: usize,
    /// `Sustained(n)` stops after `n` consecutive iterations predicted as the target.
    pub early_stop: EarlyStop,
}

impl Default for BayesCfConfig {
    fn default() -> Self {
        Self {
            lambda_prox: 0.001,
            learning_rate: 0.1,
            max_iterations: 2000,
            samples: 30,
            early_stop: EarlyStop::Sustained(10),
        }
    }
}

impl BayesCfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_prox >= 0.0 && self.lambda_prox.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_prox {} must be >= 0",
                self.lambda_prox
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()
    }
}

fn class_means(lp: &Tensor) -> Vec<f64> {
    let (s, c) = lp.matrix_dims();
    (0..c)
        .map(|k| (0..s).map(|r| lp.row(r)[k].exp()).sum::<f64>() / s as f64)
        .collect()
}

/// Minimizes `−(1/S) Σ log p(y'|x', ω_s) + λ_prox ||x' − x||²` with Adam from `x' = x`.
///
/// Posterior draws come from the same streams as [`super::generate_psce`], so
/// with `λ_prox = 0` both follow the same trajectory as PSCE with only the
/// classification term.
pub fn generate_bayescf(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target: Option<usize>,
    config: &BayesCfConfig,
    seed: u64,
    policy: &EvaluationPolicy,
) -> Result<CounterfactualResult> {
    config.validate()?;
    let start = prepare(model, x, target, policy)?;
    if start.y_orig == start.target {
        return CounterfactualResult::finish("bayescf", model, policy, &start, start.x.clone(), 0, Vec::new());
    }
    let mut x_cf = Tensor::vector(x.to_vec());
    let mut adam = AdamState::new(x_cf.shape(), AdamConfig::with_learning_rate(config.learning_rate));
    let mut trace = Vec::with_capacity(config.max_iterations);
    let mut satisfied = 0;
    let mut iterations = 0;
    for it in 0..config.max_iterations {
        let mut omega = rng::stream(seed, &[rng::label::POSTERIOR, it as u64]);
        let mut tape = ComputationTape::new();
        let xv = tape.leaf(x_cf.clone());
        let terms = posterior_terms(&mut tape, model, xv, start.target, 0.0, 0.0, config.samples, &mut omega);
        let prox = prox_term(&mut tape, x, xv);
        let mut total = None;
        add_weighted(&mut tape, &mut total, 1.0, terms.clf);
        add_weighted(&mut tape, &mut total, config.lambda_prox, prox);
        let total = total.expect("classification term always present");

        let mut record = LossRecord::new(it);
        record.clf = Some(tape.value(terms.clf).item());
        record.prox = Some(tape.value(prox).item());
        record.total = tape.value(total).item();
        let finite = record.total.is_finite();
        trace.push(record);
        if !finite {
            return Err(Error::NonFiniteLoss { iteration: it, trace });
        }
        iterations = it + 1;
        if let EarlyStop::Sustained(n) = config.early_stop {
            let ok = argmax(&class_means(tape.value(terms.log_probs))) == start.target;
            satisfied = if ok { satisfied + 1 } else { 0 };
            if satisfied >= n {
                break;
            }
        }
        let g = tape.backward(total)?.wrt(xv);
        if !g.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, trace });
        }
        adam.step(&mut x_cf, &g)?;
    }
    CounterfactualResult::finish("bayescf", model, policy, &start, x_cf.into_data(), iterations, trace)
}

/// Greedy single-feature search in the spirit of Schut et al.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchutConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    pub max_changes_per_feature: usize,
    /// Stop once the mean predictive probability of the target reaches this value.
    pub confidence_threshold: f64,
    pub samples: usize,
}

impl Default for SchutConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            max_iterations: 2000,
            max_changes_per_feature: 20,
            confidence_threshold: 0.95,
            samples: 30,
        }
    }
}

impl SchutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step_size {} must be > 0",
                self.step_size
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidConfig("confidence_threshold outside [0, 1]".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        Ok(())
    }
}

/// Each iteration moves exactly one feature by `step_size` against the
/// gradient of the posterior NLL: the feature with the largest absolute
/// gradient among those changed fewer than `max_changes_per_feature` times
/// (ties go to the lowest index).
///
/// Stops when the target's mean probability reaches the threshold, when
/// every feature is exhausted, when the gradient vanishes, or at
/// `max_iterations`.
pub fn generate_schut_greedy(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target: Option<usize>,
    config: &SchutConfig,
    seed: u64,
    policy: &EvaluationPolicy,
) -> Result<CounterfactualResult> {
    config.validate()?;
    let start = prepare(model, x, target, policy)?;
    if start.y_orig == start.target {
        return CounterfactualResult::finish("schut", model, policy, &start, start.x.clone(), 0, Vec::new());
    }
    let mut x_cf = x.to_vec();
    let mut changes = vec![0usize; x.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for it in 0..config.max_iterations {
        let mut omega = rng::stream(seed, &[rng::label::POSTERIOR, it as u64]);
        let mut tape = ComputationTape::new();
        let xv = tape.leaf(Tensor::vector(x_cf.clone()));
        let terms = posterior_terms(&mut tape, model, xv, start.target, 0.0, 0.0, config.samples, &mut omega);
        let mut record = LossRecord::new(it);
        record.clf = Some(tape.value(terms.clf).item());
        record.total = record.clf.unwrap();
        let finite = record.total.is_finite();
        trace.push(record);
        if !finite {
            return Err(Error::NonFiniteLoss { iteration: it, trace });
        }
        iterations = it + 1;
        if tape.value(terms.mean).item() >= config.confidence_threshold {
            break;
        }
        let g = tape.backward(terms.clf)?.wrt(xv);
        let pick = (0..x_cf.len())
            .filter(|&j| changes[j] < config.max_changes_per_feature)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if g.data()[b].abs() >= g.data()[j].abs() => Some(b),
                _ => Some(j),
            });
        let Some(j) = pick else { break };
        let gj = g.data()[j];
        if gj == 0.0 || !gj.is_finite() {
            break;
        }
        x_cf[j] -= config.step_size * gj.signum();
        changes[j] += 1;
    }
    CounterfactualResult::finish("schut", model, policy, &start, x_cf, iterations, trace)
}
