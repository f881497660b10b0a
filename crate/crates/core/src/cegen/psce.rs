use serde::{Deserialize, Serialize};

use super::loss::{elbo_term, ldist_term, posterior_terms};
use super::{check_thresholds, prepare, CounterfactualResult, EarlyStop, EvaluationPolicy, LossRecord};
use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::generative::{ElboEstimator, Vae};
use crate::models::{argmax, PosteriorClassifier};
use crate::rng;
use crate::tape::{ComputationTape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsceConfig {
    pub lambda_clf: f64,
    pub lambda_del: f64,
    pub lambda_ldist: f64,
    pub lambda_var: f64,
    pub lambda_elbo: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Posterior draws per optimization step.
    pub samples: usize,
    pub early_stop: EarlyStop,
    pub elbo_estimator: ElboEstimator,
}

impl Default for PsceConfig {
    /// Unit weights with early stopping; the dataset presets run the full iteration budget instead.
    fn default() -> Self {
        Self {
            lambda_clf: 1.0,
            lambda_del: 1.0,
            lambda_ldist: 0.001,
            lambda_var: 1.0,
            lambda_elbo: 0.002,
            delta: 0.05,
            epsilon: 0.01,
            learning_rate: 0.1,
            max_iterations: 2000,
            samples: 30,
            early_stop: EarlyStop::Sustained(10),
            elbo_estimator: ElboEstimator::ClosedFormKl,
        }
    }
}

impl PsceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("lambda_clf", self.lambda_clf),
            ("lambda_del", self.lambda_del),
            ("lambda_ldist", self.lambda_ldist),
            ("lambda_var", self.lambda_var),
            ("lambda_elbo", self.lambda_elbo),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {l} must be >= 0")));
            }
        }
        check_thresholds(self.delta, self.epsilon)?;
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()
    }

    /// Only the classification term, as in plain posterior-NLL descent.
    pub fn classification_only(&self) -> Self {
        Self {
            lambda_del: 0.0,
            lambda_ldist: 0.0,
            lambda_var: 0.0,
            lambda_elbo: 0.0,
            ..self.clone()
        }
    }
}

/// Accumulates `λ * term` into `total`, skipping zero weights entirely.
pub(crate) fn add_weighted(tape: &mut ComputationTape, total: &mut Option<Var>, weight: f64, term: Var) {
    if weight == 0.0 {
        return;
    }
    let t = tape.scale(term, weight);
    *total = Some(match *total {
        Some(acc) => tape.add(acc, t),
        None => t,
    });
}

/// Optimizes `λ1 L_clf + λ2 L_del + λ3 L_ldist + λ4 L_var − λ5 L_ELBO` over `x'`,
/// starting from `x`.
///
/// Each iteration draws fresh posterior samples (shared by the three
/// posterior terms) and one fresh latent sample for the ELBO. The result is
/// returned whether or not the constraints were met.
pub fn generate_psce(
    model: &dyn PosteriorClassifier,
    vae: Option<&Vae>,
    x: &[f64],
    target: Option<usize>,
    config: &PsceConfig,
    seed: u64,
    policy: &EvaluationPolicy,
) -> Result<CounterfactualResult> {
    config.validate()?;
    let start = prepare(model, x, target, policy)?;
    if start.y_orig == start.target {
        return CounterfactualResult::finish("psce", model, policy, &start, start.x.clone(), 0, Vec::new());
    }
    let needs_vae = config.lambda_ldist > 0.0 || config.lambda_elbo > 0.0;
    let vae = match (needs_vae, vae) {
        (true, None) => {
            return Err(Error::InvalidConfig(
                "PSCE with latent or ELBO terms needs a VAE".into(),
            ))
        }
        (true, Some(v)) => {
            if v.input_dim != x.len() {
                return Err(Error::dimension("VAE input", v.input_dim, x.len()));
            }
            Some(v)
        }
        (false, _) => None,
    };
    let mu_orig = match vae {
        Some(v) if config.lambda_ldist > 0.0 => Some(v.encode_mean(x)?),
        _ => None,
    };

    let mut x_cf = Tensor::vector(x.to_vec());
    let mut adam = AdamState::new(x_cf.shape(), AdamConfig::with_learning_rate(config.learning_rate));
    let mut trace = Vec::with_capacity(config.max_iterations);
    let mut satisfied = 0;
    let mut iterations = 0;

    for it in 0..config.max_iterations {
        let mut omega = rng::stream(seed, &[rng::label::POSTERIOR, it as u64]);
        let mut tape = ComputationTape::new();
        let xv = tape.leaf(x_cf.clone());
        let terms = posterior_terms(
            &mut tape,
            model,
            xv,
            start.target,
            config.delta,
            config.epsilon,
            config.samples,
            &mut omega,
        );
        let mut record = LossRecord::new(it);
        record.clf = Some(tape.value(terms.clf).item());
        record.del = Some(tape.value(terms.del).item());
        record.var = Some(tape.value(terms.var).item());

        let mut total = None;
        add_weighted(&mut tape, &mut total, config.lambda_clf, terms.clf);
        add_weighted(&mut tape, &mut total, config.lambda_del, terms.del);
        add_weighted(&mut tape, &mut total, config.lambda_var, terms.var);
        if let Some(v) = vae {
            let vars = v.bind(&mut tape, false);
            if let Some(mu) = &mu_orig {
                let ld = ldist_term(&mut tape, v, &vars, mu, xv);
                record.ldist = Some(tape.value(ld).item());
                add_weighted(&mut tape, &mut total, config.lambda_ldist, ld);
            }
            if config.lambda_elbo > 0.0 {
                let mut noise = rng::stream(seed, &[rng::label::VAE_NOISE, it as u64]);
                let e = elbo_term(&mut tape, v, &vars, xv, config.elbo_estimator, &mut noise);
                record.elbo = Some(tape.value(e).item());
                add_weighted(&mut tape, &mut total, -config.lambda_elbo, e);
            }
        }
        record.total = total.map(|t| tape.value(t).item()).unwrap_or(0.0);
        let finite = record.total.is_finite();
        trace.push(record);
        if !finite {
            return Err(Error::NonFiniteLoss { iteration: it, trace });
        }
        iterations = it + 1;

        if let EarlyStop::Sustained(n) = config.early_stop {
            let lp = tape.value(terms.log_probs);
            let (s, c) = lp.matrix_dims();
            let means: Vec<f64> = (0..c)
                .map(|k| (0..s).map(|r| lp.row(r)[k].exp()).sum::<f64>() / s as f64)
                .collect();
            let ok = tape.value(terms.del).item() == 0.0
                && tape.value(terms.var).item() == 0.0
                && argmax(&means) == start.target;
            satisfied = if ok { satisfied + 1 } else { 0 };
            if satisfied >= n {
                break;
            }
        }

        if let Some(t) = total {
            let g = tape.backward(t)?.wrt(xv);
            if !g.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: it, trace });
            }
            adam.step(&mut x_cf, &g)?;
        }
    }
    CounterfactualResult::finish("psce", model, policy, &start, x_cf.into_data(), iterations, trace)
}
