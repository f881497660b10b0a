//! Counterfactual generators.
//!
//! [`generate_psce`] optimizes the probabilistically safe objective; the
//! BayesCF-style and greedy (Schut-style) baselines share the same result
//! type and the same evaluation policy so their outputs are directly
//! comparable.

mod baselines;
pub mod loss;
mod presets;
mod psce;

use serde::{Deserialize, Serialize};

pub use self::baselines::{generate_bayescf, generate_schut_greedy, BayesCfConfig, SchutConfig};
pub use self::presets::Preset;
pub use self::psce::{generate_psce, PsceConfig};

use crate::error::{Error, Result};
use crate::generative::Vae;
use crate::models::{argmax, sample_probabilities, PosteriorClassifier, PredictiveSummary};
use crate::rng;

/// Per-iteration objective values. Terms that are not part of a method's
/// objective, or whose weight is zero, are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub del: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ldist: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub elbo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prox: Option<f64>,
}

impl LossRecord {
    pub(crate) fn new(iteration: usize) -> Self {
        Self {
            iteration,
            total: 0.0,
            clf: None,
            del: None,
            ldist: None,
            var: None,
            elbo: None,
            prox: None,
        }
    }
}

/// When an optimizer may stop before `max_iterations`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    /// Always run every iteration.
    Never,
    /// Stop once the stopping condition has held for this many consecutive iterations.
    Sustained(usize),
}

/// How final summaries, validity and set membership are measured. Every
/// method is judged with the same policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPolicy {
    pub samples: usize,
    pub seed: u64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for EvaluationPolicy {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0,
            delta: 0.05,
            epsilon: 0.01,
        }
    }
}

impl EvaluationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::InvalidConfig("evaluation needs at least 2 samples".into()));
        }
        check_thresholds(self.delta, self.epsilon)
    }

    /// Summary of `target` at `x` and the predicted class, from one set of draws.
    ///
    /// The draw stream depends only on the policy seed, so two methods that
    /// return the same point get the same verdict.
    pub fn evaluate(
        &self,
        model: &dyn PosteriorClassifier,
        x: &[f64],
        target: usize,
    ) -> Result<(PredictiveSummary, usize)> {
        let mut r = rng::stream(self.seed, &[rng::label::EVALUATION]);
        let probs = sample_probabilities(model, x, self.samples, &mut r)?;
        let c = model.num_classes();
        if target >= c {
            return Err(Error::InvalidClass {
                class: target,
                num_classes: c,
            });
        }
        let mut means = vec![0.0; c];
        let mut column = Vec::with_capacity(self.samples);
        for s in 0..self.samples {
            let row = probs.row(s);
            for (m, p) in means.iter_mut().zip(row) {
                *m += p / self.samples as f64;
            }
            column.push(row[target]);
        }
        Ok((PredictiveSummary::from_probs(target, column)?, argmax(&means)))
    }
}

pub(crate) fn check_thresholds(delta: f64, epsilon: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!("delta {delta} outside [0, 1]")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!("epsilon {epsilon} must be >= 0")));
    }
    Ok(())
}

/// `(δ-safe, ε-robust, in the ⟨δ,ε⟩-set)`. Boundary values satisfy both predicates.
pub fn delta_eps_membership(summary: &PredictiveSummary, delta: f64, epsilon: f64) -> (bool, bool, bool) {
    let safe = summary.mean >= 1.0 - delta;
    let robust = summary.variance <= epsilon;
    (safe, robust, safe && robust)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub method: String,
    pub x_orig: Vec<f64>,
    pub x_cf: Vec<f64>,
    pub y_orig: usize,
    pub y_target: usize,
    pub iterations_used: usize,
    /// Set when the input was already assigned the target class and was returned unchanged.
    pub already_target: bool,
    #[serde(default)]
    pub loss_trace: Vec<LossRecord>,
    pub final_summary: PredictiveSummary,
    pub delta: f64,
    pub epsilon: f64,
    pub is_valid: bool,
    pub is_delta_safe: bool,
    pub is_eps_robust: bool,
    pub in_delta_eps_set: bool,
}

impl CounterfactualResult {
    /// Membership flags recomputed from the stored per-sample probabilities.
    pub fn recompute_flags(&self) -> Result<(bool, bool, bool)> {
        let s = PredictiveSummary::from_probs(self.y_target, self.final_summary.per_sample_probs.clone())?;
        Ok(delta_eps_membership(&s, self.delta, self.epsilon))
    }

    pub(crate) fn finish(
        method: &str,
        model: &dyn PosteriorClassifier,
        policy: &EvaluationPolicy,
        start: &Start,
        x_cf: Vec<f64>,
        iterations_used: usize,
        loss_trace: Vec<LossRecord>,
    ) -> Result<Self> {
        let (summary, predicted) = policy.evaluate(model, &x_cf, start.target)?;
        let (safe, robust, in_set) = delta_eps_membership(&summary, policy.delta, policy.epsilon);
        Ok(Self {
            method: method.to_string(),
            x_orig: start.x.clone(),
            x_cf,
            y_orig: start.y_orig,
            y_target: start.target,
            iterations_used,
            already_target: start.y_orig == start.target,
            loss_trace,
            final_summary: summary,
            delta: policy.delta,
            epsilon: policy.epsilon,
            is_valid: predicted == start.target,
            is_delta_safe: safe,
            is_eps_robust: robust,
            in_delta_eps_set: in_set,
        })
    }
}

/// Validated input shared by all generators.
pub(crate) struct Start {
    pub x: Vec<f64>,
    pub y_orig: usize,
    pub target: usize,
}

/// Default target for an input predicted as `class`: the next class, cyclically.
pub fn default_target(class: usize, num_classes: usize) -> usize {
    (class + 1) % num_classes
}

pub(crate) fn prepare(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target: Option<usize>,
    policy: &EvaluationPolicy,
) -> Result<Start> {
    policy.validate()?;
    if x.len() != model.input_dim() {
        return Err(Error::dimension("counterfactual input", model.input_dim(), x.len()));
    }
    let c = model.num_classes();
    // The original prediction uses the evaluation policy so every method sees the same y.
    let (_, y_orig) = policy.evaluate(model, x, 0)?;
    let target = target.unwrap_or_else(|| default_target(y_orig, c));
    if target >= c {
        return Err(Error::InvalidClass {
            class: target,
            num_classes: c,
        });
    }
    Ok(Start {
        x: x.to_vec(),
        y_orig,
        target,
    })
}

/// A configured generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Psce(PsceConfig),
    Bayescf(BayesCfConfig),
    Schut(SchutConfig),
}

impl Method {
    pub const NAMES: [&'static str; 3] = ["psce", "bayescf", "schut"];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Psce(_) => "psce",
            Method::Bayescf(_) => "bayescf",
            Method::Schut(_) => "schut",
        }
    }

    /// The method's configuration from `preset`.
    pub fn from_name(name: &str, preset: Preset) -> Result<Self> {
        match name {
            "psce" => Ok(Method::Psce(preset.psce())),
            "bayescf" => Ok(Method::Bayescf(preset.bayescf())),
            "schut" => Ok(Method::Schut(preset.schut())),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (valid: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn needs_vae(&self) -> bool {
        matches!(self, Method::Psce(c) if c.lambda_ldist > 0.0 || c.lambda_elbo > 0.0)
    }

    pub fn generate(
        &self,
        model: &dyn PosteriorClassifier,
        vae: Option<&Vae>,
        x: &[f64],
        target: Option<usize>,
        seed: u64,
        policy: &EvaluationPolicy,
    ) -> Result<CounterfactualResult> {
        match self {
            Method::Psce(c) => generate_psce(model, vae, x, target, c, seed, policy),
            Method::Bayescf(c) => generate_bayescf(model, x, target, c, seed, policy),
            Method::Schut(c) => generate_schut_greedy(model, x, target, c, seed, policy),
        }
    }
}
