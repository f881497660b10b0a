//! Robustness of a counterfactual under a posterior update.
//!
//! If the posterior moves from `p1(ω)` to `p2(ω)`, the predictive probability
//! of the target class can drop by at most the total variation distance
//! between the two, twice over, and Pinsker turns a KL divergence into such a
//! distance. This module holds that arithmetic, the closed-form KL between
//! factorized Gaussians, and the inverse "how much KL can I afford" budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{extract_gaussian_posterior, predictive_summary, Classifier, GaussianPosterior, PredictiveSummary};
use crate::rng;

/// Largest variance of a quantity bounded in `[0, 1]`.
pub const MAX_VARIANCE: f64 = 0.25;

/// `D_KL(q ‖ p)` for factorized Gaussians.
///
/// The first argument is the new posterior, the second the old one.
pub fn diag_gaussian_kl(q: &GaussianPosterior, p: &GaussianPosterior) -> Result<f64> {
    diag_gaussian_kl_raw(&q.mus, &q.variances, &p.mus, &p.variances)
}

/// [`diag_gaussian_kl`] on bare mean/variance slices.
pub fn diag_gaussian_kl_raw(q_mu: &[f64], q_var: &[f64], p_mu: &[f64], p_var: &[f64]) -> Result<f64> {
    let n = q_mu.len();
    for (what, len) in [
        ("q variances", q_var.len()),
        ("p means", p_mu.len()),
        ("p variances", p_var.len()),
    ] {
        if len != n {
            return Err(Error::Dimension {
                context: "diag_gaussian_kl",
                expected: format!("{n} {what}"),
                found: len.to_string(),
            });
        }
    }
    if let Some(v) = q_var.iter().chain(p_var).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Contract(format!("variance {v} is not positive")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let d = q_mu[i] - p_mu[i];
        let ratio = q_var[i] / p_var[i];
        total += 0.5 * (ratio - 1.0 - ratio.ln() + d * d / p_var[i]);
    }
    Ok(total.max(0.0))
}

/// Pinsker: total variation is at most `√(kl / 2)`.
pub fn pinsker_tv(kl: f64) -> f64 {
    (kl.max(0.0) / 2.0).sqrt()
}

/// `p1 − 2√(kl/2)`, unclamped.
pub fn raw_predictive_lower_bound(p1: f64, kl: f64) -> f64 {
    p1 - 2.0 * pinsker_tv(kl)
}

/// Lower bound on the post-update predictive probability, clamped at 0.
pub fn predictive_lower_bound(p1: f64, kl: f64) -> f64 {
    raw_predictive_lower_bound(p1, kl).max(0.0)
}

/// The same bound stated for any δ-safe point, using `1 − δ` in place of `p1`.
pub fn conservative_lower_bound(delta: f64, kl: f64) -> f64 {
    predictive_lower_bound(1.0 - delta, kl)
}

/// `var1 + 6√(kl/2)`, unclamped.
pub fn raw_variance_upper_bound(var1: f64, kl: f64) -> f64 {
    var1 + 6.0 * pinsker_tv(kl)
}

/// Upper bound on the post-update predictive variance, clamped at 0.25.
pub fn variance_upper_bound(var1: f64, kl: f64) -> f64 {
    raw_variance_upper_bound(var1, kl).min(MAX_VARIANCE)
}

/// Largest KL for which [`predictive_lower_bound`] stays at or above `threshold`.
pub fn kl_budget_for_probability(p1: f64, threshold: f64) -> f64 {
    if p1 <= threshold {
        return 0.0;
    }
    (p1 - threshold).powi(2) / 2.0
}

/// [`kl_budget_for_probability`] for a δ-safe point.
pub fn kl_budget_for_delta(delta: f64, threshold: f64) -> f64 {
    kl_budget_for_probability(1.0 - delta, threshold)
}

/// Largest KL for which [`variance_upper_bound`] stays at or below `cap`.
pub fn kl_budget_for_variance(epsilon: f64, cap: f64) -> f64 {
    if cap <= epsilon {
        return 0.0;
    }
    (cap - epsilon).powi(2) / 18.0
}

/// Which baseline probability the reported `lower_bound` was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    /// Measured `p1` of the counterfactual.
    ObservedProbability,
}

/// How a [`BoundReport`] is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSettings {
    pub samples: usize,
    pub seed: u64,
    /// Used only for the conservative bound.
    pub delta: f64,
    /// Monte Carlo slack, in combined standard errors, for the tolerant checks.
    pub slack_std_errors: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            delta: 0.05,
            slack_std_errors: 3.0,
        }
    }
}

/// Before/after comparison of one counterfactual across a model update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub label: String,
    pub before: String,
    pub after: String,
    pub target_class: usize,
    pub samples: usize,
    pub p1: f64,
    pub p2: f64,
    pub var1: f64,
    pub var2: f64,
    /// `D_KL(after ‖ before)`.
    pub kl: f64,
    pub bound_form: BoundForm,
    pub lower_bound: f64,
    pub raw_lower_bound: f64,
    pub delta: f64,
    pub conservative_lower_bound: f64,
    pub variance_upper_bound: f64,
    pub raw_variance_upper_bound: f64,
    pub p1_std_error: f64,
    pub p2_std_error: f64,
    pub var1_std_error: f64,
    pub var2_std_error: f64,
    pub holds: bool,
    pub variance_holds: bool,
    pub holds_within_mc_error: bool,
    pub variance_holds_within_mc_error: bool,
}

/// Standard error of a population variance estimate.
fn variance_std_error(s: &PredictiveSummary) -> f64 {
    let n = s.per_sample_probs.len() as f64;
    let m4 = s.per_sample_probs.iter().map(|p| (p - s.mean).powi(4)).sum::<f64>() / n;
    ((m4 - s.variance * s.variance).max(0.0) / n).sqrt()
}

impl BoundReport {
    pub const TABLE_COLUMNS: [&'static str; 6] = ["update", "p1", "p2", "kl", "bound", "holds"];

    pub fn from_summaries(
        before: &PredictiveSummary,
        after: &PredictiveSummary,
        kl: f64,
        delta: f64,
        slack_std_errors: f64,
    ) -> Result<Self> {
        if before.target_class != after.target_class {
            return Err(Error::Contract("summaries are for different classes".into()));
        }
        if !(kl >= 0.0) {
            return Err(Error::Contract(format!("kl {kl} is negative")));
        }
        let (p1, p2, var1, var2) = (before.mean, after.mean, before.variance, after.variance);
        let lower_bound = predictive_lower_bound(p1, kl);
        let var_up = variance_upper_bound(var1, kl);
        let (se1, se2) = (before.std_error(), after.std_error());
        let (vse1, vse2) = (variance_std_error(before), variance_std_error(after));
        let p_slack = slack_std_errors * (se1 * se1 + se2 * se2).sqrt();
        let v_slack = slack_std_errors * (vse1 * vse1 + vse2 * vse2).sqrt();
        Ok(Self {
            label: String::new(),
            before: String::new(),
            after: String::new(),
            target_class: before.target_class,
            samples: before.sample_count.min(after.sample_count),
            p1,
            p2,
            var1,
            var2,
            kl,
            bound_form: BoundForm::ObservedProbability,
            lower_bound,
            raw_lower_bound: raw_predictive_lower_bound(p1, kl),
            delta,
            conservative_lower_bound: conservative_lower_bound(delta, kl),
            variance_upper_bound: var_up,
            raw_variance_upper_bound: raw_variance_upper_bound(var1, kl),
            p1_std_error: se1,
            p2_std_error: se2,
            var1_std_error: vse1,
            var2_std_error: vse2,
            holds: p2 >= lower_bound,
            variance_holds: var2 <= var_up,
            holds_within_mc_error: p2 + p_slack >= lower_bound,
            variance_holds_within_mc_error: var2 - v_slack <= var_up,
        })
    }

    /// Combined standard error of `p2 − p1`.
    pub fn combined_std_error(&self) -> f64 {
        self.p1_std_error.hypot(self.p2_std_error)
    }

    /// `|p2 − p1| ≤ 2√(kl/2) + n_se · combined_std_error()`.
    pub fn pinsker_consistent(&self, n_se: f64) -> bool {
        (self.p2 - self.p1).abs() <= 2.0 * pinsker_tv(self.kl) + n_se * self.combined_std_error()
    }

    pub fn table_record(&self) -> [String; 6] {
        [
            self.label.clone(),
            format!("{:.6}", self.p1),
            format!("{:.6}", self.p2),
            format!("{:.9}", self.kl),
            format!("{:.6}", self.lower_bound),
            self.holds.to_string(),
        ]
    }
}

/// Measures one counterfactual on both models and compares against the bounds.
///
/// Both summaries use the same random stream so that small model changes are
/// not swamped by sampling noise.
pub fn build_bound_report(
    before: &Classifier,
    after: &Classifier,
    x: &[f64],
    target: usize,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    let q_old = extract_gaussian_posterior(before)?;
    let q_new = extract_gaussian_posterior(after)?;
    if before.sizes() != after.sizes() {
        return Err(Error::Dimension {
            context: "build_bound_report architecture",
            expected: format!("{:?}", before.sizes()),
            found: format!("{:?}", after.sizes()),
        });
    }
    if !(settings.slack_std_errors >= 0.0) {
        return Err(Error::InvalidConfig("slack must be non-negative".into()));
    }
    let kl = diag_gaussian_kl(&q_new, &q_old)?;
    let draw = || rng::stream(settings.seed, &[rng::label::EVALUATION]);
    let s1 = predictive_summary(before, x, target, settings.samples, &mut draw())?;
    let s2 = predictive_summary(after, x, target, settings.samples, &mut draw())?;
    let mut report = BoundReport::from_summaries(&s1, &s2, kl, settings.delta, settings.slack_std_errors)?;
    report.before = "before".into();
    report.after = "after".into();
    Ok(report)
}
