//! Incremental-update experiment: how far does a counterfactual's predictive
//! probability move when the model is fine-tuned on a little more data?

use serde::{Deserialize, Serialize};

use crate::bounds::{build_bound_report, BoundReport, BoundSettings};
use crate::cegen::{generate_psce, CounterfactualResult, EvaluationPolicy, PsceConfig};
use crate::data::{increment_schedule, Dataset, IncrementSchedule};
use crate::error::{Error, Result};
use crate::generative::{train_vae, FitConfig, Vae};
use crate::models::{accuracy, tabular_sizes, train, BayesMlp, Classifier, TrainConfig, Trainable};
use crate::rng;

/// Which counterfactual the bounds are checked on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CounterfactualSource {
    /// Run PSCE on test instances in order until one result is δ-safe.
    Generate { psce: PsceConfig, max_attempts: usize },
    /// Use a given point and target class.
    Given { x_cf: Vec<f64>, target: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChangeConfig {
    pub base_fraction: f64,
    pub increment_fraction: f64,
    pub schedule_seed: u64,
    pub model_seed: u64,
    pub prior_sigma: f64,
    pub base_training: TrainConfig,
    pub vae_fit: FitConfig,
    /// Applied once per increment, to the model from the previous step, on the
    /// cumulative training set.
    pub finetune: TrainConfig,
    pub source: CounterfactualSource,
    pub counterfactual_seed: u64,
    pub policy: EvaluationPolicy,
    pub bounds: BoundSettings,
}

impl Default for ModelChangeConfig {
    fn default() -> Self {
        Self {
            base_fraction: 0.95,
            increment_fraction: 0.01,
            schedule_seed: 0,
            model_seed: 0,
            prior_sigma: 0.1,
            base_training: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            vae_fit: FitConfig {
                epochs: 20,
                ..FitConfig::default()
            },
            finetune: TrainConfig {
                epochs: 3,
                learning_rate: 1e-5,
                trainable: Trainable::FinalOnly,
                ..TrainConfig::default()
            },
            source: CounterfactualSource::Generate {
                psce: crate::cegen::Preset::Synthetic.psce(),
                max_attempts: 20,
            },
            counterfactual_seed: 0,
            policy: EvaluationPolicy::default(),
            bounds: BoundSettings::default(),
        }
    }
}

/// The trained base model and the counterfactual every increment is measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub model: Classifier,
    pub vae: Option<Vae>,
    pub schedule: IncrementSchedule,
    pub base_test_accuracy: Option<f64>,
    pub x_cf: Vec<f64>,
    pub target: usize,
    /// Present when the counterfactual was generated here.
    pub counterfactual: Option<CounterfactualResult>,
    /// Test row the counterfactual was generated from.
    pub instance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChangeReport {
    pub baseline: Baseline,
    pub learning_rate: f64,
    pub reports: Vec<BoundReport>,
}

fn percent_label(size: usize, total: usize) -> String {
    format!("{}%", (100.0 * size as f64 / total as f64).round() as i64)
}

/// Trains the base BNN on the first schedule set and fixes the counterfactual.
pub fn prepare_baseline(data: &Dataset, config: &ModelChangeConfig) -> Result<Baseline> {
    let schedule = increment_schedule(
        data,
        config.base_fraction,
        config.increment_fraction,
        config.schedule_seed,
    )?;
    let sizes = tabular_sizes(data.n_features(), data.num_classes());
    let mut model = Classifier::Bnn(BayesMlp::new(&sizes, config.prior_sigma, config.model_seed)?);
    train(&mut model, data, &schedule.sets[0], &config.base_training)?;
    baseline_from_model(data, config, schedule, model, None)
}

/// Like [`prepare_baseline`] with an already trained base model and, optionally, VAE.
pub fn baseline_from_model(
    data: &Dataset,
    config: &ModelChangeConfig,
    schedule: IncrementSchedule,
    model: Classifier,
    vae: Option<Vae>,
) -> Result<Baseline> {
    if matches!(model, Classifier::Dropout(_)) {
        return Err(Error::UnsupportedModel(
            "the model-change experiment needs a Bayesian network".into(),
        ));
    }
    if model.sizes()[0] != data.n_features() {
        return Err(Error::dimension(
            "model-change features",
            model.sizes()[0],
            data.n_features(),
        ));
    }
    let test = &data.split.test;
    let base_test_accuracy = if test.is_empty() {
        None
    } else {
        let mut r = rng::stream(config.policy.seed, &[rng::label::EVALUATION, 1]);
        Some(accuracy(&model, data, test, config.policy.samples, &mut r)?)
    };

    let (x_cf, target, counterfactual, instance, vae) = match &config.source {
        CounterfactualSource::Given { x_cf, target } => (x_cf.clone(), *target, None, None, vae),
        CounterfactualSource::Generate { psce, max_attempts } => {
            let vae = match vae {
                Some(v) => Some(v),
                None if psce.lambda_ldist > 0.0 || psce.lambda_elbo > 0.0 => {
                    let mut v = Vae::tabular(data.n_features(), config.model_seed)?;
                    train_vae(&mut v, data, &schedule.sets[0], &config.vae_fit)?;
                    Some(v)
                }
                None => None,
            };
            let pool = if test.is_empty() { &data.split.train } else { test };
            let mut found = None;
            for (k, &i) in pool.iter().take(*max_attempts).enumerate() {
                let seed = rng::derive_seed(config.counterfactual_seed, &[k as u64]);
                let r = generate_psce(&model, vae.as_ref(), data.row(i), None, psce, seed, &config.policy)?;
                if r.is_valid && r.is_delta_safe {
                    found = Some((i, r));
                    break;
                }
            }
            let (i, r) = found.ok_or_else(|| {
                Error::InvalidConfig(format!("no δ-safe counterfactual within {max_attempts} attempts"))
            })?;
            (r.x_cf.clone(), r.y_target, Some(r), Some(i), vae)
        }
    };
    Ok(Baseline {
        model,
        vae,
        schedule,
        base_test_accuracy,
        x_cf,
        target,
        counterfactual,
        instance,
    })
}

/// Chained fine-tunes over the schedule, one bound report per increment.
pub fn run_increments(
    data: &Dataset,
    baseline: &Baseline,
    finetune: &TrainConfig,
    bounds: &BoundSettings,
) -> Result<Vec<BoundReport>> {
    if matches!(baseline.model, Classifier::Dropout(_)) {
        return Err(Error::UnsupportedModel(
            "the model-change experiment needs a Bayesian network".into(),
        ));
    }
    let total = data.split.train.len();
    let sets = &baseline.schedule.sets;
    let mut current = baseline.model.clone();
    let mut reports = Vec::with_capacity(sets.len().saturating_sub(1));
    for (step, pair) in sets.windows(2).enumerate() {
        let mut next = current.clone();
        let cfg = TrainConfig {
            seed: rng::derive_seed(finetune.seed, &[step as u64]),
            ..finetune.clone()
        };
        train(&mut next, data, &pair[1], &cfg)?;
        let mut report = build_bound_report(&current, &next, &baseline.x_cf, baseline.target, bounds)?;
        let (from, to) = (percent_label(pair[0].len(), total), percent_label(pair[1].len(), total));
        report.label = format!("{from} → {to}");
        report.before = format!("model@{from}");
        report.after = format!("model@{to}");
        reports.push(report);
        current = next;
    }
    Ok(reports)
}

pub fn model_change(data: &Dataset, config: &ModelChangeConfig) -> Result<ModelChangeReport> {
    let baseline = prepare_baseline(data, config)?;
    let reports = run_increments(data, &baseline, &config.finetune, &config.bounds)?;
    Ok(ModelChangeReport {
        baseline,
        learning_rate: config.finetune.learning_rate,
        reports,
    })
}

/// The same base model, counterfactual and fine-tune seeds at several learning rates.
pub fn learning_rate_sweep(
    data: &Dataset,
    config: &ModelChangeConfig,
    learning_rates: &[f64],
) -> Result<Vec<ModelChangeReport>> {
    let baseline = prepare_baseline(data, config)?;
    learning_rates
        .iter()
        .map(|&lr| {
            let finetune = TrainConfig {
                learning_rate: lr,
                ..config.finetune.clone()
            };
            Ok(ModelChangeReport {
                baseline: baseline.clone(),
                learning_rate: lr,
                reports: run_increments(data, &baseline, &finetune, &config.bounds)?,
            })
        })
        .collect()
}
