//! Counterfactual quality metrics and the multi-seed evaluation suite.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cegen::{CounterfactualResult, EvaluationPolicy, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generative::{ClassAutoencoder, Vae};
use crate::models::PosteriorClassifier;
use crate::rng;

/// Denominators at or below this make a ratio metric undefined.
pub const DENOMINATOR_TOLERANCE: f64 = 1e-12;

/// `‖x′ − AE_target(x′)‖² / ‖x′ − AE_orig(x′)‖²`.
pub fn im1(x_cf: &[f64], ae_target: &ClassAutoencoder, ae_orig: &ClassAutoencoder) -> Result<f64> {
    let num = ae_target.reconstruction_error(x_cf)?;
    let den = ae_orig.reconstruction_error(x_cf)?;
    if den <= DENOMINATOR_TOLERANCE {
        return Err(Error::UndefinedMetric(format!(
            "original-class reconstruction error {den:e} is too small"
        )));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    L2,
    SquaredL2,
    L1,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| x - y);
        match self {
            Distance::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Distance::SquaredL2 => diffs.map(|d| d * d).sum(),
            Distance::L1 => diffs.map(f64::abs).sum(),
        }
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Distance::L2),
            "squared_l2" => Ok(Distance::SquaredL2),
            "l1" => Ok(Distance::L1),
            other => Err(Error::InvalidConfig(format!(
                "unknown distance '{other}' (valid: l2, squared_l2, l1)"
            ))),
        }
    }
}

/// Mean distance from `x_cf` to every point of `class_set`.
pub fn implausibility<'a>(
    x_cf: &[f64],
    class_set: impl IntoIterator<Item = &'a [f64]>,
    distance: Distance,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for x in class_set {
        if x.len() != x_cf.len() {
            return Err(Error::dimension("implausibility", x_cf.len(), x.len()));
        }
        total += distance.between(x, x_cf);
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("implausibility of an empty class set".into()));
    }
    Ok(total / n as f64)
}

/// How `x` is perturbed for the robustness ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Add κ to every coordinate.
    #[default]
    Constant,
    /// Add independent `U(−κ, κ)` noise to every coordinate.
    Uniform { seed: u64 },
}

impl Perturbation {
    pub fn apply(&self, x: &[f64], kappa: f64) -> Vec<f64> {
        match *self {
            Perturbation::Constant => x.iter().map(|v| v + kappa).collect(),
            Perturbation::Uniform { seed } => {
                let mut r = rng::stream(seed, &[rng::label::PERTURBATION]);
                x.iter().map(|v| v + r.random_range(-kappa..=kappa)).collect()
            }
        }
    }
}

/// `‖G(x + κ) − x′‖² / ‖x′ − x‖²` where `generator` is the method that produced `x′`.
pub fn robustness_ratio(
    mut generator: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    x_cf: &[f64],
    kappa: f64,
    perturbation: Perturbation,
) -> Result<f64> {
    if x.len() != x_cf.len() {
        return Err(Error::dimension("robustness_ratio", x.len(), x_cf.len()));
    }
    let den = Distance::SquaredL2.between(x_cf, x);
    if den <= DENOMINATOR_TOLERANCE {
        return Err(Error::UndefinedMetric("counterfactual equals its input".into()));
    }
    let moved = generator(&perturbation.apply(x, kappa))?;
    if moved.len() != x.len() {
        return Err(Error::dimension("robustness_ratio generator", x.len(), moved.len()));
    }
    Ok(Distance::SquaredL2.between(&moved, x_cf) / den)
}

/// Fraction of results classified as their target.
pub fn validity(results: &[CounterfactualResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::UndefinedMetric("validity of no counterfactuals".into()));
    }
    Ok(results.iter().filter(|r| r.is_valid).count() as f64 / results.len() as f64)
}

/// [`validity`] re-measured with another `policy` instead of the stored flags.
pub fn validity_under(
    model: &dyn PosteriorClassifier,
    results: &[CounterfactualResult],
    policy: &EvaluationPolicy,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::UndefinedMetric("validity of no counterfactuals".into()));
    }
    let mut valid = 0;
    for r in results {
        let (_, predicted) = policy.evaluate(model, &r.x_cf, r.y_target)?;
        valid += (predicted == r.y_target) as usize;
    }
    Ok(valid as f64 / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_instances: usize,
    pub seeds: Vec<u64>,
    /// `None` skips the robustness ratio, which doubles the generation cost.
    pub kappa: Option<f64>,
    pub perturbation: Perturbation,
    pub distance: Distance,
    pub policy: EvaluationPolicy,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_instances: 100,
            seeds: vec![0, 1, 2, 3, 4],
            kappa: Some(1e-3),
            perturbation: Perturbation::Constant,
            distance: Distance::L2,
            policy: EvaluationPolicy::default(),
        }
    }
}

/// Metrics of one counterfactual. `None` marks an undefined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub method: String,
    pub seed: u64,
    /// Row index in the dataset.
    pub index: usize,
    pub im1: Option<f64>,
    pub implausibility: Option<f64>,
    pub robustness_ratio: Option<f64>,
    pub result: CounterfactualResult,
}

/// Per-seed aggregate for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub n_instances: usize,
    pub im1: Option<f64>,
    pub implausibility: Option<f64>,
    pub robustness_ratio: Option<f64>,
    pub validity_fraction: f64,
    pub in_set_fraction: f64,
    pub mean_final_variance: f64,
    pub excluded_im1: usize,
    pub excluded_implausibility: usize,
    pub excluded_robustness_ratio: usize,
}

/// Mean and population standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dataset: String,
    pub metric: String,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<EvaluationRow>,
    pub summaries: Vec<MetricSummary>,
    pub instances: Vec<InstanceRecord>,
    /// How many instances were requested but not available.
    pub shortfall: usize,
}

/// Everything a suite run needs besides the methods.
pub struct SuiteInputs<'a> {
    pub dataset: &'a Dataset,
    pub model: &'a dyn PosteriorClassifier,
    pub vae: Option<&'a Vae>,
    /// One autoencoder per class, indexed by class. Empty skips IM1.
    pub autoencoders: &'a [ClassAutoencoder],
}

fn mean_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn population_std(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Keeps undefined metrics as `None`; other errors propagate.
fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Test-split instances used for `seed`.
pub fn suite_instances(dataset: &Dataset, n_instances: usize, seed: u64) -> Vec<usize> {
    let mut pool = if dataset.split.test.is_empty() {
        dataset.split.train.clone()
    } else {
        dataset.split.test.clone()
    };
    pool.shuffle(&mut rng::stream(seed, &[rng::label::SHUFFLE]));
    pool.truncate(n_instances);
    pool
}

/// Generator seed for instance `index` of run `seed`; shared by all methods.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, &[index as u64])
}

fn evaluate_instance(
    label: &str,
    method: &Method,
    inputs: &SuiteInputs,
    config: &SuiteConfig,
    seed: u64,
    index: usize,
) -> Result<InstanceRecord> {
    let data = inputs.dataset;
    let x = data.row(index);
    let gen_seed = instance_seed(seed, index);
    let mut result = method.generate(inputs.model, inputs.vae, x, None, gen_seed, &config.policy)?;
    result.method = label.to_string();

    let im1_value = match inputs.autoencoders {
        [] => None,
        aes => {
            let find = |c: usize| {
                aes.iter()
                    .find(|a| a.class == c)
                    .ok_or_else(|| Error::InvalidConfig(format!("no autoencoder for class {c}")))
            };
            defined(im1(&result.x_cf, find(result.y_target)?, find(result.y_orig)?))?
        }
    };
    let class_rows = data.rows_of_class(&data.split.train, result.y_target);
    let implaus = defined(implausibility(
        &result.x_cf,
        class_rows.iter().map(|&i| data.row(i)),
        config.distance,
    ))?;
    let rr = match config.kappa {
        None => None,
        Some(kappa) => {
            let target = result.y_target;
            let regenerate = |xp: &[f64]| {
                method
                    .generate(inputs.model, inputs.vae, xp, Some(target), gen_seed, &config.policy)
                    .map(|r| r.x_cf)
            };
            defined(robustness_ratio(
                regenerate,
                x,
                &result.x_cf,
                kappa,
                config.perturbation,
            ))?
        }
    };
    Ok(InstanceRecord {
        method: label.to_string(),
        seed,
        index,
        im1: im1_value,
        implausibility: implaus,
        robustness_ratio: rr,
        result,
    })
}

/// Runs every method on `n_instances` test points per seed and aggregates the metrics.
///
/// Instances are processed in parallel on the current rayon pool; the output
/// order is fixed by (seed, method, instance) regardless of scheduling.
pub fn evaluate_suite(methods: &[(String, Method)], inputs: &SuiteInputs, config: &SuiteConfig) -> Result<SuiteReport> {
    if config.seeds.is_empty() || methods.is_empty() {
        return Err(Error::InvalidConfig(
            "suite needs at least one seed and one method".into(),
        ));
    }
    if config.n_instances == 0 {
        return Err(Error::InvalidConfig("suite needs at least one instance".into()));
    }
    config.policy.validate()?;
    let data = inputs.dataset;
    let mut rows = Vec::new();
    let mut instances = Vec::new();
    let mut shortfall = 0;
    for &seed in &config.seeds {
        let picked = suite_instances(data, config.n_instances, seed);
        shortfall = shortfall.max(config.n_instances - picked.len());
        for (label, method) in methods {
            let records = picked
                .par_iter()
                .map(|&i| evaluate_instance(label, method, inputs, config, seed, i))
                .collect::<Result<Vec<_>>>()?;
            let results: Vec<_> = records.iter().map(|r| r.result.clone()).collect();
            let count = |f: fn(&InstanceRecord) -> Option<f64>| records.iter().filter(|r| f(r).is_none()).count();
            rows.push(EvaluationRow {
                method: label.clone(),
                dataset: data.name.clone(),
                seed,
                n_instances: records.len(),
                im1: mean_of(records.iter().filter_map(|r| r.im1)),
                implausibility: mean_of(records.iter().filter_map(|r| r.implausibility)),
                robustness_ratio: mean_of(records.iter().filter_map(|r| r.robustness_ratio)),
                validity_fraction: validity(&results)?,
                in_set_fraction: mean_of(results.iter().map(|r| r.in_delta_eps_set as u8 as f64)).unwrap_or(0.0),
                mean_final_variance: mean_of(results.iter().map(|r| r.final_summary.variance)).unwrap_or(0.0),
                excluded_im1: if inputs.autoencoders.is_empty() {
                    0
                } else {
                    count(|r| r.im1)
                },
                excluded_implausibility: count(|r| r.implausibility),
                excluded_robustness_ratio: if config.kappa.is_none() {
                    0
                } else {
                    count(|r| r.robustness_ratio)
                },
            });
            instances.extend(records);
        }
    }
    let summaries = summarize(&rows);
    Ok(SuiteReport {
        rows,
        summaries,
        instances,
        shortfall,
    })
}

type MetricFn = fn(&EvaluationRow) -> Option<f64>;

const METRICS: [(&str, MetricFn); 6] = [
    ("im1", |r| r.im1),
    ("implausibility", |r| r.implausibility),
    ("robustness_ratio", |r| r.robustness_ratio),
    ("validity", |r| Some(r.validity_fraction)),
    ("in_set_fraction", |r| Some(r.in_set_fraction)),
    ("mean_final_variance", |r| Some(r.mean_final_variance)),
];

/// Long-form summaries: one entry per (metric, method), in first-seen method order.
pub fn summarize(rows: &[EvaluationRow]) -> Vec<MetricSummary> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for (metric, get) in METRICS {
        for &m in &methods {
            let of_method: Vec<_> = rows.iter().filter(|r| r.method == m).collect();
            let values: Vec<f64> = of_method.iter().filter_map(|r| get(r)).collect();
            if values.is_empty() {
                continue;
            }
            out.push(MetricSummary {
                dataset: of_method[0].dataset.clone(),
                metric: metric.to_string(),
                method: m.to_string(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                std: population_std(&values),
                n_seeds: values.len(),
            });
        }
    }
    out
}

/// Writes `dataset,metric,method,mean,std`.
pub fn write_summary_csv(path: impl AsRef<Path>, summaries: &[MetricSummary]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["dataset", "metric", "method", "mean", "std"])
        .map_err(csv_err)?;
    for s in summaries {
        w.write_record([
            s.dataset.as_str(),
            s.metric.as_str(),
            s.method.as_str(),
            &s.mean.to_string(),
            &s.std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
