use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use clap::{Args, ValueEnum};
use psce::cegen::{EarlyStop, EvaluationPolicy, Method, Preset};
use psce::data::{load_csv, synth_two_gaussians, Dataset, LabelColumn};
use psce::Checkpoint;
use serde::Serialize;

use crate::UsageError;

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV dataset.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Label column: a 0-based index, a header name, or `last`.
    #[arg(long, default_value = "last")]
    pub label: String,
    #[arg(long)]
    pub no_header: bool,
    /// Two Gaussian blobs instead of a CSV, as `N_PER_CLASS,DIM,SEPARATION`.
    #[arg(long, value_name = "N,DIM,SEP")]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub stratified: bool,
}

impl DataArgs {
    /// Loads and splits the dataset. Raw features; see [`apply_standardization`].
    pub fn load(&self) -> Result<Dataset> {
        let ds = match (&self.data, &self.synthetic) {
            (Some(path), None) => {
                existing(path)?;
                let label: LabelColumn = self.label.parse().map_err(|e| UsageError(format!("{e}")))?;
                load_csv(path, &label, !self.no_header)?
            }
            (None, Some(spec)) => {
                let parts: Vec<&str> = spec.split(',').collect();
                let bad = || UsageError(format!("--synthetic expects N,DIM,SEP, got '{spec}'"));
                if parts.len() != 3 {
                    return Err(bad().into());
                }
                let n: usize = parts[0].trim().parse().map_err(|_| bad())?;
                let dim: usize = parts[1].trim().parse().map_err(|_| bad())?;
                let sep: f64 = parts[2].trim().parse().map_err(|_| bad())?;
                synth_two_gaussians(n, dim, sep, self.data_seed)?
            }
            _ => return Err(UsageError("one of --data or --synthetic is required".into()).into()),
        };
        Ok(ds.split(self.test_fraction, self.split_seed, self.stratified)?)
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        self.data.iter().cloned().collect()
    }
}

/// Applies the standardization a checkpoint was trained under, if any.
pub fn apply_standardization(data: Dataset, ckpt: &Checkpoint) -> Result<Dataset> {
    match &ckpt.standardization {
        Some(z) => Ok(data.with_standardization(z)?),
        None => Ok(data),
    }
}

pub fn existing(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("no such file: {}", path.display())).into())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    existing(path)?;
    Ok(Checkpoint::load(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Psce,
    Bayescf,
    Schut,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Psce => "psce",
            MethodName::Bayescf => "bayescf",
            MethodName::Schut => "schut",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Credit,
    Spam,
    BreastCancer,
    Mnist,
    Synthetic,
}

impl From<PresetName> for Preset {
    fn from(p: PresetName) -> Self {
        match p {
            PresetName::Credit => Preset::Credit,
            PresetName::Spam => Preset::Spam,
            PresetName::BreastCancer => Preset::BreastCancer,
            PresetName::Mnist => Preset::Mnist,
            PresetName::Synthetic => Preset::Synthetic,
        }
    }
}

/// Generator hyperparameters: a preset plus optional overrides.
#[derive(Debug, Clone, Args, Serialize)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub preset: PresetName,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda_clf: Option<f64>,
    #[arg(long)]
    pub lambda_del: Option<f64>,
    #[arg(long)]
    pub lambda_ldist: Option<f64>,
    #[arg(long)]
    pub lambda_var: Option<f64>,
    #[arg(long)]
    pub lambda_elbo: Option<f64>,
    #[arg(long)]
    pub lambda_prox: Option<f64>,
    /// Optimizer learning rate of the gradient-based generators.
    #[arg(long)]
    pub cf_lr: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Posterior samples per optimization step.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Stop after this many consecutive iterations meeting the targets; 0 never stops early.
    #[arg(long)]
    pub early_stop: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub max_changes: Option<usize>,
    /// Posterior samples of the final evaluation.
    #[arg(long, default_value_t = 100)]
    pub eval_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
}

fn early(n: usize) -> EarlyStop {
    if n == 0 {
        EarlyStop::Never
    } else {
        EarlyStop::Sustained(n)
    }
}

impl MethodArgs {
    pub fn resolve(&self, name: MethodName) -> Result<Method> {
        let preset: Preset = self.preset.into();
        let mut method = Method::from_name(name.as_str(), preset)?;
        match &mut method {
            Method::Psce(c) => {
                set(&mut c.delta, self.delta);
                set(&mut c.epsilon, self.epsilon);
                set(&mut c.lambda_clf, self.lambda_clf);
                set(&mut c.lambda_del, self.lambda_del);
                set(&mut c.lambda_ldist, self.lambda_ldist);
                set(&mut c.lambda_var, self.lambda_var);
                set(&mut c.lambda_elbo, self.lambda_elbo);
                set(&mut c.learning_rate, self.cf_lr);
                set(&mut c.max_iterations, self.max_iterations);
                set(&mut c.samples, self.samples);
                set(&mut c.early_stop, self.early_stop.map(early));
                c.validate()?;
            }
            Method::Bayescf(c) => {
                set(&mut c.lambda_prox, self.lambda_prox);
                set(&mut c.learning_rate, self.cf_lr);
                set(&mut c.max_iterations, self.max_iterations);
                set(&mut c.samples, self.samples);
                set(&mut c.early_stop, self.early_stop.map(early));
                c.validate()?;
            }
            Method::Schut(c) => {
                set(&mut c.step_size, self.step_size);
                set(&mut c.max_iterations, self.max_iterations);
                set(&mut c.samples, self.samples);
                set(&mut c.max_changes_per_feature, self.max_changes);
                c.validate()?;
            }
        }
        Ok(method)
    }

    pub fn policy(&self) -> Result<EvaluationPolicy> {
        let preset: Preset = self.preset.into();
        let base = preset.psce();
        let p = EvaluationPolicy {
            samples: self.eval_samples,
            seed: self.eval_seed,
            delta: self.delta.unwrap_or(base.delta),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
        };
        p.validate()?;
        Ok(p)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Resolves an output path against the output directory.
pub fn output_path(dir: &Path, out: Option<&Path>, default_name: &str) -> PathBuf {
    match out {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => dir.join(p),
        None => dir.join(default_name),
    }
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| anyhow!(UsageError(format!("invalid {what} '{s}'"))))
        })
        .collect()
}

/// Generative checkpoints must have been trained in the same feature space as the classifier.
pub fn same_standardization(model: &Checkpoint, other: &Checkpoint, what: &str) -> Result<()> {
    if model.standardization == other.standardization {
        Ok(())
    } else {
        Err(UsageError(format!(
            "{what} checkpoint was trained with a different standardization than the model"
        ))
        .into())
    }
}
