use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use psce::cegen::{CounterfactualResult, EvaluationPolicy, Method};
use psce::metrics::instance_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_writer, write_json};
use crate::args::{
    apply_standardization, load_checkpoint, output_path, same_standardization, DataArgs, MethodArgs, MethodName,
};
use crate::manifest::{manifest_name, ManifestBuilder, SCHEMA_VERSION};
use crate::UsageError;

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Classifier checkpoint (bnn or dropout).
    #[arg(long)]
    pub model: PathBuf,
    /// VAE checkpoint; required when the latent terms of PSCE are active.
    #[arg(long)]
    pub vae: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: MethodName,
    #[command(flatten)]
    pub method_args: MethodArgs,
    /// Number of test instances, taken in split order.
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    /// Target class for every instance [default: the next class after the prediction].
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only counterfactuals in the ⟨δ,ε⟩-set.
    #[arg(long)]
    pub filter_delta_eps: bool,
    /// Keep the per-iteration loss trace in every record.
    #[arg(long)]
    pub trace: bool,
    /// Results JSON [default: results.json]; a CSV summary is written alongside.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub requested: usize,
    pub generated: usize,
    pub valid: usize,
    pub in_delta_eps_set: usize,
    pub written: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Row index in the dataset.
    pub index: usize,
    pub seed: u64,
    pub result: CounterfactualResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub schema_version: u32,
    pub manifest: String,
    pub dataset: String,
    pub method: Method,
    pub policy: EvaluationPolicy,
    pub seed: u64,
    pub counts: Counts,
    pub records: Vec<Record>,
}

pub fn run(dir: &Path, args: GenerateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::start("generate");
    let ckpt = load_checkpoint(&args.model)?;
    let model = ckpt.classifier()?;
    let method = args.method_args.resolve(args.method)?;
    let policy = args.method_args.policy()?;
    let vae = match &args.vae {
        Some(p) => {
            let v = load_checkpoint(p)?;
            same_standardization(&ckpt, &v, "vae")?;
            Some(v.vae()?)
        }
        None if method.needs_vae() => {
            return Err(UsageError(
                "PSCE with latent terms needs --vae (or zero --lambda-ldist and --lambda-elbo)".into(),
            )
            .into())
        }
        None => None,
    };
    let data = apply_standardization(args.data.load()?, &ckpt)?;
    if data.n_features() != model.sizes()[0] {
        return Err(UsageError(format!(
            "model expects {} features, dataset has {}",
            model.sizes()[0],
            data.n_features()
        ))
        .into());
    }
    let pool = if data.split.test.is_empty() {
        &data.split.train
    } else {
        &data.split.test
    };
    let picked: Vec<usize> = pool.iter().copied().take(args.instances).collect();

    let mut records = picked
        .par_iter()
        .map(|&i| {
            let seed = instance_seed(args.seed, i);
            let mut result = method.generate(&model, vae.as_ref(), data.row(i), args.target, seed, &policy)?;
            if !args.trace {
                result.loss_trace.clear();
            }
            Ok(Record { index: i, seed, result })
        })
        .collect::<psce::Result<Vec<_>>>()?;
    let generated = records.len();
    let valid = records.iter().filter(|r| r.result.is_valid).count();
    let in_set = records.iter().filter(|r| r.result.in_delta_eps_set).count();
    if args.filter_delta_eps {
        records.retain(|r| r.result.in_delta_eps_set);
    }
    let counts = Counts {
        requested: args.instances,
        generated,
        valid,
        in_delta_eps_set: in_set,
        written: records.len(),
    };

    let out = output_path(dir, args.out.as_deref(), "results.json");
    let csv_path = out.with_extension("csv");
    let output = GenerateOutput {
        schema_version: SCHEMA_VERSION,
        manifest: manifest_name(&out),
        dataset: data.name.clone(),
        method: method.clone(),
        policy: policy.clone(),
        seed: args.seed,
        counts: counts.clone(),
        records,
    };
    write_json(&out, &output)?;
    write_results_csv(&csv_path, &output.records)?;

    manifest.seeds([args.seed, policy.seed, args.data.split_seed]);
    manifest.input(&args.model);
    if let Some(v) = &args.vae {
        manifest.input(v);
    }
    for p in args.data.inputs() {
        manifest.input(p);
    }
    manifest.output(&out);
    manifest.output(&csv_path);
    #[derive(Serialize)]
    struct Resolved<'a> {
        args: &'a GenerateArgs,
        method: &'a Method,
        policy: &'a EvaluationPolicy,
    }
    manifest.write(
        &out,
        &Resolved {
            args: &args,
            method: &method,
            policy: &policy,
        },
    )?;
    eprintln!(
        "{} counterfactuals: {} valid, {} in the ⟨δ,ε⟩-set, {} written to {}",
        counts.generated,
        counts.valid,
        counts.in_delta_eps_set,
        counts.written,
        out.display()
    );
    Ok(())
}

fn write_results_csv(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "index",
        "y_orig",
        "y_target",
        "mean",
        "variance",
        "is_valid",
        "is_delta_safe",
        "is_eps_robust",
        "in_delta_eps_set",
        "iterations",
        "l2_distance",
    ])?;
    for r in records {
        let c = &r.result;
        let dist = psce::metrics::Distance::L2.between(&c.x_cf, &c.x_orig);
        w.write_record([
            r.index.to_string(),
            c.y_orig.to_string(),
            c.y_target.to_string(),
            c.final_summary.mean.to_string(),
            c.final_summary.variance.to_string(),
            c.is_valid.to_string(),
            c.is_delta_safe.to_string(),
            c.is_eps_robust.to_string(),
            c.in_delta_eps_set.to_string(),
            c.iterations_used.to_string(),
            dist.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
