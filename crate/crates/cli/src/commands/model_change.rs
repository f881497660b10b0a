use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use psce::bounds::{BoundReport, BoundSettings};
use psce::data::increment_schedule;
use psce::experiment::{
    baseline_from_model, prepare_baseline, run_increments, CounterfactualSource, ModelChangeConfig, ModelChangeReport,
};
use psce::models::TrainConfig;
use serde::Serialize;

use super::generate::GenerateOutput;
use super::{csv_writer, write_json};
use crate::args::{
    apply_standardization, existing, load_checkpoint, output_path, parse_list, same_standardization, DataArgs,
    MethodArgs, MethodName,
};
use crate::manifest::{manifest_name, ManifestBuilder, SCHEMA_VERSION};
use crate::UsageError;

#[derive(Debug, Args, Serialize)]
pub struct ModelChangeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Base BNN checkpoint; trained on the base set when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub vae: Option<PathBuf>,
    /// Results JSON from `generate`; its first δ-safe record is used as the counterfactual.
    #[arg(long)]
    pub counterfactual: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub base_fraction: f64,
    #[arg(long, default_value_t = 0.01)]
    pub increment: f64,
    /// Comma-separated fine-tune learning rates; several give a paired sweep.
    #[arg(long, default_value = "1e-5")]
    pub finetune_lr: String,
    #[arg(long, default_value_t = 3)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 30)]
    pub base_epochs: usize,
    /// Posterior samples for p1, p2 and the variances.
    #[arg(long, default_value_t = 1000)]
    pub bound_samples: usize,
    /// Monte Carlo slack of the tolerant checks, in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub slack: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub method_args: MethodArgs,
    /// Table CSV [default: model_change.csv]; full reports go to the matching .json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ModelChangeOutput<'a> {
    schema_version: u32,
    manifest: String,
    config: &'a ModelChangeConfig,
    runs: &'a [ModelChangeReport],
}

pub fn run(dir: &Path, args: ModelChangeArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::start("model-change");
    let lrs: Vec<f64> = parse_list(&args.finetune_lr, "learning rate")?;
    let psce_method = args.method_args.resolve(MethodName::Psce)?;
    let psce::cegen::Method::Psce(psce_cfg) = psce_method else {
        unreachable!()
    };

    let model_ckpt = args.model.as_deref().map(load_checkpoint).transpose()?;
    let mut data = args.data.load()?;
    if let Some(c) = &model_ckpt {
        data = apply_standardization(data, c)?;
    }
    let source = match &args.counterfactual {
        Some(p) => {
            existing(p)?;
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let generated: GenerateOutput = serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("{}: not a generate output: {e}", p.display())))?;
            let r = generated
                .records
                .iter()
                .find(|r| r.result.is_delta_safe)
                .ok_or_else(|| UsageError(format!("{} holds no δ-safe counterfactual", p.display())))?;
            CounterfactualSource::Given {
                x_cf: r.result.x_cf.clone(),
                target: r.result.y_target,
            }
        }
        None => CounterfactualSource::Generate {
            psce: psce_cfg,
            max_attempts: 20,
        },
    };
    let config = ModelChangeConfig {
        base_fraction: args.base_fraction,
        increment_fraction: args.increment,
        schedule_seed: args.seed,
        model_seed: args.seed,
        base_training: TrainConfig {
            epochs: args.base_epochs,
            seed: args.seed,
            ..TrainConfig::default()
        },
        finetune: TrainConfig {
            epochs: args.finetune_epochs,
            learning_rate: lrs[0],
            seed: args.seed,
            ..ModelChangeConfig::default().finetune
        },
        source,
        counterfactual_seed: args.seed,
        policy: args.method_args.policy()?,
        bounds: BoundSettings {
            samples: args.bound_samples,
            seed: args.seed,
            delta: args.method_args.policy()?.delta,
            slack_std_errors: args.slack,
        },
        ..ModelChangeConfig::default()
    };
    let baseline = match model_ckpt {
        Some(c) => {
            let vae = args
                .vae
                .as_deref()
                .map(|p| {
                    let v = load_checkpoint(p)?;
                    same_standardization(&c, &v, "vae")?;
                    anyhow::Ok(v.vae()?)
                })
                .transpose()?;
            let schedule = increment_schedule(
                &data,
                config.base_fraction,
                config.increment_fraction,
                config.schedule_seed,
            )?;
            baseline_from_model(&data, &config, schedule, c.classifier()?, vae)?
        }
        None => prepare_baseline(&data, &config)?,
    };
    let mut runs = Vec::new();
    for &lr in &lrs {
        let finetune = TrainConfig {
            learning_rate: lr,
            ..config.finetune.clone()
        };
        runs.push(ModelChangeReport {
            baseline: baseline.clone(),
            learning_rate: lr,
            reports: run_increments(&data, &baseline, &finetune, &config.bounds)?,
        });
    }

    let out = output_path(dir, args.out.as_deref(), "model_change.csv");
    let json_path = out.with_extension("json");
    write_table(&out, &runs)?;
    write_json(
        &json_path,
        &ModelChangeOutput {
            schema_version: SCHEMA_VERSION,
            manifest: manifest_name(&out),
            config: &config,
            runs: &runs,
        },
    )?;
    manifest.seeds([args.seed, args.data.split_seed]);
    for p in args
        .model
        .iter()
        .chain(&args.vae)
        .chain(&args.counterfactual)
        .chain(args.data.data.iter())
    {
        manifest.input(p);
    }
    manifest.output(&out);
    manifest.output(&json_path);
    #[derive(Serialize)]
    struct Resolved<'a> {
        args: &'a ModelChangeArgs,
        experiment: &'a ModelChangeConfig,
        learning_rates: &'a [f64],
    }
    manifest.write(
        &out,
        &Resolved {
            args: &args,
            experiment: &config,
            learning_rates: &lrs,
        },
    )?;
    for run in &runs {
        let held = run.reports.iter().filter(|r| r.holds).count();
        eprintln!(
            "lr {:e}: bound holds in {held}/{} updates",
            run.learning_rate,
            run.reports.len()
        );
    }
    Ok(())
}

fn write_table(path: &Path, runs: &[ModelChangeReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<&str> = BoundReport::TABLE_COLUMNS.to_vec();
    header.extend([
        "learning_rate",
        "var1",
        "var2",
        "variance_bound",
        "variance_holds",
        "conservative_bound",
        "holds_within_mc_error",
        "variance_holds_within_mc_error",
    ]);
    w.write_record(&header)?;
    for run in runs {
        for r in &run.reports {
            let mut row = r.table_record().to_vec();
            row.extend([
                run.learning_rate.to_string(),
                r.var1.to_string(),
                r.var2.to_string(),
                r.variance_upper_bound.to_string(),
                r.variance_holds.to_string(),
                r.conservative_lower_bound.to_string(),
                r.holds_within_mc_error.to_string(),
                r.variance_holds_within_mc_error.to_string(),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
