use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, ValueEnum};
use psce::cegen::Method;
use psce::metrics::{evaluate_suite, write_summary_csv, Distance, Perturbation, SuiteConfig, SuiteInputs, SuiteReport};
use serde::Serialize;

use super::write_json;
use crate::args::{
    apply_standardization, load_checkpoint, output_path, parse_list, same_standardization, DataArgs, MethodArgs,
    MethodName,
};
use crate::manifest::{manifest_name, ManifestBuilder, SCHEMA_VERSION};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationName {
    Constant,
    Uniform,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vae: Option<PathBuf>,
    /// Per-class autoencoder checkpoint; IM1 is skipped without it.
    #[arg(long)]
    pub ae: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "psce,bayescf,schut")]
    pub methods: Vec<MethodName>,
    #[command(flatten)]
    pub method_args: MethodArgs,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Comma-separated run seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    #[arg(long, default_value_t = 1e-3)]
    pub kappa: f64,
    /// Skip the robustness ratio.
    #[arg(long)]
    pub no_robustness: bool,
    #[arg(long, value_enum, default_value = "constant")]
    pub perturbation: PerturbationName,
    /// `l2`, `squared_l2` or `l1`.
    #[arg(long, default_value = "l2")]
    pub distance: String,
    /// Metrics CSV [default: metrics.csv]; raw per-instance values go to the matching .json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    schema_version: u32,
    manifest: String,
    methods: &'a [(String, Method)],
    config: &'a SuiteConfig,
    report: &'a SuiteReport,
}

pub fn run(dir: &Path, args: EvaluateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::start("evaluate");
    let ckpt = load_checkpoint(&args.model)?;
    let model = ckpt.classifier()?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let distance: Distance = args.distance.parse().map_err(|e| UsageError(format!("{e}")))?;
    let mut methods: Vec<(String, Method)> = Vec::new();
    for name in &args.methods {
        let mut label = name.as_str().to_string();
        let n = methods
            .iter()
            .filter(|(l, _)| l.split('#').next() == Some(name.as_str()))
            .count();
        if n > 0 {
            label = format!("{label}#{}", n + 1);
        }
        methods.push((label, args.method_args.resolve(*name)?));
    }
    let vae = args
        .vae
        .as_deref()
        .map(|p| {
            let v = load_checkpoint(p)?;
            same_standardization(&ckpt, &v, "vae")?;
            anyhow::Ok(v.vae()?)
        })
        .transpose()?;
    if vae.is_none() && methods.iter().any(|(_, m)| m.needs_vae()) {
        return Err(UsageError("PSCE with latent terms needs --vae".into()).into());
    }
    let aes = match &args.ae {
        Some(p) => {
            let a = load_checkpoint(p)?;
            same_standardization(&ckpt, &a, "ae")?;
            a.autoencoders()?
        }
        None => Vec::new(),
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
    let config = SuiteConfig {
        n_instances: args.instances,
        seeds: seeds.clone(),
        kappa: (!args.no_robustness).then_some(args.kappa),
        perturbation: match args.perturbation {
            PerturbationName::Constant => Perturbation::Constant,
            PerturbationName::Uniform => Perturbation::Uniform { seed: seeds[0] },
        },
        distance,
        policy: args.method_args.policy()?,
    };
    let inputs = SuiteInputs {
        dataset: &data,
        model: &model,
        vae: vae.as_ref(),
        autoencoders: &aes,
    };
    let report = evaluate_suite(&methods, &inputs, &config)?;

    let out = output_path(dir, args.out.as_deref(), "metrics.csv");
    let json_path = out.with_extension("json");
    write_summary_csv(&out, &report.summaries)?;
    write_json(
        &json_path,
        &EvaluateOutput {
            schema_version: SCHEMA_VERSION,
            manifest: manifest_name(&out),
            methods: &methods,
            config: &config,
            report: &report,
        },
    )?;
    if report.shortfall > 0 {
        eprintln!("only {} test instances available", args.instances - report.shortfall);
    }
    manifest.seeds(seeds);
    manifest.input(&args.model);
    for p in args.vae.iter().chain(&args.ae).chain(args.data.data.iter()) {
        manifest.input(p);
    }
    manifest.output(&out);
    manifest.output(&json_path);
    #[derive(Serialize)]
    struct Resolved<'a> {
        args: &'a EvaluateArgs,
        methods: &'a [(String, Method)],
        suite: &'a SuiteConfig,
    }
    manifest.write(
        &out,
        &Resolved {
            args: &args,
            methods: &methods,
            suite: &config,
        },
    )?;
    eprintln!("wrote {} and {}", out.display(), json_path.display());
    Ok(())
}
