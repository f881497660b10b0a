use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, ValueEnum};
use psce::checkpoint::{Artifact, Checkpoint};
use psce::generative::{self, train_autoencoder, train_vae, ClassAutoencoder, FitConfig, Vae};
use psce::models::{accuracy, tabular_sizes, train, BayesMlp, Classifier, DropoutMlp, TrainConfig, Trainable};
use psce::Dataset;
use serde::Serialize;

use super::csv_writer;
use crate::args::{apply_standardization, load_checkpoint, output_path, DataArgs};
use crate::manifest::{manifest_name, ManifestBuilder};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Bnn,
    Dropout,
    Vae,
    Ae,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Checkpoint path [default: <kind>.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// [default: 1e-2 for classifiers, 1e-3 for vae and ae]
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Prior KL weight for a BNN [default: 1 / training rows].
    #[arg(long)]
    pub kl_weight: Option<f64>,
    /// `all` or `final_only`.
    #[arg(long, default_value = "all")]
    pub trainable: String,
    #[arg(long, default_value_t = psce::models::DEFAULT_PRIOR_SIGMA)]
    pub prior_sigma: f64,
    #[arg(long, default_value_t = psce::models::DEFAULT_DROPOUT)]
    pub dropout: f64,
    #[arg(long, default_value_t = generative::TABULAR_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = generative::TABULAR_LATENT)]
    pub latent: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit a z-score on the training split and store it with the model.
    #[arg(long)]
    pub standardize: bool,
    /// Loss-trace CSV [default: <checkpoint stem>.loss.csv].
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    args: &'a TrainArgs,
    trainable: Trainable,
    classifier: Option<TrainConfig>,
    generative: Option<FitConfig>,
}

pub fn run(dir: &Path, args: TrainArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::start("train");
    let trainable: Trainable = args.trainable.parse().map_err(|e| UsageError(format!("{e}")))?;
    let init = args.init.as_deref().map(load_checkpoint).transpose()?;
    let mut data = args.data.load()?;
    manifest.seeds([args.seed, args.data.split_seed]);
    manifest.input(args.data.inputs().first().cloned().unwrap_or_default());
    let standardization = match &init {
        Some(c) => {
            manifest.input(args.init.clone().unwrap());
            data = apply_standardization(data, c)?;
            c.standardization.clone()
        }
        None if args.standardize => {
            data = data.standardize()?;
            data.standardization.clone()
        }
        None => None,
    };
    let (j, c) = (data.n_features(), data.num_classes());
    let rows = data.split.train.clone();
    let out = output_path(dir, args.out.as_deref(), &format!("{}.json", kind_name(args.kind)));
    let trace_path = match &args.trace {
        Some(p) => output_path(dir, Some(p), ""),
        None => out.with_extension("loss.csv"),
    };

    let mut resolved = Resolved {
        args: &args,
        trainable,
        classifier: None,
        generative: None,
    };
    // (series, epoch loss) pairs for the trace.
    let mut traces: Vec<(String, Vec<f64>)> = Vec::new();
    let artifact = match args.kind {
        Kind::Bnn | Kind::Dropout => {
            let mut model = match &init {
                Some(ck) => ck.classifier()?,
                None if args.kind == Kind::Bnn => {
                    Classifier::Bnn(BayesMlp::new(&tabular_sizes(j, c), args.prior_sigma, args.seed)?)
                }
                None => Classifier::Dropout(DropoutMlp::new(&tabular_sizes(j, c), args.dropout, args.seed)?),
            };
            if model.kind_name() != kind_name(args.kind) {
                return Err(UsageError(format!(
                    "--init holds a {} model, not {}",
                    model.kind_name(),
                    kind_name(args.kind)
                ))
                .into());
            }
            let cfg = TrainConfig {
                epochs: args.epochs,
                learning_rate: args.lr.unwrap_or(1e-2),
                batch_size: args.batch_size,
                kl_weight: args.kl_weight,
                trainable,
                seed: args.seed,
            };
            let report = train(&mut model, &data, &rows, &cfg)?;
            traces.push(("loss".into(), report.loss_trace));
            warn_if_unfit(&model, &data, &rows)?;
            resolved.classifier = Some(cfg);
            Artifact::from(model)
        }
        Kind::Vae => {
            let mut vae = match &init {
                Some(ck) => ck.vae()?,
                None => Vae::new(
                    j,
                    args.hidden,
                    args.latent,
                    generative::OutputActivation::Linear,
                    args.seed,
                )?,
            };
            let cfg = fit_config(&args);
            // The per-epoch trace is the ELBO; the objective is its negative.
            let elbo = train_vae(&mut vae, &data, &rows, &cfg)?;
            traces.push(("neg_elbo".into(), elbo.iter().map(|v| -v).collect()));
            resolved.generative = Some(cfg);
            Artifact::Vae { model: vae }
        }
        Kind::Ae => {
            let cfg = fit_config(&args);
            let mut models = match &init {
                Some(ck) => ck.autoencoders()?,
                None => (0..c)
                    .map(|k| ClassAutoencoder::new(k, j, args.hidden, args.latent, args.seed))
                    .collect::<psce::Result<_>>()?,
            };
            for ae in &mut models {
                let class_rows = data.rows_of_class(&rows, ae.class);
                let trace = train_autoencoder(ae, &data, &class_rows, &cfg)?;
                traces.push((format!("class{}", ae.class), trace));
            }
            resolved.generative = Some(cfg);
            Artifact::Ae { models }
        }
    };

    let mut ckpt = Checkpoint::new(artifact);
    ckpt.standardization = standardization;
    ckpt.class_names = data.class_names.clone();
    ckpt.manifest = Some(manifest_name(&out));
    ckpt.save(&out)?;

    let mut w = csv_writer(&trace_path)?;
    w.write_record(["series", "epoch", "loss"])?;
    for (series, values) in &traces {
        for (e, v) in values.iter().enumerate() {
            w.write_record([series.clone(), e.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    manifest.output(&out);
    manifest.output(&trace_path);
    manifest.write(&out, &resolved)?;
    eprintln!("wrote {} and {}", out.display(), trace_path.display());
    Ok(())
}

fn fit_config(args: &TrainArgs) -> FitConfig {
    FitConfig {
        epochs: args.epochs,
        learning_rate: args.lr.unwrap_or(1e-3),
        batch_size: args.batch_size,
        seed: args.seed,
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Bnn => "bnn",
        Kind::Dropout => "dropout",
        Kind::Vae => "vae",
        Kind::Ae => "ae",
    }
}

/// Flags a model that ended no better than predicting the majority class,
/// which for a BNN usually means the prior term won.
fn warn_if_unfit(model: &Classifier, data: &Dataset, rows: &[usize]) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let mut r = psce::rng::stream(0, &[psce::rng::label::EVALUATION]);
    let acc = accuracy(model, data, rows, 30, &mut r)?;
    let majority = (0..data.num_classes())
        .map(|k| data.rows_of_class(rows, k).len())
        .max()
        .unwrap_or(0) as f64
        / rows.len() as f64;
    if acc <= majority + 0.02 {
        eprintln!(
            "warning: training accuracy {acc:.3} is at the majority rate {majority:.3}; \
             try more data, more epochs or a smaller --kl-weight"
        );
    }
    Ok(())
}
