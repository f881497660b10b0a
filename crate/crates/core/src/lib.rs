//! Probabilistically safe counterfactual explanations for Bayesian classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`tape`], [`adam`]: dense numerics and reverse-mode gradients.
//! - [`models`]: mean-field Gaussian BNNs and MC-dropout networks.
//! - [`generative`]: the VAE used for plausibility and per-class autoencoders.
//! - [`cegen`]: PSCE and the BayesCF and greedy baselines.
//! - [`bounds`]: KL-based robustness bounds under model updates.
//! - [`metrics`]: IM1, implausibility, robustness ratio and validity.
//! - [`data`]: CSV ingestion, standardization, splits and synthetic data.
//! - [`experiment`]: the incremental-update bound experiment.

pub mod adam;
pub mod bounds;
pub mod cegen;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod generative;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub use bounds::{BoundReport, BoundSettings};
pub use cegen::{CounterfactualResult, EvaluationPolicy, Method, Preset, PsceConfig};
pub use checkpoint::Checkpoint;
pub use data::Dataset;
pub use generative::{ClassAutoencoder, Vae};
pub use models::{BayesMlp, Classifier, DropoutMlp, GaussianPosterior, PosteriorClassifier, PredictiveSummary};
