//! Classifiers with a distribution over their weights.
//!
//! Two posteriors are supported: a mean-field Gaussian BNN ([`BayesMlp`]) and
//! an MC-dropout network ([`DropoutMlp`]). Both expose the same sampling
//! interface through [`PosteriorClassifier`], which is all the counterfactual
//! generators and metrics need.

mod bayes;
mod dropout;
mod posterior;
mod train;

use serde::{Deserialize, Serialize};

pub use self::bayes::{BayesLinear, BayesMlp, SamplingMode, DEFAULT_PRIOR_SIGMA, INITIAL_SIGMA};
pub use self::dropout::{DropoutMlp, DEFAULT_DROPOUT};
pub use self::posterior::{extract_gaussian_posterior, GaussianPosterior, PosteriorSegment};
pub use self::train::{train, TrainConfig, TrainReport, Trainable};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tape::{self, ComputationTape, Var};
use crate::tensor::{self, Tensor};

/// Hidden widths of the tabular classifiers.
pub const TABULAR_HIDDEN: [usize; 2] = [64, 32];

/// `[inputs, 64, 32, classes]`.
pub fn tabular_sizes(inputs: usize, classes: usize) -> Vec<usize> {
    vec![inputs, TABULAR_HIDDEN[0], TABULAR_HIDDEN[1], classes]
}

pub(crate) fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must list at least input and output widths, got {sizes:?}"
        )));
    }
    Ok(())
}

/// A deterministic affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `[in, out]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// One concrete draw ω from a posterior: fixed weights plus, for dropout
/// networks, one keep-mask per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledNetwork {
    pub layers: Vec<DenseLayer>,
    /// Empty for Bayesian networks.
    pub masks: Vec<Vec<f64>>,
}

impl SampledNetwork {
    /// Row-wise log-probabilities for a batch `[N, J]` (or a single `[J]` input).
    pub fn log_probs(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = tensor::affine_forward(&h, &l.weights, &l.bias)?;
            if i < last {
                h = tensor::relu(&h);
                if let Some(mask) = self.masks.get(i) {
                    let cols = mask.len();
                    for row in h.data_mut().chunks_mut(cols) {
                        for (v, m) in row.iter_mut().zip(mask) {
                            *v *= m;
                        }
                    }
                }
            }
        }
        Ok(tensor::log_softmax(&h))
    }

    pub(crate) fn logits_on_tape(&self, tape: &mut ComputationTape, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.constant(l.weights.clone());
            let b = tape.constant(l.bias.clone());
            h = tape::affine(tape, h, w, b);
            if i < last {
                h = tape.relu(h);
                if let Some(mask) = self.masks.get(i) {
                    let m = tape.constant(Tensor::vector(mask.clone()));
                    h = tape.mul(h, m);
                }
            }
        }
        h
    }
}

/// A classifier whose predictions are expectations over a weight posterior.
pub trait PosteriorClassifier: Send + Sync {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Draws one weight set ω.
    fn sample_weights(&self, rng: &mut RngStream) -> SampledNetwork;

    /// Records `S` posterior draws of the log-probabilities of the single
    /// input row `x` on `tape`, returning an `S x C` node. Model parameters
    /// enter as constants, so gradients reach `x` only.
    fn sample_log_probs(&self, tape: &mut ComputationTape, x: Var, samples: usize, rng: &mut RngStream) -> Var;

    /// The Gaussian posterior, when the model has one.
    fn as_bayes(&self) -> Option<&BayesMlp> {
        None
    }
}

impl PosteriorClassifier for BayesMlp {
    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn num_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn sample_weights(&self, rng: &mut RngStream) -> SampledNetwork {
        self.sample_network(rng)
    }

    fn sample_log_probs(&self, tape: &mut ComputationTape, x: Var, samples: usize, rng: &mut RngStream) -> Var {
        BayesMlp::sample_log_probs(self, tape, x, samples, rng)
    }

    fn as_bayes(&self) -> Option<&BayesMlp> {
        Some(self)
    }
}

impl PosteriorClassifier for DropoutMlp {
    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn num_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn sample_weights(&self, rng: &mut RngStream) -> SampledNetwork {
        self.sample_network(rng)
    }

    fn sample_log_probs(&self, tape: &mut ComputationTape, x: Var, samples: usize, rng: &mut RngStream) -> Var {
        DropoutMlp::sample_log_probs(self, tape, x, samples, rng)
    }
}

/// Either supported posterior classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Bnn(BayesMlp),
    Dropout(DropoutMlp),
}

impl Classifier {
    fn inner(&self) -> &dyn PosteriorClassifier {
        match self {
            Classifier::Bnn(m) => m,
            Classifier::Dropout(m) => m,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        match self {
            Classifier::Bnn(m) => &m.sizes,
            Classifier::Dropout(m) => &m.sizes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Classifier::Bnn(m) => m.validate(),
            Classifier::Dropout(m) => m.validate(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Classifier::Bnn(_) => "bnn",
            Classifier::Dropout(_) => "dropout",
        }
    }
}

impl PosteriorClassifier for Classifier {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }

    fn sample_weights(&self, rng: &mut RngStream) -> SampledNetwork {
        self.inner().sample_weights(rng)
    }

    fn sample_log_probs(&self, tape: &mut ComputationTape, x: Var, samples: usize, rng: &mut RngStream) -> Var {
        self.inner().sample_log_probs(tape, x, samples, rng)
    }

    fn as_bayes(&self) -> Option<&BayesMlp> {
        self.inner().as_bayes()
    }
}

/// Monte Carlo summary of `p(y' | x', ω)` over posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub target_class: usize,
    pub mean: f64,
    /// Population variance of `per_sample_probs`.
    pub variance: f64,
    pub sample_count: usize,
    pub per_sample_probs: Vec<f64>,
}

impl PredictiveSummary {
    pub fn from_probs(target_class: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidConfig(
                "predictive summary needs at least one sample".into(),
            ));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Contract("sample probability outside [0, 1]".into()));
        }
        let n = probs.len() as f64;
        let mean = probs.iter().sum::<f64>() / n;
        let variance = (probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n).min(0.25);
        Ok(Self {
            target_class,
            mean: mean.clamp(0.0, 1.0),
            variance,
            sample_count: probs.len(),
            per_sample_probs: probs,
        })
    }

    /// Standard error of `mean`.
    pub fn std_error(&self) -> f64 {
        (self.variance / self.sample_count as f64).sqrt()
    }
}

fn check_input(model: &dyn PosteriorClassifier, x: &[f64]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::dimension("classifier input", model.input_dim(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite input".into()));
    }
    Ok(())
}

/// `S x C` matrix of per-sample class probabilities for one input.
pub fn sample_probabilities(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    samples: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    check_input(model, x)?;
    if samples == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let mut tape = ComputationTape::new();
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    let lp = model.sample_log_probs(&mut tape, xv, samples, rng);
    Ok(tape.value(lp).map(f64::exp))
}

/// Posterior predictive mean and variance of `target_class` at `x`.
pub fn predictive_summary(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    target_class: usize,
    samples: usize,
    rng: &mut RngStream,
) -> Result<PredictiveSummary> {
    let c = model.num_classes();
    if target_class >= c {
        return Err(Error::InvalidClass {
            class: target_class,
            num_classes: c,
        });
    }
    if samples < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples, got {samples}")));
    }
    let probs = sample_probabilities(model, x, samples, rng)?;
    let column = (0..samples).map(|s| probs.row(s)[target_class]).collect();
    PredictiveSummary::from_probs(target_class, column)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Posterior predictive mean for every class at `x`.
pub fn predictive_means(
    model: &dyn PosteriorClassifier,
    x: &[f64],
    samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let probs = sample_probabilities(model, x, samples, rng)?;
    let c = model.num_classes();
    let mut means = vec![0.0; c];
    for s in 0..samples {
        for (m, p) in means.iter_mut().zip(probs.row(s)) {
            *m += p;
        }
    }
    means.iter_mut().for_each(|m| *m /= samples as f64);
    Ok(means)
}

/// `argmax_c p(c | x, D)` estimated with `samples` posterior draws.
pub fn predict_class(model: &dyn PosteriorClassifier, x: &[f64], samples: usize, rng: &mut RngStream) -> Result<usize> {
    Ok(argmax(&predictive_means(model, x, samples, rng)?))
}

/// Predictive means for a whole batch `[N, J]`, sharing `samples` weight draws across rows.
pub fn predictive_means_batch(
    model: &dyn PosteriorClassifier,
    x: &Tensor,
    samples: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let (n, j) = x.matrix_dims();
    if j != model.input_dim() {
        return Err(Error::dimension("classifier input", model.input_dim(), j));
    }
    let c = model.num_classes();
    let mut acc = Tensor::zeros(&[n, c]);
    for _ in 0..samples {
        let lp = model.sample_weights(rng).log_probs(x)?;
        for (a, v) in acc.data_mut().iter_mut().zip(lp.data()) {
            *a += v.exp();
        }
    }
    Ok(acc.map(|v| v / samples as f64))
}

/// Fraction of `indices` whose predicted class matches the label.
pub fn accuracy(
    model: &dyn PosteriorClassifier,
    data: &crate::data::Dataset,
    indices: &[usize],
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (x, y) = data.batch(indices);
    let means = predictive_means_batch(model, &x, samples, rng)?;
    let correct = y
        .iter()
        .enumerate()
        .filter(|(r, &label)| argmax(means.row(*r)) == label)
        .count();
    Ok(correct as f64 / indices.len() as f64)
}
