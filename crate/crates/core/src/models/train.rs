use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{BayesMlp, Classifier, DropoutMlp};
use crate::adam::{Adam, AdamConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, RngStream};
use crate::tape::{ComputationTape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    #[default]
    All,
    /// Only the output layer is updated; every other parameter stays bit-identical.
    FinalOnly,
}

impl std::str::FromStr for Trainable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Trainable::All),
            "final_only" | "final-only" => Ok(Trainable::FinalOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown trainable layers '{other}' (expected all or final_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the prior KL term relative to the mean NLL. `None` means `1 / |D|`.
    pub kl_weight: Option<f64>,
    pub trainable: Trainable,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-2,
            batch_size: 64,
            kl_weight: None,
            trainable: Trainable::All,
            seed: 0,
        }
    }
}

/// Mean objective of every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
    pub steps: usize,
}

/// Minimizes mean NLL (plus the weighted prior KL for a BNN) over `indices` with Adam.
pub fn train(model: &mut Classifier, data: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<TrainReport> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    AdamConfig::with_learning_rate(config.learning_rate).validate()?;
    if data.n_features() != model.sizes()[0] {
        return Err(Error::dimension(
            "training features",
            model.sizes()[0],
            data.n_features(),
        ));
    }
    let classes = *model.sizes().last().unwrap();
    if data.num_classes() > classes {
        return Err(Error::InvalidClass {
            class: data.num_classes() - 1,
            num_classes: classes,
        });
    }
    match model {
        Classifier::Bnn(m) => train_bayes(m, data, indices, config),
        Classifier::Dropout(m) => train_dropout(m, data, indices, config),
    }
}

fn layer_is_trainable(trainable: Trainable, layer: usize, n_layers: usize) -> bool {
    trainable == Trainable::All || layer + 1 == n_layers
}

/// Epoch loop shared by both model kinds. `step` applies one optimizer update
/// for a batch and returns the batch loss.
fn run_epochs(
    indices: &[usize],
    config: &TrainConfig,
    mut step: impl FnMut(&[usize], &mut RngStream) -> Result<f64>,
) -> Result<TrainReport> {
    let mut order = indices.to_vec();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let mut shuffle = rng::stream(config.seed, &[rng::label::SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut noise = rng::stream(config.seed, &[rng::label::TRAINING, epoch as u64, b as u64]);
            let loss = step(batch, &mut noise).map_err(|e| match e {
                Error::Contract(detail) => Error::Training {
                    epoch,
                    batch: b,
                    detail,
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    detail: format!("loss is {loss}"),
                });
            }
            total += loss;
            batches += 1;
            steps += 1;
        }
        trace.push(total / batches as f64);
    }
    Ok(TrainReport {
        loss_trace: trace,
        steps,
    })
}

fn nll(tape: &mut ComputationTape, logits: Var, labels: Vec<usize>) -> Var {
    let lp = tape.log_softmax(logits);
    let picked = tape.gather(lp, labels);
    let m = tape.mean(picked);
    tape.neg(m)
}

fn check_gradients(grads: &[Tensor]) -> Result<()> {
    if grads.iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        Err(Error::Contract("non-finite gradient".into()))
    }
}

fn train_bayes(model: &mut BayesMlp, data: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<TrainReport> {
    let n_layers = model.layers.len();
    let kl_weight = config.kl_weight.unwrap_or(1.0 / indices.len() as f64);
    let trainable = |i: usize| layer_is_trainable(config.trainable, i, n_layers);
    let mut adam = Adam::new(
        model
            .layers
            .iter()
            .enumerate()
            .filter(|(i, _)| trainable(*i))
            .flat_map(|(_, l)| l.tensors()),
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    run_epochs(indices, config, |batch, rng| {
        let (x, y) = data.batch(batch);
        let mut tape = ComputationTape::new();
        let bound = model.bind(&mut tape, trainable);
        let xv = tape.constant(x);
        let logits = model.logits_weight_sample(&mut tape, &bound, xv, rng);
        let data_term = nll(&mut tape, logits, y);
        let kl = model.kl_to_prior(&mut tape, &bound);
        let kl = tape.scale(kl, kl_weight);
        let loss = tape.add(data_term, kl);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let mut g = Vec::new();
        for (i, b) in bound.iter().enumerate() {
            if trainable(i) {
                g.extend([
                    grads.wrt(b.w_mu),
                    grads.wrt(b.w_ls),
                    grads.wrt(b.b_mu),
                    grads.wrt(b.b_ls),
                ]);
            }
        }
        if !value.is_finite() {
            return Ok(value);
        }
        check_gradients(&g)?;
        let params = model
            .layers
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| trainable(*i))
            .flat_map(|(_, l)| l.tensors_mut())
            .collect();
        adam.step(params, &g)?;
        Ok(value)
    })
}

fn train_dropout(
    model: &mut DropoutMlp,
    data: &Dataset,
    indices: &[usize],
    config: &TrainConfig,
) -> Result<TrainReport> {
    let n_layers = model.layers.len();
    let trainable = |i: usize| layer_is_trainable(config.trainable, i, n_layers);
    let mut adam = Adam::new(
        model
            .layers
            .iter()
            .enumerate()
            .filter(|(i, _)| trainable(*i))
            .flat_map(|(_, l)| [&l.weights, &l.bias]),
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    run_epochs(indices, config, |batch, rng| {
        let (x, y) = data.batch(batch);
        let mut tape = ComputationTape::new();
        let params: Vec<(Var, Var)> = model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if trainable(i) {
                    (tape.leaf(l.weights.clone()), tape.leaf(l.bias.clone()))
                } else {
                    (tape.constant(l.weights.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        let xv = tape.constant(x);
        let logits = model.logits_with_dropout(&mut tape, &params, xv, rng);
        let loss = nll(&mut tape, logits, y);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = params
            .iter()
            .enumerate()
            .filter(|(i, _)| trainable(*i))
            .flat_map(|(_, &(w, b))| [grads.wrt(w), grads.wrt(b)])
            .collect();
        check_gradients(&g)?;
        let tensors = model
            .layers
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| trainable(*i))
            .flat_map(|(_, l)| [&mut l.weights, &mut l.bias])
            .collect();
        adam.step(tensors, &g)?;
        Ok(value)
    })
}
