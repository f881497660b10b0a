use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{bind_dense, check_row, dense_forward, dense_on_tape, init_dense, FitConfig};
use crate::adam::{Adam, AdamConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::DenseLayer;
use crate::rng;
use crate::tape::ComputationTape;
use crate::tensor::{squared_distance, Tensor};

/// Deterministic autoencoder `D_in -> hidden -> D_z -> hidden -> D_in`
/// trained on the instances of a single class.
///
/// ReLU follows every layer except the output, which is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAutoencoder {
    pub class: usize,
    /// Four layers in forward order.
    pub layers: Vec<DenseLayer>,
}

impl ClassAutoencoder {
    pub fn new(class: usize, input_dim: usize, hidden: usize, latent: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || latent == 0 {
            return Err(Error::InvalidConfig("autoencoder widths must be positive".into()));
        }
        let mut rng = rng::stream(seed, &[rng::label::INIT, 3, class as u64]);
        let widths = [input_dim, hidden, latent, hidden, input_dim];
        Ok(Self {
            class,
            layers: widths.windows(2).map(|w| init_dense(w[0], w[1], &mut rng)).collect(),
        })
    }

    pub fn tabular(class: usize, input_dim: usize, seed: u64) -> Result<Self> {
        Self::new(class, input_dim, super::TABULAR_HIDDEN, super::TABULAR_LATENT, seed)
    }

    /// Wraps explicit layers after checking that they chain and return to the input width.
    pub fn from_layers(class: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("autoencoder needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].weights.shape()[1] != w[1].weights.shape()[0] {
                return Err(Error::dimension(
                    "ClassAutoencoder chain",
                    w[0].weights.shape(),
                    w[1].weights.shape(),
                ));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.shape()[1] {
                return Err(Error::dimension(
                    "ClassAutoencoder bias",
                    l.weights.shape()[1],
                    l.bias.len(),
                ));
            }
        }
        let (i, o) = (layers[0].weights.shape()[0], layers.last().unwrap().weights.shape()[1]);
        if i != o {
            return Err(Error::dimension("ClassAutoencoder output", i, o));
        }
        Ok(Self { class, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.shape()[0]
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_row("ClassAutoencoder", self.input_dim(), x)?;
        let last = self.layers.len() - 1;
        let mut h = Tensor::vector(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            h = dense_forward(l, &h, i < last)?;
        }
        Ok(h.into_data())
    }

    /// `||x - AE(x)||²`.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        Ok(squared_distance(x, &self.reconstruct(x)?))
    }
}

/// Minimizes mean squared reconstruction error over `indices`; returns the per-epoch mean.
pub fn train_autoencoder(
    ae: &mut ClassAutoencoder,
    data: &Dataset,
    indices: &[usize],
    config: &FitConfig,
) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    check_row("train_autoencoder features", ae.input_dim(), data.row(indices[0]))?;
    let mut adam = Adam::new(
        ae.layers.iter().flat_map(|l| [&l.weights, &l.bias]),
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    let last = ae.layers.len() - 1;
    let mut order = indices.to_vec();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(
            config.seed,
            &[rng::label::SHUFFLE, 3, ae.class as u64, epoch as u64],
        ));
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (x, _) = data.batch(batch);
            let mut tape = ComputationTape::new();
            let params: Vec<_> = ae.layers.iter().map(|l| bind_dense(&mut tape, l, true)).collect();
            let xv = tape.constant(x);
            let mut h = xv;
            for (i, &p) in params.iter().enumerate() {
                h = dense_on_tape(&mut tape, p, h, i < last);
            }
            let r = tape.sub(xv, h);
            let sq = tape.square(r);
            let s = tape.sum(sq);
            let loss = tape.scale(s, 1.0 / batch.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    detail: format!("reconstruction loss is {value}"),
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = params
                .iter()
                .flat_map(|&(w, bias)| [grads.wrt(w), grads.wrt(bias)])
                .collect();
            adam.step(
                ae.layers
                    .iter_mut()
                    .flat_map(|l| [&mut l.weights, &mut l.bias])
                    .collect(),
                &g,
            )?;
            total += value * batch.len() as f64;
        }
        trace.push(total / indices.len() as f64);
    }
    Ok(trace)
}

/// One autoencoder per class, each trained only on that class's rows of `indices`.
pub fn train_class_autoencoders(
    data: &Dataset,
    indices: &[usize],
    hidden: usize,
    latent: usize,
    config: &FitConfig,
) -> Result<Vec<ClassAutoencoder>> {
    (0..data.num_classes())
        .map(|c| {
            let rows = data.rows_of_class(indices, c);
            let mut ae = ClassAutoencoder::new(c, data.n_features(), hidden, latent, config.seed)?;
            train_autoencoder(&mut ae, data, &rows, config)?;
            Ok(ae)
        })
        .collect()
}
