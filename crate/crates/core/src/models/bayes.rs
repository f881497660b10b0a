use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{DenseLayer, SampledNetwork};
use crate::error::{Error, Result};
use crate::rng::{self, RngStream};
use crate::tape::{self, ComputationTape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_PRIOR_SIGMA: f64 = 0.1;
/// Initial posterior standard deviation of every parameter.
pub const INITIAL_SIGMA: f64 = 0.1;

/// How posterior draws are realised when computing predictive samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draws Gaussian pre-activations directly. For a single input this has
    /// exactly the distribution of a full weight draw, at a fraction of the cost.
    #[default]
    LocalReparameterization,
    /// Draws every weight explicitly.
    Weights,
}

/// Fully connected layer with an independent Gaussian over every weight and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesLinear {
    /// `[in, out]`
    pub weight_mu: Tensor,
    pub weight_log_sigma: Tensor,
    /// `[out]`
    pub bias_mu: Tensor,
    pub bias_log_sigma: Tensor,
}

impl BayesLinear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let ls = INITIAL_SIGMA.ln();
        Self {
            weight_mu: Tensor::from_fn(&[inputs, outputs], |_| rng.sample(dist)),
            weight_log_sigma: Tensor::filled(&[inputs, outputs], ls),
            bias_mu: Tensor::from_fn(&[outputs], |_| rng.sample(dist)),
            bias_log_sigma: Tensor::filled(&[outputs], ls),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight_mu.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight_mu.shape()[1]
    }

    pub fn mean_layer(&self) -> DenseLayer {
        DenseLayer {
            weights: self.weight_mu.clone(),
            bias: self.bias_mu.clone(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> DenseLayer {
        let draw = |mu: &Tensor, ls: &Tensor, rng: &mut RngStream| {
            let mut out = mu.clone();
            for (o, l) in out.data_mut().iter_mut().zip(ls.data()) {
                let z: f64 = rng.sample(StandardNormal);
                *o += l.exp() * z;
            }
            out
        };
        DenseLayer {
            weights: draw(&self.weight_mu, &self.weight_log_sigma, rng),
            bias: draw(&self.bias_mu, &self.bias_log_sigma, rng),
        }
    }

    pub(crate) fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.weight_mu,
            &self.weight_log_sigma,
            &self.bias_mu,
            &self.bias_log_sigma,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.weight_mu,
            &mut self.weight_log_sigma,
            &mut self.bias_mu,
            &mut self.bias_log_sigma,
        ]
    }
}

/// Mean-field Gaussian Bayesian MLP with ReLU hidden layers and a softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesMlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<BayesLinear>,
    pub prior_mu: f64,
    pub prior_sigma: f64,
    #[serde(default)]
    pub sampling: SamplingMode,
}

/// Parameter handles of one layer bound to a tape.
pub(crate) struct BoundLayer {
    pub w_mu: Var,
    pub w_ls: Var,
    pub b_mu: Var,
    pub b_ls: Var,
}

impl BayesMlp {
    /// `sizes` runs from the input width to the number of classes, e.g. `[J, 64, 32, C]`.
    pub fn new(sizes: &[usize], prior_sigma: f64, seed: u64) -> Result<Self> {
        super::validate_sizes(sizes)?;
        if !(prior_sigma > 0.0 && prior_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("prior_sigma {prior_sigma} must be > 0")));
        }
        let mut rng = rng::stream(seed, &[rng::label::INIT]);
        let layers = sizes
            .windows(2)
            .map(|w| BayesLinear::new(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            prior_mu: 0.0,
            prior_sigma,
            sampling: SamplingMode::default(),
        })
    }

    /// Checks that every layer agrees with `sizes` and all scales are finite.
    pub fn validate(&self) -> Result<()> {
        super::validate_sizes(&self.sizes)?;
        if self.layers.len() + 1 != self.sizes.len() {
            return Err(Error::dimension(
                "BayesMlp layers",
                self.sizes.len() - 1,
                self.layers.len(),
            ));
        }
        for (l, w) in self.layers.iter().zip(self.sizes.windows(2)) {
            if l.weight_mu.shape() != [w[0], w[1]]
                || l.weight_log_sigma.shape() != [w[0], w[1]]
                || l.bias_mu.shape() != [w[1]]
                || l.bias_log_sigma.shape() != [w[1]]
            {
                return Err(Error::dimension("BayesMlp layer", w, l.weight_mu.shape()));
            }
            if l.tensors().iter().any(|t| !t.is_finite()) {
                return Err(Error::Contract("non-finite posterior parameter".into()));
            }
        }
        if !(self.prior_sigma > 0.0) {
            return Err(Error::Contract("prior_sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_network(&self, rng: &mut RngStream) -> SampledNetwork {
        SampledNetwork {
            layers: self.layers.iter().map(|l| l.sample(rng)).collect(),
            masks: Vec::new(),
        }
    }

    /// Network evaluated at the posterior means.
    pub fn mean_network(&self) -> SampledNetwork {
        SampledNetwork {
            layers: self.layers.iter().map(BayesLinear::mean_layer).collect(),
            masks: Vec::new(),
        }
    }

    pub(crate) fn bind(&self, tape: &mut ComputationTape, trainable: impl Fn(usize) -> bool) -> Vec<BoundLayer> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut put = |t: &Tensor| {
                    if trainable(i) {
                        tape.leaf(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                };
                BoundLayer {
                    w_mu: put(&l.weight_mu),
                    w_ls: put(&l.weight_log_sigma),
                    b_mu: put(&l.bias_mu),
                    b_ls: put(&l.bias_log_sigma),
                }
            })
            .collect()
    }

    /// Logits of a batch under one reparameterized weight draw shared by all rows.
    pub(crate) fn logits_weight_sample(
        &self,
        tape: &mut ComputationTape,
        bound: &[BoundLayer],
        x: Var,
        rng: &mut RngStream,
    ) -> Var {
        let mut h = x;
        let last = bound.len() - 1;
        for (i, b) in bound.iter().enumerate() {
            let w = reparameterize(tape, b.w_mu, b.w_ls, rng);
            let bias = reparameterize(tape, b.b_mu, b.b_ls, rng);
            h = tape::affine(tape, h, w, bias);
            if i < last {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Closed-form `KL(q || prior)` summed over every parameter.
    pub(crate) fn kl_to_prior(&self, tape: &mut ComputationTape, bound: &[BoundLayer]) -> Var {
        let mut terms = Vec::with_capacity(bound.len() * 2);
        for b in bound {
            terms.push(gaussian_kl_to_prior(
                tape,
                b.w_mu,
                b.w_ls,
                self.prior_mu,
                self.prior_sigma,
            ));
            terms.push(gaussian_kl_to_prior(
                tape,
                b.b_mu,
                b.b_ls,
                self.prior_mu,
                self.prior_sigma,
            ));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        total
    }

    /// `S x C` log-probabilities for the single row `x`; parameters enter as constants.
    pub(crate) fn sample_log_probs(
        &self,
        tape: &mut ComputationTape,
        x: Var,
        samples: usize,
        rng: &mut RngStream,
    ) -> Var {
        match self.sampling {
            SamplingMode::LocalReparameterization => self.local_log_probs(tape, x, samples, rng),
            SamplingMode::Weights => {
                let rows: Vec<Var> = (0..samples)
                    .map(|_| {
                        let net = self.sample_network(rng);
                        let logits = net.logits_on_tape(tape, x);
                        tape.log_softmax(logits)
                    })
                    .collect();
                tape.concat_rows(rows)
            }
        }
    }

    fn local_log_probs(&self, tape: &mut ComputationTape, x: Var, samples: usize, rng: &mut RngStream) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        let mut rows = 1;
        for (i, l) in self.layers.iter().enumerate() {
            let w_mu = tape.constant(l.weight_mu.clone());
            let w_var = tape.constant(l.weight_log_sigma.map(|v| (2.0 * v).exp()));
            let b_mu = tape.constant(l.bias_mu.clone());
            let b_var = tape.constant(l.bias_log_sigma.map(|v| (2.0 * v).exp()));
            let mean = tape::affine(tape, h, w_mu, b_mu);
            let h2 = tape.square(h);
            let var = tape::affine(tape, h2, w_var, b_var);
            let mut sd = tape.sqrt(var);
            let mut mean = mean;
            if rows == 1 {
                mean = tape.repeat_rows(mean, samples);
                sd = tape.repeat_rows(sd, samples);
                rows = samples;
            }
            let noise = tape.constant(Tensor::from_fn(&[rows, l.outputs()], |_| rng.sample(StandardNormal)));
            let spread = tape.mul(sd, noise);
            h = tape.add(mean, spread);
            if i < last {
                h = tape.relu(h);
            }
        }
        tape.log_softmax(h)
    }
}

/// `mu + exp(log_sigma) * z` with fresh standard-normal `z`.
fn reparameterize(tape: &mut ComputationTape, mu: Var, log_sigma: Var, rng: &mut RngStream) -> Var {
    let shape = tape.value(mu).shape().to_vec();
    let z = tape.constant(Tensor::from_fn(&shape, |_| rng.sample(StandardNormal)));
    let sigma = tape.exp(log_sigma);
    let spread = tape.mul(sigma, z);
    tape.add(mu, spread)
}

/// `sum[ ln(sp) - ls + (exp(2 ls) + (mu - mp)^2) / (2 sp^2) - 1/2 ]`.
fn gaussian_kl_to_prior(tape: &mut ComputationTape, mu: Var, log_sigma: Var, prior_mu: f64, prior_sigma: f64) -> Var {
    let n = tape.value(mu).len() as f64;
    let inv = 1.0 / (2.0 * prior_sigma * prior_sigma);
    let two_ls = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_ls);
    let centred = tape.add_scalar(mu, -prior_mu);
    let sq = tape.square(centred);
    let quad = tape.add(var, sq);
    let quad = tape.scale(quad, inv);
    let diff = tape.sub(quad, log_sigma);
    let s = tape.sum(diff);
    tape.add_scalar(s, n * (prior_sigma.ln() - 0.5))
}
