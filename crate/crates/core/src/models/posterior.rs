use serde::{Deserialize, Serialize};

use super::{BayesMlp, Classifier};
use crate::error::{Error, Result};

/// Where one parameter tensor sits inside the flattened posterior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosteriorSegment {
    /// `layer{i}.weight` or `layer{i}.bias`.
    pub name: String,
    pub layer: usize,
    pub offset: usize,
    pub len: usize,
}

/// Flattened mean-field Gaussian posterior.
///
/// Layout: for each layer in forward order, the weight matrix (row-major,
/// `[in, out]`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mus: Vec<f64>,
    pub variances: Vec<f64>,
    pub segments: Vec<PosteriorSegment>,
}

impl GaussianPosterior {
    pub fn new(mus: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mus.len() != variances.len() {
            return Err(Error::dimension("GaussianPosterior", mus.len(), variances.len()));
        }
        if mus.is_empty() {
            return Err(Error::Contract("empty posterior".into()));
        }
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Contract(format!("posterior variance {v} is not positive")));
        }
        let len = mus.len();
        Ok(Self {
            mus,
            variances,
            segments: vec![PosteriorSegment {
                name: "all".into(),
                layer: 0,
                offset: 0,
                len,
            }],
        })
    }

    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mus.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.segments.iter().find(|s| s.name == name).map(|s| {
            (
                &self.mus[s.offset..s.offset + s.len],
                &self.variances[s.offset..s.offset + s.len],
            )
        })
    }
}

impl BayesMlp {
    pub fn gaussian_posterior(&self) -> GaussianPosterior {
        let mut mus = Vec::new();
        let mut variances = Vec::new();
        let mut segments = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (kind, mu, ls) in [
                ("weight", &l.weight_mu, &l.weight_log_sigma),
                ("bias", &l.bias_mu, &l.bias_log_sigma),
            ] {
                segments.push(PosteriorSegment {
                    name: format!("layer{i}.{kind}"),
                    layer: i,
                    offset: mus.len(),
                    len: mu.len(),
                });
                mus.extend_from_slice(mu.data());
                variances.extend(ls.data().iter().map(|v| (2.0 * v).exp()));
            }
        }
        GaussianPosterior {
            mus,
            variances,
            segments,
        }
    }
}

/// Flattened posterior of a BNN. MC-dropout networks have no closed-form
/// posterior and are rejected.
pub fn extract_gaussian_posterior(model: &Classifier) -> Result<GaussianPosterior> {
    match model {
        Classifier::Bnn(m) => Ok(m.gaussian_posterior()),
        Classifier::Dropout(_) => Err(Error::UnsupportedModel(
            "posterior KL is only defined for Bayesian networks, not MC dropout".into(),
        )),
    }
}
