use serde::{Deserialize, Serialize};

use super::{BayesCfConfig, EarlyStop, PsceConfig, SchutConfig};
use crate::error::{Error, Result};

/// Hyperparameters per dataset.
///
/// German Credit and Spambase have no reference weights for the δ and
/// variance hinges; both are set to 1 there. `Synthetic` reuses the tabular
/// Credit/Spam values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Credit,
    Spam,
    BreastCancer,
    Mnist,
    Synthetic,
}

impl Preset {
    pub const NAMES: [&'static str; 5] = ["credit", "spam", "breast_cancer", "mnist", "synthetic"];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Credit => "credit",
            Preset::Spam => "spam",
            Preset::BreastCancer => "breast_cancer",
            Preset::Mnist => "mnist",
            Preset::Synthetic => "synthetic",
        }
    }

    /// PSCE weights, running the full iteration budget (no early stopping).
    pub fn psce(self) -> PsceConfig {
        // (prox, elbo, delta-hinge, var-hinge, class)
        let (ldist, elbo, del, var, clf) = match self {
            Preset::Credit | Preset::Spam | Preset::Synthetic => (0.001, 0.002, 1.0, 1.0, 1.0),
            Preset::BreastCancer => (0.2, 0.1, 0.2, 0.1, 0.1),
            Preset::Mnist => (0.0001, 0.0001, 1.0, 0.1, 1.0),
        };
        PsceConfig {
            lambda_clf: clf,
            lambda_del: del,
            lambda_ldist: ldist,
            lambda_var: var,
            lambda_elbo: elbo,
            delta: 0.05,
            epsilon: 0.01,
            learning_rate: 0.1,
            max_iterations: 2000,
            early_stop: EarlyStop::Never,
            ..PsceConfig::default()
        }
    }

    pub fn bayescf(self) -> BayesCfConfig {
        let lambda_prox = match self {
            Preset::Credit | Preset::Spam | Preset::Synthetic => 0.001,
            Preset::BreastCancer => 0.1,
            Preset::Mnist => 1e-7,
        };
        BayesCfConfig {
            lambda_prox,
            learning_rate: 0.1,
            max_iterations: 2000,
            early_stop: EarlyStop::Never,
            ..BayesCfConfig::default()
        }
    }

    pub fn schut(self) -> SchutConfig {
        let (step_size, max_changes) = match self {
            Preset::Credit | Preset::Spam | Preset::Synthetic => (0.1, 20),
            Preset::BreastCancer => (0.1, 10),
            Preset::Mnist => (0.2, 5),
        };
        SchutConfig {
            step_size,
            max_changes_per_feature: max_changes,
            max_iterations: 2000,
            confidence_threshold: 0.95,
            ..SchutConfig::default()
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "credit" | "german_credit" => Ok(Preset::Credit),
            "spam" | "spambase" => Ok(Preset::Spam),
            "breast_cancer" => Ok(Preset::BreastCancer),
            "mnist" => Ok(Preset::Mnist),
            "synthetic" => Ok(Preset::Synthetic),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (valid: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }
}
