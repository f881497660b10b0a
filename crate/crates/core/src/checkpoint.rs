//! Versioned JSON container for trained models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::generative::{ClassAutoencoder, Vae};
use crate::models::{BayesMlp, Classifier, DropoutMlp};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Bnn {
        model: BayesMlp,
    },
    Dropout {
        model: DropoutMlp,
    },
    Vae {
        model: Vae,
    },
    /// One autoencoder per class.
    Ae {
        models: Vec<ClassAutoencoder>,
    },
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Bnn { .. } => "bnn",
            Artifact::Dropout { .. } => "dropout",
            Artifact::Vae { .. } => "vae",
            Artifact::Ae { .. } => "ae",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Artifact::Bnn { model } => model.validate(),
            Artifact::Dropout { model } => model.validate(),
            Artifact::Vae { model } => model.validate(),
            Artifact::Ae { models } => {
                if models.is_empty() {
                    return Err(Error::Checkpoint("autoencoder checkpoint holds no models".into()));
                }
                models
                    .iter()
                    .try_for_each(|m| ClassAutoencoder::from_layers(m.class, m.layers.clone()).map(drop))
            }
        }
    }
}

impl From<Classifier> for Artifact {
    fn from(c: Classifier) -> Self {
        match c {
            Classifier::Bnn(model) => Artifact::Bnn { model },
            Classifier::Dropout(model) => Artifact::Dropout { model },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    #[serde(flatten)]
    pub artifact: Artifact,
    /// Standardization the model was trained under, applied to raw inputs before use.
    #[serde(default)]
    pub standardization: Option<Standardization>,
    #[serde(default)]
    pub class_names: Vec<String>,
    /// File name of the run manifest that produced this checkpoint.
    #[serde(default)]
    pub manifest: Option<String>,
}

impl Checkpoint {
    pub fn new(artifact: impl Into<Artifact>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            artifact: artifact.into(),
            standardization: None,
            class_names: Vec::new(),
            manifest: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported schema_version {v}"))),
            None => return Err(Error::Checkpoint("missing schema_version".into())),
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.artifact.validate()?;
        Ok(ckpt)
    }

    pub fn classifier(&self) -> Result<Classifier> {
        match &self.artifact {
            Artifact::Bnn { model } => Ok(Classifier::Bnn(model.clone())),
            Artifact::Dropout { model } => Ok(Classifier::Dropout(model.clone())),
            other => Err(self.wrong_kind("bnn or dropout", other)),
        }
    }

    pub fn vae(&self) -> Result<Vae> {
        match &self.artifact {
            Artifact::Vae { model } => Ok(model.clone()),
            other => Err(self.wrong_kind("vae", other)),
        }
    }

    pub fn autoencoders(&self) -> Result<Vec<ClassAutoencoder>> {
        match &self.artifact {
            Artifact::Ae { models } => Ok(models.clone()),
            other => Err(self.wrong_kind("ae", other)),
        }
    }

    fn wrong_kind(&self, wanted: &str, found: &Artifact) -> Error {
        Error::Checkpoint(format!("expected a {wanted} checkpoint, found {}", found.kind()))
    }
}
