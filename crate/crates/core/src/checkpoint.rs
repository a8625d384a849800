//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! saved model reloads bit-for-bit.

use crate::embed::EmbedderSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaxonomyModel};
use crate::tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "skillgraph-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub embedder: EmbedderSpec,
    /// Node ids owning a structural embedding row, in row order.
    pub structural_ids: Vec<String>,
    pub parameters: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &TaxonomyModel, embedder: &EmbedderSpec) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            model: model.config,
            embedder: embedder.clone(),
            structural_ids: model.structural_ids().to_vec(),
            parameters: model
                .store
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    tensor: p.value.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let c: Checkpoint = serde_json::from_slice(bytes)?;
        if c.format != FORMAT {
            return Err(Error::Checkpoint(format!("unrecognized format `{}`", c.format)));
        }
        if c.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }

    pub fn into_model(self) -> Result<(TaxonomyModel, EmbedderSpec)> {
        let mut store = ParamStore::new();
        for p in self.parameters {
            if store.find(&p.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {}", p.name)));
            }
            let expected: usize = p.tensor.shape().iter().product();
            if expected != p.tensor.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has inconsistent shape",
                    p.name
                )));
            }
            store.add(p.name, p.tensor);
        }
        let model = TaxonomyModel::from_parts(self.model, store, self.structural_ids)?;
        Ok((model, self.embedder))
    }
}

pub fn save_checkpoint(model: &TaxonomyModel, embedder: &EmbedderSpec) -> String {
    Checkpoint::from_model(model, embedder).to_json()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<(TaxonomyModel, EmbedderSpec)> {
    Checkpoint::parse(bytes)?.into_model()
}
