//! JSON checkpoint: config, environment shape, named parameter arrays and
//! the training history.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, TransformerModel};
use super::train::EpochRecord;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub n_total: usize,
    pub extent: [f64; 3],
    pub tensors: Vec<NamedTensor>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &TransformerModel, history: &[EpochRecord]) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: model.config.clone(),
            n_total: model.n_total,
            extent: model.extent,
            tensors: model
                .tensors()
                .into_iter()
                .map(|(name, data)| NamedTensor {
                    name,
                    data: data.to_vec(),
                })
                .collect(),
            history: history.to_vec(),
        }
    }

    pub fn into_model(self) -> Result<TransformerModel> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint schema {}",
                self.schema_version
            )));
        }
        let mut model = TransformerModel::with_shape(self.config, self.n_total, self.extent, 0)?;
        let mut stored = self.tensors.into_iter();
        for (name, target) in model.tensors_mut() {
            let t = stored
                .next()
                .ok_or_else(|| Error::Shape(format!("checkpoint is missing tensor {name}")))?;
            if t.name != name || t.data.len() != target.len() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} ({} values) does not match {name} ({} values)",
                    t.name,
                    t.data.len(),
                    target.len()
                )));
            }
            if !t.data.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("tensor {name} holds non-finite values")));
            }
            target.copy_from_slice(&t.data);
        }
        if let Some(extra) = stored.next() {
            return Err(Error::Shape(format!("unexpected tensor {} in checkpoint", extra.name)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}
