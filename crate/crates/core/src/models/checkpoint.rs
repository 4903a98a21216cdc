use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ValueGrid;

use super::{ModelConfig, ModelError, SequenceModel};

pub const CHECKPOINT_FORMAT: &str = "attractor-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Self-describing JSON snapshot: model config plus every parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// Number of trainable RNN initial states (0 for the Transformer).
    pub initial_states: usize,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &SequenceModel) -> Self {
        let initial_states = match model {
            SequenceModel::Rnn(m) => m.initial_states().len(),
            SequenceModel::Transformer(_) => 0,
        };
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: *model.config(),
            initial_states,
            params: model
                .params()
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<SequenceModel, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unknown format {:?} (expected {CHECKPOINT_FORMAT:?})",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads version {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = SequenceModel::new(self.config)?;
        model.prepare_for_dataset(self.initial_states);
        let params = model.params_mut();
        if params.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} parameters, architecture expects {}",
                self.params.len(),
                params.len()
            )));
        }
        for (param, record) in params.iter_mut().zip(self.params) {
            if param.name != record.name || param.value.shape() != record.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} {:?} does not match architecture slot {} {:?}",
                    record.name,
                    record.shape,
                    param.name,
                    param.value.shape()
                )));
            }
            param.value = ValueGrid::new(record.shape, record.data)
                .map_err(|e| ModelError::Checkpoint(format!("parameter {}: {e}", record.name)))?;
        }
        Ok(model)
    }
}

/// Writes atomically via a temporary sibling file.
pub fn save_checkpoint(model: &SequenceModel, path: &Path) -> Result<(), ModelError> {
    let json = serde_json::to_string(&Checkpoint::from_model(model))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, json)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SequenceModel, ModelError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ModelError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.into_model()
}
