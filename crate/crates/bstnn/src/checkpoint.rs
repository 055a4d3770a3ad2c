//! Versioned JSON checkpoints: model kind, dimensions, prior and
//! sharpening configuration, normalization statistics, the graph
//! fingerprint, and every parameter tensor by name.
//!
//! Floating-point values are serialized in shortest-round-trip decimal
//! form, so a save/load cycle reproduces parameters bit for bit.

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::models::ModelDims;
use crate::params::{ParamGroup, ParamRole, ParamStore};
use crate::variational::{Prior, SharpeningConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_FORMAT: &str = "bstnn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Which model family a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Btnn,
    Bstnn,
    Comp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Btnn => "btnn",
            ModelKind::Bstnn => "bstnn",
            ModelKind::Comp => "comp",
        };
        f.write_str(s)
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub group: ParamGroup,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// A complete serializable model state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    pub dims: ModelDims,
    pub prior: Prior,
    pub sharpening: SharpeningConfig,
    /// Dropout probability; present only for the comparison model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_p: Option<f64>,
    /// Standardization statistics fitted on the training split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    /// Fingerprint of the spatial graph the model was trained against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_sha256: Option<String>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    /// Snapshots every parameter in `store` together with the run
    /// configuration.
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        model: ModelKind,
        dims: ModelDims,
        prior: Prior,
        sharpening: SharpeningConfig,
        dropout_p: Option<f64>,
        normalization: Option<Normalization>,
        graph_sha256: Option<String>,
        store: &ParamStore,
    ) -> Checkpoint {
        let params = store
            .ids()
            .map(|id| {
                let meta = store.meta(id);
                let value = store.get(id);
                ParamRecord {
                    name: meta.name.clone(),
                    group: meta.group,
                    role: meta.role,
                    shape: value.shape().to_vec(),
                    values: value.data().to_vec(),
                }
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model,
            dims,
            prior,
            sharpening,
            dropout_p,
            normalization,
            graph_sha256,
            params,
        }
    }

    /// Writes the checkpoint as pretty-printed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Reads and validates a checkpoint file.
    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "unrecognized checkpoint format {:?}",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        ckpt.dims.validate()?;
        ckpt.prior.validate()?;
        for record in &ckpt.params {
            let expect: usize = record.shape.iter().product();
            if record.values.len() != expect {
                return Err(Error::Data(format!(
                    "parameter {} declares shape {:?} but holds {} values",
                    record.name,
                    record.shape,
                    record.values.len()
                )));
            }
            if record.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "parameter {} contains non-finite values",
                    record.name
                )));
            }
        }
        Ok(ckpt)
    }

    /// Copies every recorded tensor into `store` by name. The store must
    /// already hold the model's parameter layout (built from the same
    /// dimensions); the record set and the store must match exactly.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.ids().count() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters but the model has {}",
                self.params.len(),
                store.ids().count()
            )));
        }
        for record in &self.params {
            let id = store.by_name(&record.name).ok_or_else(|| {
                Error::Data(format!(
                    "checkpoint parameter {} does not exist in the model",
                    record.name
                ))
            })?;
            let tensor = crate::tensor::Tensor::new(record.shape.clone(), record.values.clone())?;
            store.set(id, tensor)?;
        }
        Ok(())
    }

    /// The subset of records in `group`, by reference.
    pub fn group(&self, group: ParamGroup) -> impl Iterator<Item = &ParamRecord> {
        self.params.iter().filter(move |r| r.group == group)
    }
}
