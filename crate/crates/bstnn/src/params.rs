//! Named, grouped parameter storage.
//!
//! All trainable state of a model lives in one [`ParamStore`]. Parameters are
//! identified by stable [`ParamId`]s assigned in creation order, carry a name
//! and a [`ParamGroup`] used for freezing and transfer, and can be hashed for
//! integrity checks across save/load boundaries.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Transfer/freezing unit a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Recurrent feature extractor shared between temporal and spatio-temporal models.
    Temporal,
    /// Readout head of the purely temporal model.
    TemporalHead,
    /// Graph-convolution stack of the spatio-temporal model.
    Spatial,
    /// Readout head of the spatio-temporal model.
    SpatialHead,
    /// Parameters of the dropout-ensemble comparison model.
    Comp,
}

/// What a tensor represents within its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    /// Variational posterior mean.
    Mu,
    /// Pre-softplus parameterization of the posterior standard deviation.
    Rho,
    /// Per-weight sharpening step size.
    Eta,
    /// Ordinary point-estimate weight.
    Point,
}

/// Descriptive metadata of one parameter tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub group: ParamGroup,
    pub role: ParamRole,
}

/// Stable handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Default)]
pub struct ParamStore {
    values: Vec<Tensor>,
    metas: Vec<ParamMeta>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; names must be unique.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        role: ParamRole,
        value: Tensor,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.metas.iter().any(|m| m.name == name) {
            return Err(Error::Contract(format!("duplicate parameter name '{name}'")));
        }
        self.values.push(value);
        self.metas.push(ParamMeta { name, group, role });
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape(format!(
                "parameter '{}' has shape {:?}, cannot assign {:?}",
                self.metas[id.0].name,
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn meta(&self, id: ParamId) -> &ParamMeta {
        &self.metas[id.0]
    }

    /// All ids in creation order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose group satisfies the filter, in creation order.
    pub fn ids_in<'a>(
        &'a self,
        filter: impl Fn(ParamGroup) -> bool + 'a,
    ) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| filter(self.metas[id.0].group))
    }

    /// Looks a parameter up by name.
    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.metas.iter().position(|m| m.name == name).map(ParamId)
    }

    /// Total number of scalar values across the selected groups.
    pub fn scalar_count(&self, filter: impl Fn(ParamGroup) -> bool) -> usize {
        self.ids_in(filter).map(|id| self.get(id).len()).sum()
    }

    /// Copies every parameter of `group` from `src` into this store, matching
    /// by name. Returns how many tensors were copied.
    ///
    /// Every parameter of that group present in this store must exist in the
    /// source with the same shape; this is the transfer path between a
    /// pretrained temporal model and a spatio-temporal one.
    pub fn copy_group_from(&mut self, src: &ParamStore, group: ParamGroup) -> Result<usize> {
        let targets: Vec<ParamId> = self.ids_in(|g| g == group).collect();
        if targets.is_empty() {
            return Err(Error::Contract(format!(
                "destination store has no parameters in group {group:?}"
            )));
        }
        let mut copied = 0usize;
        for id in targets {
            let name = self.meta(id).name.clone();
            let src_id = src.by_name(&name).ok_or_else(|| {
                Error::Contract(format!("source store is missing parameter '{name}'"))
            })?;
            self.set(id, src.get(src_id).clone())?;
            copied += 1;
        }
        Ok(copied)
    }

    /// SHA-256 over names, shapes, and exact value bytes of the selected
    /// parameters, in creation order. Stable across save/load.
    pub fn sha256_hex(&self, filter: impl Fn(ParamGroup) -> bool) -> String {
        let mut hasher = Sha256::new();
        for id in self.ids_in(&filter) {
            let meta = self.meta(id);
            let value = self.get(id);
            hasher.update(meta.name.as_bytes());
            hasher.update([0u8]);
            hasher.update((value.shape().len() as u64).to_le_bytes());
            for &d in value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &x in value.data() {
                hasher.update(x.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}
