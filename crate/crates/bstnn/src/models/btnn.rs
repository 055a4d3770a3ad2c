//! Purely temporal Bayesian network: two stacked Bayesian LSTM layers and a
//! Bayesian dense readout, applied independently per spatial node.

use super::{step_slices_3d, ModelDims};
use crate::error::{Error, Result};
use crate::layers::{dense_apply, dense_apply_values, lstm_sequence, lstm_sequence_values, BayesianDense, BayesianLstm};
use crate::params::{ParamGroup, ParamStore};
use crate::pass::{Pass, WeightBinder};
use crate::rng::NoiseSource;
use crate::tensor::tape::Var;
use crate::tensor::{stack, Tensor};
use crate::variational::VariationalWeight;
use rand::Rng;

/// Temporal model: per-node sequence regression with weight uncertainty.
pub struct BtnnModel {
    pub dims: ModelDims,
    pub lstm1: BayesianLstm,
    pub lstm2: BayesianLstm,
    pub head: BayesianDense,
}

impl BtnnModel {
    /// Registers all parameters in `store` and assembles the model.
    pub fn build(
        store: &mut ParamStore,
        dims: ModelDims,
        sharpened: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        dims.validate()?;
        let lstm1 = BayesianLstm::new(
            store,
            "temporal.lstm1",
            ParamGroup::Temporal,
            dims.features,
            dims.lstm1,
            sharpened,
            rng,
        )?;
        let lstm2 = BayesianLstm::new(
            store,
            "temporal.lstm2",
            ParamGroup::Temporal,
            dims.lstm1,
            dims.lstm2,
            sharpened,
            rng,
        )?;
        let head = BayesianDense::new(
            store,
            "temporal_head.out",
            ParamGroup::TemporalHead,
            dims.lstm2,
            1,
            sharpened,
            rng,
        )?;
        Ok(BtnnModel {
            dims,
            lstm1,
            lstm2,
            head,
        })
    }

    /// All variational weights in binding order.
    pub fn variational_weights(&self) -> Vec<&VariationalWeight> {
        let mut out: Vec<&VariationalWeight> = Vec::new();
        out.extend(self.lstm1.weights());
        out.extend(self.lstm2.weights());
        out.extend(self.head.weights());
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 3 || x.shape()[1] != self.dims.window || x.shape()[2] != self.dims.features {
            return Err(Error::Shape(format!(
                "expected input [batch, {}, {}], got {:?}",
                self.dims.window,
                self.dims.features,
                x.shape()
            )));
        }
        if x.shape()[0] == 0 {
            return Err(Error::Shape("batch must not be empty".into()));
        }
        Ok(())
    }

    /// Traced forward pass: `[B, window, features]` to `[B, horizon]`
    /// predictions for the trailing window steps.
    ///
    /// Weights are drawn once per pass, shared by the whole batch, in the
    /// fixed order lstm1, lstm2, head.
    pub fn forward_on_tape(
        &self,
        pass: &mut Pass,
        binder: &mut dyn WeightBinder,
        x: &Tensor,
    ) -> Result<Var> {
        self.check_input(x)?;
        let b = x.shape()[0];
        let p = self.dims.horizon;

        let v1 = self.lstm1.bind(pass, binder)?;
        let v2 = self.lstm2.bind(pass, binder)?;
        let vh = self.head.bind(pass, binder)?;

        let xs: Vec<Var> = step_slices_3d(x)?
            .into_iter()
            .map(|s| pass.tape.input(s))
            .collect();
        let h1 = lstm_sequence(&mut pass.tape, &v1, self.dims.lstm1, &xs)?;
        let h2 = lstm_sequence(&mut pass.tape, &v2, self.dims.lstm2, &h1)?;

        let tail = &h2[h2.len() - p..];
        let stacked = pass.tape.stack(tail)?; // [P, B, H2]
        let flat = pass.tape.reshape(stacked, &[p * b, self.dims.lstm2])?;
        let out = dense_apply(&mut pass.tape, &vh, flat)?; // [P*B, 1]
        let grid = pass.tape.reshape(out, &[p, b])?;
        pass.tape.permute(grid, &[1, 0]) // [B, P]
    }

    /// Untraced forward pass with the same arithmetic and the same noise
    /// order as [`Self::forward_on_tape`].
    pub fn forward_values(
        &self,
        store: &ParamStore,
        noise: &mut dyn NoiseSource,
        x: &Tensor,
    ) -> Result<Tensor> {
        self.check_input(x)?;
        let b = x.shape()[0];
        let p = self.dims.horizon;

        let v1 = self.lstm1.sample_values(store, noise)?;
        let v2 = self.lstm2.sample_values(store, noise)?;
        let vh = self.head.sample_values(store, noise)?;

        let xs = step_slices_3d(x)?;
        let h1 = lstm_sequence_values(&v1, self.dims.lstm1, &xs)?;
        let h2 = lstm_sequence_values(&v2, self.dims.lstm2, &h1)?;

        let stacked = stack(&h2[h2.len() - p..])?; // [P, B, H2]
        let flat = stacked.reshape(&[p * b, self.dims.lstm2])?;
        let out = dense_apply_values(&vh, &flat)?;
        out.reshape(&[p, b])?.permute(&[1, 0]) // [B, P]
    }
}
