//! Comparison model: a point-estimate LSTM stack with Monte Carlo dropout
//! and a heteroscedastic two-output head.
//!
//! Dropout masks are drawn fresh on every forward pass — including at
//! prediction time — which makes repeated stochastic passes an approximate
//! posterior ensemble. The head predicts the mean and the log variance of
//! the observation; the log variance is clamped to keep `exp` bounded.

use super::{step_slices_3d, ModelDims};
use crate::error::{Error, Result};
use crate::layers::{
    dense_apply, dense_apply_values, dropout_mask, lstm_sequence, lstm_sequence_values,
    lstm_step_values, PointDense, PointLstm,
};
use crate::params::{ParamGroup, ParamStore};
use crate::pass::Pass;
use crate::tensor::tape::Var;
use crate::tensor::{stack, Tensor};
use rand::Rng;

/// Clamp bound for the predicted log variance.
pub const S_CLAMP: f64 = 15.0;

/// Default dropout probability.
pub const DROPOUT_P: f64 = 0.1;

/// Mean and log-variance outputs of one traced forward pass, both `[B, P]`.
pub struct CompForwardVars {
    pub y: Var,
    pub s: Var,
}

/// Dropout-ensemble comparison model.
pub struct CompBnnModel {
    pub dims: ModelDims,
    pub dropout_p: f64,
    pub lstm1: PointLstm,
    pub lstm2: PointLstm,
    pub head: PointDense,
}

fn tile_rows(mask: &Tensor, times: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(mask.len() * times);
    for _ in 0..times {
        data.extend_from_slice(mask.data());
    }
    Tensor::new(vec![times * mask.shape()[0], mask.shape()[1]], data)
}

impl CompBnnModel {
    /// Registers all parameters in `store` and assembles the model.
    pub fn build(
        store: &mut ParamStore,
        dims: ModelDims,
        dropout_p: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        dims.validate()?;
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Domain(format!(
                "dropout probability must lie in [0, 1), got {dropout_p}"
            )));
        }
        let lstm1 = PointLstm::new(
            store,
            "comp.lstm1",
            ParamGroup::Comp,
            dims.features,
            dims.lstm1,
            rng,
        )?;
        let lstm2 = PointLstm::new(
            store,
            "comp.lstm2",
            ParamGroup::Comp,
            dims.lstm1,
            dims.lstm2,
            rng,
        )?;
        let head = PointDense::new(store, "comp.head", ParamGroup::Comp, dims.lstm2, 2, rng)?;
        Ok(CompBnnModel {
            dims,
            dropout_p,
            lstm1,
            lstm2,
            head,
        })
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

    /// Traced forward pass: `[B, window, features]` to mean and log-variance
    /// predictions `[B, horizon]`.
    ///
    /// Draws one dropout mask after each recurrent layer (shared across time
    /// steps) from `dropout_rng`.
    pub fn forward_on_tape(
        &self,
        pass: &mut Pass,
        dropout_rng: &mut impl Rng,
        x: &Tensor,
    ) -> Result<CompForwardVars> {
        self.check_input(x)?;
        let b = x.shape()[0];
        let p = self.dims.horizon;

        let v1 = self.lstm1.bind(pass);
        let v2 = self.lstm2.bind(pass);
        let vh = self.head.bind(pass);
        let mask1 = dropout_mask(&[b, self.dims.lstm1], self.dropout_p, dropout_rng)?;
        let mask2 = dropout_mask(&[b, self.dims.lstm2], self.dropout_p, dropout_rng)?;

        let xs: Vec<Var> = step_slices_3d(x)?
            .into_iter()
            .map(|s| pass.tape.input(s))
            .collect();
        let h1 = lstm_sequence(&mut pass.tape, &v1, self.dims.lstm1, &xs)?;
        let mask1_var = pass.tape.input(mask1);
        let h1_dropped: Vec<Var> = h1
            .into_iter()
            .map(|h| pass.tape.mul(h, mask1_var))
            .collect::<Result<_>>()?;
        let h2 = lstm_sequence(&mut pass.tape, &v2, self.dims.lstm2, &h1_dropped)?;

        let tail = &h2[h2.len() - p..];
        let stacked = pass.tape.stack(tail)?; // [P, B, H2]
        let flat = pass.tape.reshape(stacked, &[p * b, self.dims.lstm2])?;
        let mask2_var = pass.tape.input(tile_rows(&mask2, p)?);
        let dropped = pass.tape.mul(flat, mask2_var)?;
        let out = dense_apply(&mut pass.tape, &vh, dropped)?; // [P*B, 2]

        let y_col = pass.tape.slice_cols(out, 0, 1)?;
        let s_col = pass.tape.slice_cols(out, 1, 1)?;
        let s_clamped = pass.tape.clamp(s_col, -S_CLAMP, S_CLAMP)?;
        let y_grid = pass.tape.reshape(y_col, &[p, b])?;
        let s_grid = pass.tape.reshape(s_clamped, &[p, b])?;
        Ok(CompForwardVars {
            y: pass.tape.permute(y_grid, &[1, 0])?,
            s: pass.tape.permute(s_grid, &[1, 0])?,
        })
    }

    /// Untraced forward pass with the same arithmetic and mask order as
    /// [`Self::forward_on_tape`]; returns `(mean, log_variance)`.
    pub fn forward_values(
        &self,
        store: &ParamStore,
        dropout_rng: &mut impl Rng,
        x: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let b = x.shape()[0];
        let p = self.dims.horizon;

        let v1 = self.lstm1.values(store);
        let v2 = self.lstm2.values(store);
        let vh = self.head.values(store);
        let mask1 = dropout_mask(&[b, self.dims.lstm1], self.dropout_p, dropout_rng)?;
        let mask2 = dropout_mask(&[b, self.dims.lstm2], self.dropout_p, dropout_rng)?;

        let xs = step_slices_3d(x)?;
        // Layer 1 with per-step masking feeding layer 2.
        let mut h1 = Tensor::zeros(&[b, self.dims.lstm1]);
        let mut c1 = Tensor::zeros(&[b, self.dims.lstm1]);
        let mut dropped1 = Vec::with_capacity(xs.len());
        for x_t in &xs {
            let (nh, nc) = lstm_step_values(&v1, self.dims.lstm1, x_t, &h1, &c1)?;
            h1 = nh;
            c1 = nc;
            dropped1.push(h1.mul(&mask1)?);
        }
        let h2 = lstm_sequence_values(&v2, self.dims.lstm2, &dropped1)?;

        let stacked = stack(&h2[h2.len() - p..])?;
        let flat = stacked.reshape(&[p * b, self.dims.lstm2])?;
        let dropped = flat.mul(&tile_rows(&mask2, p)?)?;
        let out = dense_apply_values(&vh, &dropped)?; // [P*B, 2]

        let data = out.data();
        let mut y = vec![0.0; p * b];
        let mut s = vec![0.0; p * b];
        for r in 0..p * b {
            y[r] = data[2 * r];
            s[r] = data[2 * r + 1].clamp(-S_CLAMP, S_CLAMP);
        }
        let y = Tensor::new(vec![p, b], y)?.permute(&[1, 0])?;
        let s = Tensor::new(vec![p, b], s)?.permute(&[1, 0])?;
        Ok((y, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small_dims() -> ModelDims {
        ModelDims {
            features: 2,
            lstm1: 3,
            lstm2: 4,
            graph1: 4,
            graph2: 4,
            window: 6,
            horizon: 2,
        }
    }

    fn build_model(p: f64) -> (ParamStore, CompBnnModel) {
        let mut store = ParamStore::new();
        let mut rng = stream(71, &["comp-init"]);
        let model = CompBnnModel::build(&mut store, small_dims(), p, &mut rng).unwrap();
        (store, model)
    }

    fn random_input(b: usize, dims: &ModelDims) -> Tensor {
        use crate::rng::{GaussianNoise, NoiseSource};
        let mut noise = GaussianNoise::new(stream(72, &["x"]));
        noise.standard_normal(&[b, dims.window, dims.features])
    }

    #[test]
    fn forward_shapes_and_clamp() {
        let (mut store, model) = build_model(0.1);
        // Blow up the head bias so the raw log variance exceeds the clamp.
        let b_id = model.head.b;
        store
            .set(b_id, Tensor::from_vec(vec![0.0, 100.0]))
            .unwrap();
        let x = random_input(3, &model.dims);
        let mut rng = stream(1, &["drop"]);
        let (y, s) = model.forward_values(&store, &mut rng, &x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(s.shape(), &[3, 2]);
        assert!(s.data().iter().all(|&v| v <= S_CLAMP && v >= -S_CLAMP));
        assert!(s.data().iter().any(|&v| v == S_CLAMP));
    }

    #[test]
    fn traced_and_untraced_forwards_agree_with_dropout() {
        let (store, model) = build_model(0.5);
        let x = random_input(4, &model.dims);
        let mut pass = Pass::new(&store, |_| true);
        let mut rng_a = stream(33, &["mask"]);
        let out = model.forward_on_tape(&mut pass, &mut rng_a, &x).unwrap();
        let mut rng_b = stream(33, &["mask"]);
        let (y, s) = model.forward_values(&store, &mut rng_b, &x).unwrap();
        assert_eq!(pass.tape.value(out.y).data(), y.data());
        assert_eq!(pass.tape.value(out.s).data(), s.data());
    }

    #[test]
    fn different_mask_draws_change_predictions() {
        let (store, model) = build_model(0.5);
        let x = random_input(2, &model.dims);
        let mut rng = stream(5, &["stochastic"]);
        let (y1, _) = model.forward_values(&store, &mut rng, &x).unwrap();
        let (y2, _) = model.forward_values(&store, &mut rng, &x).unwrap();
        assert_ne!(y1.data(), y2.data());
    }

    #[test]
    fn gradients_reach_all_point_parameters() {
        let (store, model) = build_model(0.1);
        let x = random_input(2, &model.dims);
        let mut pass = Pass::new(&store, |_| true);
        let mut rng = stream(6, &["g"]);
        let out = model.forward_on_tape(&mut pass, &mut rng, &x).unwrap();
        let sq_y = pass.tape.square(out.y).unwrap();
        let sq_s = pass.tape.square(out.s).unwrap();
        let both = pass.tape.add(sq_y, sq_s).unwrap();
        let loss = pass.tape.mean(both).unwrap();
        let grads = pass.tape.backward(loss).unwrap();
        let pg = pass.parameter_gradients(&grads);
        assert_eq!(pg.len(), 8);
    }

    #[test]
    fn build_rejects_bad_dropout() {
        let mut store = ParamStore::new();
        let mut rng = stream(7, &["bad"]);
        assert!(CompBnnModel::build(&mut store, small_dims(), 1.0, &mut rng).is_err());
        let mut store2 = ParamStore::new();
        assert!(CompBnnModel::build(&mut store2, small_dims(), -0.1, &mut rng).is_err());
    }
}
