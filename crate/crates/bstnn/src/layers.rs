//! Neural layers: LSTM cells, dense readouts, graph convolutions, dropout.
//!
//! Layer structs own parameter handles, not values; the same step/sequence
//! code runs on tape [`Var`]s regardless of how the weights were bound
//! (sampled, sharpened, or point estimates), and mirrored `*_values`
//! functions run the identical arithmetic on plain tensors for frozen or
//! prediction-time passes.
//!
//! LSTM gate blocks are packed along the last axis in the fixed order
//! `[input, forget, cell, output]`, so a weight has shape `[in, 4H]` and the
//! forget-gate bias occupies `[H, 2H)`.

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamRole, ParamStore};
use crate::pass::{Pass, WeightBinder};
use crate::rng::NoiseSource;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::variational::{init_mu, sample_weight_value, VariationalWeight, ETA_INIT, RHO_INIT};
use rand::Rng;

/// Initial forget-gate bias mean; biases the cell toward remembering early in
/// training.
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Bound LSTM weights on a tape.
#[derive(Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Concrete LSTM weight values for untraced passes.
pub struct LstmValues {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// One LSTM step on the tape: returns `(h, c)`.
pub fn lstm_step(
    tape: &mut Tape,
    vars: &LstmVars,
    hidden: usize,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let gates = tape.affine2(x, vars.w, h_prev, vars.u, vars.b)?;
    let i_pre = tape.slice_cols(gates, 0, hidden)?;
    let f_pre = tape.slice_cols(gates, hidden, hidden)?;
    let g_pre = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o_pre = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs an LSTM over a step-major input sequence; returns the hidden state of
/// every step. State starts at zero.
pub fn lstm_sequence(
    tape: &mut Tape,
    vars: &LstmVars,
    hidden: usize,
    xs: &[Var],
) -> Result<Vec<Var>> {
    let rows = match xs.first() {
        Some(x) => tape.value(*x).shape()[0],
        None => return Err(Error::Contract("empty input sequence".into())),
    };
    let mut h = tape.input(Tensor::zeros(&[rows, hidden]));
    let mut c = tape.input(Tensor::zeros(&[rows, hidden]));
    let mut hs = Vec::with_capacity(xs.len());
    for &x in xs {
        let (nh, nc) = lstm_step(tape, vars, hidden, x, h, c)?;
        h = nh;
        c = nc;
        hs.push(h);
    }
    Ok(hs)
}

/// Untraced counterpart of [`lstm_step`].
pub fn lstm_step_values(
    values: &LstmValues,
    hidden: usize,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let gates = x
        .matmul(&values.w)?
        .add(&h_prev.matmul(&values.u)?)?
        .add(&values.b)?;
    let rows = gates.shape()[0];
    let cols = gates.shape()[1];
    let gd = gates.data();
    let mut h = vec![0.0; rows * hidden];
    let mut c = vec![0.0; rows * hidden];
    let cp = c_prev.data();
    for r in 0..rows {
        for k in 0..hidden {
            let i = crate::tensor::sigmoid(gd[r * cols + k]);
            let f = crate::tensor::sigmoid(gd[r * cols + hidden + k]);
            let g = gd[r * cols + 2 * hidden + k].tanh();
            let o = crate::tensor::sigmoid(gd[r * cols + 3 * hidden + k]);
            let cn = f * cp[r * hidden + k] + i * g;
            c[r * hidden + k] = cn;
            h[r * hidden + k] = o * cn.tanh();
        }
    }
    Ok((
        Tensor::new(vec![rows, hidden], h)?,
        Tensor::new(vec![rows, hidden], c)?,
    ))
}

/// Untraced counterpart of [`lstm_sequence`].
pub fn lstm_sequence_values(
    values: &LstmValues,
    hidden: usize,
    xs: &[Tensor],
) -> Result<Vec<Tensor>> {
    let rows = match xs.first() {
        Some(x) => x.shape()[0],
        None => return Err(Error::Contract("empty input sequence".into())),
    };
    let mut h = Tensor::zeros(&[rows, hidden]);
    let mut c = Tensor::zeros(&[rows, hidden]);
    let mut hs = Vec::with_capacity(xs.len());
    for x in xs {
        let (nh, nc) = lstm_step_values(values, hidden, x, &h, &c)?;
        h = nh;
        c = nc;
        hs.push(h.clone());
    }
    Ok(hs)
}

fn add_variational(
    store: &mut ParamStore,
    name: &str,
    group: ParamGroup,
    mu0: Tensor,
    sharpened: bool,
) -> Result<VariationalWeight> {
    let shape = mu0.shape().to_vec();
    let mu = store.add(format!("{name}.mu"), group, ParamRole::Mu, mu0)?;
    let rho = store.add(
        format!("{name}.rho"),
        group,
        ParamRole::Rho,
        Tensor::full(&shape, RHO_INIT),
    )?;
    let eta = if sharpened {
        Some(store.add(
            format!("{name}.eta"),
            group,
            ParamRole::Eta,
            Tensor::full(&shape, ETA_INIT),
        )?)
    } else {
        None
    };
    Ok(VariationalWeight { mu, rho, eta })
}

fn lstm_bias_mu(hidden: usize) -> Tensor {
    let mut b = vec![0.0; 4 * hidden];
    for v in b.iter_mut().skip(hidden).take(hidden) {
        *v = FORGET_BIAS_INIT;
    }
    Tensor::new(vec![4 * hidden], b).expect("bias buffer")
}

/// LSTM cell with a variational posterior over every weight.
pub struct BayesianLstm {
    pub input: usize,
    pub hidden: usize,
    pub w: VariationalWeight,
    pub u: VariationalWeight,
    pub b: VariationalWeight,
}

impl BayesianLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        sharpened: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = add_variational(
            store,
            &format!("{prefix}.w"),
            group,
            init_mu(&[input, 4 * hidden], input, rng)?,
            sharpened,
        )?;
        let u = add_variational(
            store,
            &format!("{prefix}.u"),
            group,
            init_mu(&[hidden, 4 * hidden], hidden, rng)?,
            sharpened,
        )?;
        let b = add_variational(store, &format!("{prefix}.b"), group, lstm_bias_mu(hidden), sharpened)?;
        Ok(BayesianLstm {
            input,
            hidden,
            w,
            u,
            b,
        })
    }

    /// The layer's variational weights in binding order.
    pub fn weights(&self) -> [&VariationalWeight; 3] {
        [&self.w, &self.u, &self.b]
    }

    /// Draws this layer's weights onto the tape.
    pub fn bind(&self, pass: &mut Pass, binder: &mut dyn WeightBinder) -> Result<LstmVars> {
        Ok(LstmVars {
            w: binder.bind(pass, &self.w)?,
            u: binder.bind(pass, &self.u)?,
            b: binder.bind(pass, &self.b)?,
        })
    }

    /// Draws this layer's weights as plain values, consuming noise in bind
    /// order.
    pub fn sample_values(
        &self,
        store: &ParamStore,
        noise: &mut dyn NoiseSource,
    ) -> Result<LstmValues> {
        let draw = |vw: &VariationalWeight, noise: &mut dyn NoiseSource| -> Result<Tensor> {
            let mu = store.get(vw.mu);
            let eps = noise.standard_normal(mu.shape());
            sample_weight_value(mu, store.get(vw.rho), &eps)
        };
        Ok(LstmValues {
            w: draw(&self.w, noise)?,
            u: draw(&self.u, noise)?,
            b: draw(&self.b, noise)?,
        })
    }
}

/// Dense weights bound on a tape.
#[derive(Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

/// Concrete dense weight values.
pub struct DenseValues {
    pub w: Tensor,
    pub b: Tensor,
}

/// Applies a bound dense layer to a `[rows, input]` var.
pub fn dense_apply(tape: &mut Tape, vars: &DenseVars, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, vars.w)?;
    tape.add(xw, vars.b)
}

/// Untraced counterpart of [`dense_apply`].
pub fn dense_apply_values(values: &DenseValues, x: &Tensor) -> Result<Tensor> {
    x.matmul(&values.w)?.add(&values.b)
}

/// Dense layer with a variational posterior.
pub struct BayesianDense {
    pub input: usize,
    pub output: usize,
    pub w: VariationalWeight,
    pub b: VariationalWeight,
}

impl BayesianDense {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        sharpened: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = add_variational(
            store,
            &format!("{prefix}.w"),
            group,
            init_mu(&[input, output], input, rng)?,
            sharpened,
        )?;
        let b = add_variational(
            store,
            &format!("{prefix}.b"),
            group,
            Tensor::zeros(&[output]),
            sharpened,
        )?;
        Ok(BayesianDense {
            input,
            output,
            w,
            b,
        })
    }

    pub fn weights(&self) -> [&VariationalWeight; 2] {
        [&self.w, &self.b]
    }

    pub fn bind(&self, pass: &mut Pass, binder: &mut dyn WeightBinder) -> Result<DenseVars> {
        Ok(DenseVars {
            w: binder.bind(pass, &self.w)?,
            b: binder.bind(pass, &self.b)?,
        })
    }

    pub fn sample_values(
        &self,
        store: &ParamStore,
        noise: &mut dyn NoiseSource,
    ) -> Result<DenseValues> {
        let mu_w = store.get(self.w.mu);
        let eps_w = noise.standard_normal(mu_w.shape());
        let w = sample_weight_value(mu_w, store.get(self.w.rho), &eps_w)?;
        let mu_b = store.get(self.b.mu);
        let eps_b = noise.standard_normal(mu_b.shape());
        let b = sample_weight_value(mu_b, store.get(self.b.rho), &eps_b)?;
        Ok(DenseValues { w, b })
    }
}

/// Graph convolution layer `S · H · Theta` with a variational posterior over
/// `Theta`; bias-free, matching its spectral formulation.
pub struct BayesianGraphConv {
    pub input: usize,
    pub output: usize,
    pub theta: VariationalWeight,
}

impl BayesianGraphConv {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        sharpened: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let theta = add_variational(
            store,
            &format!("{prefix}.theta"),
            group,
            init_mu(&[input, output], input, rng)?,
            sharpened,
        )?;
        Ok(BayesianGraphConv {
            input,
            output,
            theta,
        })
    }

    pub fn bind(&self, pass: &mut Pass, binder: &mut dyn WeightBinder) -> Result<Var> {
        binder.bind(pass, &self.theta)
    }

    /// Applies the convolution to `[..., N, input]` features.
    pub fn apply(&self, tape: &mut Tape, propagation: &Tensor, theta: Var, h: Var) -> Result<Var> {
        tape.graph_conv(propagation, h, theta)
    }

    pub fn sample_values(
        &self,
        store: &ParamStore,
        noise: &mut dyn NoiseSource,
    ) -> Result<Tensor> {
        let mu = store.get(self.theta.mu);
        let eps = noise.standard_normal(mu.shape());
        sample_weight_value(mu, store.get(self.theta.rho), &eps)
    }
}

/// LSTM cell with ordinary point-estimate weights.
pub struct PointLstm {
    pub input: usize,
    pub hidden: usize,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

impl PointLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(
            format!("{prefix}.w"),
            group,
            ParamRole::Point,
            init_mu(&[input, 4 * hidden], input, rng)?,
        )?;
        let u = store.add(
            format!("{prefix}.u"),
            group,
            ParamRole::Point,
            init_mu(&[hidden, 4 * hidden], hidden, rng)?,
        )?;
        let b = store.add(
            format!("{prefix}.b"),
            group,
            ParamRole::Point,
            lstm_bias_mu(hidden),
        )?;
        Ok(PointLstm {
            input,
            hidden,
            w,
            u,
            b,
        })
    }

    pub fn bind(&self, pass: &mut Pass) -> LstmVars {
        LstmVars {
            w: pass.var(self.w),
            u: pass.var(self.u),
            b: pass.var(self.b),
        }
    }

    pub fn values(&self, store: &ParamStore) -> LstmValues {
        LstmValues {
            w: store.get(self.w).clone(),
            u: store.get(self.u).clone(),
            b: store.get(self.b).clone(),
        }
    }
}

/// Dense layer with ordinary point-estimate weights.
pub struct PointDense {
    pub input: usize,
    pub output: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl PointDense {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(
            format!("{prefix}.w"),
            group,
            ParamRole::Point,
            init_mu(&[input, output], input, rng)?,
        )?;
        let b = store.add(
            format!("{prefix}.b"),
            group,
            ParamRole::Point,
            Tensor::zeros(&[output]),
        )?;
        Ok(PointDense {
            input,
            output,
            w,
            b,
        })
    }

    pub fn bind(&self, pass: &mut Pass) -> DenseVars {
        DenseVars {
            w: pass.var(self.w),
            b: pass.var(self.b),
        }
    }

    pub fn values(&self, store: &ParamStore) -> DenseValues {
        DenseValues {
            w: store.get(self.w).clone(),
            b: store.get(self.b).clone(),
        }
    }
}

/// Inverted-dropout mask: zeros with probability `p`, `1/(1-p)` otherwise, so
/// the masked signal keeps its expectation.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < p {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}
