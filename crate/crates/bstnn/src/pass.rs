//! One forward-backward pass: parameter binding and weight-sampling
//! strategies.
//!
//! A [`Pass`] joins a [`ParamStore`] to a fresh [`Tape`]. Parameters are bound
//! lazily on first use — as differentiable tape leaves when the pass's
//! trainable predicate selects them, as constants otherwise — so frozen
//! subgraphs never pay backward costs.
//!
//! Variational weights reach the tape through a [`WeightBinder`]:
//!
//! * [`StandardBinder`] draws `w = mu + softplus(rho) * eps` on the tape
//!   (exactly one noise draw per weight tensor per pass);
//! * [`LeafBinder`] plants the drawn `w` itself as a trainable leaf, which
//!   makes the backward pass yield the data gradient `g = d loss / d w`
//!   needed by posterior sharpening;
//! * [`SharpenBinder`] replays the same draws, shifts each weight along its
//!   recorded data gradient, `w' = (w - eta * g) + sigma_0 * eps'`, and
//!   collects the `eta * g` terms that form the sharpening penalty.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamMeta, ParamStore};
use crate::rng::NoiseSource;
use crate::tensor::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;
use crate::variational::{sample_weight, sample_weight_value, VariationalWeight};

/// A parameter store bound to one recording tape.
pub struct Pass<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    trainable: Vec<bool>,
    bound: Vec<Option<Var>>,
}

impl<'s> Pass<'s> {
    /// Starts a pass in which parameters selected by `trainable` become
    /// gradient targets.
    pub fn new(store: &'s ParamStore, trainable: impl Fn(&ParamMeta) -> bool) -> Self {
        let mask: Vec<bool> = store.ids().map(|id| trainable(store.meta(id))).collect();
        Pass {
            tape: Tape::new(),
            store,
            trainable: mask,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.index()]
    }

    /// Tape var of a parameter, binding it on first use.
    pub fn var(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable[id.index()] {
            self.tape.param(value)
        } else {
            self.tape.input(value)
        };
        self.bound[id.index()] = Some(v);
        v
    }

    /// Gradients of all bound trainable parameters, in id order.
    pub fn parameter_gradients(&self, grads: &Grads) -> Vec<(ParamId, Tensor)> {
        let mut out = Vec::new();
        for id in self.store.ids() {
            if !self.trainable[id.index()] {
                continue;
            }
            if let Some(v) = self.bound[id.index()] {
                if let Some(g) = grads.get(&self.tape, v) {
                    out.push((id, g));
                }
            }
        }
        out
    }
}

/// Strategy for materializing a variational weight on the tape.
pub trait WeightBinder {
    fn bind(&mut self, pass: &mut Pass, vw: &VariationalWeight) -> Result<Var>;
}

/// Reparameterized sampling through `mu` and `rho`.
pub struct StandardBinder<'n> {
    pub noise: &'n mut dyn NoiseSource,
}

impl WeightBinder for StandardBinder<'_> {
    fn bind(&mut self, pass: &mut Pass, vw: &VariationalWeight) -> Result<Var> {
        let mu = pass.var(vw.mu);
        let rho = pass.var(vw.rho);
        let eps = self.noise.standard_normal(pass.tape.value(mu).shape());
        Ok(sample_weight(&mut pass.tape, mu, rho, &eps)?.w)
    }
}

/// One weight drawn by a [`LeafBinder`].
pub struct LeafRecord {
    pub vw: VariationalWeight,
    pub var: Var,
    pub eps: Tensor,
}

/// Plants sampled weights as tape leaves to expose their data gradients.
pub struct LeafBinder<'n> {
    pub noise: &'n mut dyn NoiseSource,
    pub records: Vec<LeafRecord>,
}

impl<'n> LeafBinder<'n> {
    pub fn new(noise: &'n mut dyn NoiseSource) -> Self {
        LeafBinder {
            noise,
            records: Vec::new(),
        }
    }

    /// Data gradients of the drawn weights, in bind order.
    pub fn weight_gradients(&self, tape: &Tape, grads: &Grads) -> Result<Vec<Tensor>> {
        self.records
            .iter()
            .map(|r| {
                grads.get(tape, r.var).ok_or_else(|| {
                    Error::Contract("leaf-bound weight was not differentiable".into())
                })
            })
            .collect()
    }
}

impl WeightBinder for LeafBinder<'_> {
    fn bind(&mut self, pass: &mut Pass, vw: &VariationalWeight) -> Result<Var> {
        let mu = pass.store().get(vw.mu);
        let rho = pass.store().get(vw.rho);
        let eps = self.noise.standard_normal(mu.shape());
        let w = sample_weight_value(mu, rho, &eps)?;
        let var = pass.tape.param(w);
        self.records.push(LeafRecord {
            vw: *vw,
            var,
            eps,
        });
        Ok(var)
    }
}

/// Replays a [`LeafBinder`] pass with sharpened weights.
pub struct SharpenBinder<'a, 'n> {
    records: &'a [LeafRecord],
    data_grads: &'a [Tensor],
    next: usize,
    sigma0: f64,
    noise: &'n mut dyn NoiseSource,
    /// `eta * g` per weight, in bind order; feeds the sharpening penalty.
    pub penalty_terms: Vec<Var>,
}

impl<'a, 'n> SharpenBinder<'a, 'n> {
    pub fn new(
        records: &'a [LeafRecord],
        data_grads: &'a [Tensor],
        sigma0: f64,
        noise: &'n mut dyn NoiseSource,
    ) -> Result<Self> {
        if records.len() != data_grads.len() {
            return Err(Error::Contract(format!(
                "{} recorded weights but {} data gradients",
                records.len(),
                data_grads.len()
            )));
        }
        if !(sigma0 > 0.0) {
            return Err(Error::Domain(format!(
                "sharpening sigma_0 must be positive, got {sigma0}"
            )));
        }
        Ok(SharpenBinder {
            records,
            data_grads,
            next: 0,
            sigma0,
            noise,
            penalty_terms: Vec::new(),
        })
    }
}

impl WeightBinder for SharpenBinder<'_, '_> {
    fn bind(&mut self, pass: &mut Pass, vw: &VariationalWeight) -> Result<Var> {
        let record = self.records.get(self.next).ok_or_else(|| {
            Error::Contract("sharpened pass bound more weights than were recorded".into())
        })?;
        if record.vw.mu != vw.mu || record.vw.rho != vw.rho {
            return Err(Error::Contract(
                "sharpened pass bound weights in a different order than the recording pass".into(),
            ));
        }
        let eta_id = vw.eta.ok_or_else(|| {
            Error::Contract(format!(
                "weight '{}' has no sharpening step size",
                pass.store().meta(vw.mu).name
            ))
        })?;
        let g = self.data_grads[self.next].clone();
        self.next += 1;

        // Same eps as the recording pass, but now flowing through mu and rho.
        let mu = pass.var(vw.mu);
        let rho = pass.var(vw.rho);
        let w = sample_weight(&mut pass.tape, mu, rho, &record.eps)?.w;
        let eta = pass.var(eta_id);
        let g_var = pass.tape.input(g);
        let eta_g = pass.tape.mul(eta, g_var)?;
        let shifted = pass.tape.sub(w, eta_g)?;
        let eps2 = self.noise.standard_normal(pass.tape.value(w).shape());
        let noise_term = pass.tape.input(eps2.scale(self.sigma0));
        let sharpened = pass.tape.add(shifted, noise_term)?;
        self.penalty_terms.push(eta_g);
        Ok(sharpened)
    }
}

/// Untraced weight draw for frozen forward passes; consumes noise in the same
/// order as the tape binders.
pub fn sample_frozen(
    store: &ParamStore,
    vw: &VariationalWeight,
    noise: &mut dyn NoiseSource,
) -> Result<Tensor> {
    let mu = store.get(vw.mu);
    let rho = store.get(vw.rho);
    let eps = noise.standard_normal(mu.shape());
    sample_weight_value(mu, rho, &eps)
}
