//! Variational weight posteriors, priors, KL divergences, and posterior
//! sharpening.
//!
//! Each Bayesian weight tensor carries a factorized Gaussian posterior
//! `N(mu, sigma^2)` with `sigma = softplus(rho)`, sampled by the
//! reparameterization `w = mu + sigma * eps`, `eps ~ N(0, I)`. The KL term
//! against a Gaussian prior is analytic; against a mixture prior it is
//! estimated by Monte Carlo in log space. Posterior sharpening shifts a drawn
//! weight along the data gradient, `w' = (w - eta * g) + sigma_0 * eps'`, and
//! is regularized by the exact KL between the sharpened and unsharpened
//! Gaussians, `sum((eta * g)^2) / (2 sigma_0^2)`.

use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{softplus, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `ln(2*pi) / 2`, the normalization constant of the Gaussian log-density.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Initial value of `rho`; gives `sigma = softplus(-1.75) ≈ 0.160`. Layers
/// the optimizer visits often tighten well below this; rarely updated
/// weights keep a posterior width of this order, so the starting point sets
/// the scale of the predictive ensemble's spread.
pub const RHO_INIT: f64 = -1.75;

/// Initial per-weight sharpening step size.
pub const ETA_INIT: f64 = 0.01;

/// Weight prior shared by every Bayesian layer of a model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Finite Gaussian mixture; weights must sum to one.
    Mixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Gaussian {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::Gaussian { std, .. } => {
                if !(*std > 0.0) {
                    return Err(Error::Domain(format!("prior std must be positive, got {std}")));
                }
            }
            Prior::Mixture {
                weights,
                means,
                stds,
            } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len()
                {
                    return Err(Error::Domain(format!(
                        "mixture component counts differ: {} weights, {} means, {} stds",
                        weights.len(),
                        means.len(),
                        stds.len()
                    )));
                }
                if weights.iter().any(|w| !(*w > 0.0)) {
                    return Err(Error::Domain("mixture weights must be positive".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain(format!(
                        "mixture weights must sum to 1, got {total}"
                    )));
                }
                if stds.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::Domain("mixture stds must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Log density at a point.
    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            Prior::Gaussian { mean, std } => log_normal_density(x, *mean, *std),
            Prior::Mixture {
                weights,
                means,
                stds,
            } => {
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(means.iter().zip(stds.iter()))
                    .map(|(w, (m, s))| w.ln() + log_normal_density(x, *m, *s))
                    .collect();
                logsumexp(&terms)
            }
        }
    }
}

/// Log density of `N(mean, std^2)` at `x`.
pub fn log_normal_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - HALF_LN_2PI
}

/// Numerically stable `ln(sum(exp(xs)))`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact KL divergence between two univariate Gaussians,
/// `KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))`.
pub fn kl_gaussian_analytic(mu_q: f64, sigma_q: f64, mu_p: f64, sigma_p: f64) -> f64 {
    (sigma_p / sigma_q).ln()
        + (sigma_q * sigma_q + (mu_q - mu_p) * (mu_q - mu_p)) / (2.0 * sigma_p * sigma_p)
        - 0.5
}

/// Monte Carlo KL estimate `E_q[ln q(x) - ln p(x)]` with `m` samples drawn
/// from the posterior.
pub fn kl_monte_carlo(
    mu_q: f64,
    sigma_q: f64,
    prior: &Prior,
    m: usize,
    rng: &mut impl Rng,
) -> f64 {
    let mut acc = 0.0;
    for _ in 0..m {
        let eps: f64 = rng.sample(StandardNormal);
        let x = mu_q + sigma_q * eps;
        acc += log_normal_density(x, mu_q, sigma_q) - prior.log_density(x);
    }
    acc / m as f64
}

/// Handles of one variational weight tensor inside a parameter store.
#[derive(Clone, Copy, Debug)]
pub struct VariationalWeight {
    pub mu: ParamId,
    pub rho: ParamId,
    /// Present when the weight participates in posterior sharpening.
    pub eta: Option<ParamId>,
}

/// Posterior-sharpening settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SharpeningConfig {
    pub enabled: bool,
    /// Standard deviation of the sharpened posterior.
    pub sigma0: f64,
}

impl Default for SharpeningConfig {
    fn default() -> Self {
        SharpeningConfig {
            enabled: true,
            sigma0: 0.02,
        }
    }
}

/// A weight drawn on the tape, with its posterior standard deviation.
pub struct SampledWeight {
    pub w: Var,
    pub sigma: Var,
}

/// Draws `w = mu + softplus(rho) * eps` on the tape.
pub fn sample_weight(tape: &mut Tape, mu: Var, rho: Var, eps: &Tensor) -> Result<SampledWeight> {
    if eps.shape() != tape.value(mu).shape() {
        return Err(Error::Shape(format!(
            "noise shape {:?} does not match weight shape {:?}",
            eps.shape(),
            tape.value(mu).shape()
        )));
    }
    let sigma = tape.softplus(rho)?;
    let eps_v = tape.input(eps.clone());
    let scaled = tape.mul(sigma, eps_v)?;
    let w = tape.add(mu, scaled)?;
    Ok(SampledWeight { w, sigma })
}

/// Untraced counterpart of [`sample_weight`], for frozen forward passes.
pub fn sample_weight_value(mu: &Tensor, rho: &Tensor, eps: &Tensor) -> Result<Tensor> {
    mu.add(&rho.softplus().mul(eps)?)
}

/// Sum over elements of the KL divergence between the posterior
/// `N(mu, softplus(rho)^2)` and the prior, recorded on the tape.
///
/// For a Gaussian prior the divergence is analytic. For a mixture prior it is
/// estimated from the noise draws in `mc_eps` (one tensor per sample, each in
/// the weight's shape); the estimate stays differentiable in `mu` and `rho`.
pub fn kl_sum_on_tape(
    tape: &mut Tape,
    mu: Var,
    rho: Var,
    prior: &Prior,
    mc_eps: Option<&[Tensor]>,
) -> Result<Var> {
    prior.validate()?;
    let sigma = tape.softplus(rho)?;
    match prior {
        Prior::Gaussian { mean, std } => {
            // log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2, summed.
            let log_sigma = tape.log(sigma)?;
            let neg_log_sigma = tape.neg(log_sigma)?;
            let t1 = tape.add_scalar(neg_log_sigma, std.ln())?;
            let sq_sigma = tape.square(sigma)?;
            let centered = tape.add_scalar(mu, -mean)?;
            let sq_mean = tape.square(centered)?;
            let s = tape.add(sq_sigma, sq_mean)?;
            let t2 = tape.scale(s, 1.0 / (2.0 * std * std))?;
            let t12 = tape.add(t1, t2)?;
            let kl_elem = tape.add_scalar(t12, -0.5)?;
            tape.sum(kl_elem)
        }
        Prior::Mixture {
            weights,
            means,
            stds,
        } => {
            let eps_list = mc_eps.ok_or_else(|| {
                Error::Contract(
                    "mixture-prior KL needs Monte Carlo noise draws".into(),
                )
            })?;
            if eps_list.is_empty() {
                return Err(Error::Contract(
                    "mixture-prior KL needs at least one noise draw".into(),
                ));
            }
            let shape = tape.value(mu).shape().to_vec();
            let log_sigma = tape.log(sigma)?;
            let neg_log_sigma = tape.neg(log_sigma)?;
            let mut total: Option<Var> = None;
            for eps in eps_list {
                if eps.shape() != shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "noise shape {:?} does not match weight shape {:?}",
                        eps.shape(),
                        shape
                    )));
                }
                // x = mu + sigma * eps; since (x - mu) / sigma = eps exactly,
                // ln q(x) = -ln sigma - ln(2 pi)/2 - eps^2 / 2 with eps constant.
                let eps_v = tape.input(eps.clone());
                let scaled = tape.mul(sigma, eps_v)?;
                let x = tape.add(mu, scaled)?;
                let q_const = eps.map(|e| -HALF_LN_2PI - 0.5 * e * e);
                let q_const_v = tape.input(q_const);
                let log_q = tape.add(neg_log_sigma, q_const_v)?;

                // ln p(x) = logsumexp over components, stabilized by a shift
                // that is constant with respect to the parameters.
                let mut comp_vars = Vec::with_capacity(weights.len());
                for ((w, m), s) in weights.iter().zip(means).zip(stds) {
                    let centered = tape.add_scalar(x, -m)?;
                    let sq = tape.square(centered)?;
                    let scaled = tape.scale(sq, -1.0 / (2.0 * s * s))?;
                    let c = tape.add_scalar(scaled, w.ln() - s.ln() - HALF_LN_2PI)?;
                    comp_vars.push(c);
                }
                let mut shift_data = vec![f64::NEG_INFINITY; eps.len()];
                for c in &comp_vars {
                    for (sd, &v) in shift_data.iter_mut().zip(tape.value(*c).data()) {
                        *sd = sd.max(v);
                    }
                }
                let shift = Tensor::new(shape.clone(), shift_data)?;
                let shift_v = tape.input(shift);
                let mut acc: Option<Var> = None;
                for c in comp_vars {
                    let d = tape.sub(c, shift_v)?;
                    let e = tape.exp(d)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, e)?,
                        None => e,
                    });
                }
                let log_acc = tape.log(acc.expect("at least one component"))?;
                let log_p = tape.add(shift_v, log_acc)?;

                let diff = tape.sub(log_q, log_p)?;
                let contrib = tape.sum(diff)?;
                total = Some(match total {
                    Some(t) => tape.add(t, contrib)?,
                    None => contrib,
                });
            }
            tape.scale(total.expect("at least one draw"), 1.0 / eps_list.len() as f64)
        }
    }
}

/// Sharpened weight `w' = (w - eta * g) + sigma_0 * eps` as a plain value.
pub fn sharpen_value(
    w: &Tensor,
    eta: &Tensor,
    g: &Tensor,
    sigma0: f64,
    eps: &Tensor,
) -> Result<Tensor> {
    w.sub(&eta.mul(g)?)?.add(&eps.scale(sigma0))
}

/// Sharpening penalty `sum((eta * g)^2) / (2 sigma_0^2)` on the tape; this is
/// the exact KL divergence between `N(w - eta*g, sigma_0^2)` and
/// `N(w, sigma_0^2)`.
pub fn sharpening_loss_on_tape(tape: &mut Tape, eta_g: Var, sigma0: f64) -> Result<Var> {
    if !(sigma0 > 0.0) {
        return Err(Error::Domain(format!(
            "sharpening sigma_0 must be positive, got {sigma0}"
        )));
    }
    let sq = tape.square(eta_g)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 1.0 / (2.0 * sigma0 * sigma0))
}

/// Plain-value counterpart of [`sharpening_loss_on_tape`].
pub fn sharpening_loss_value(eta_g: &Tensor, sigma0: f64) -> f64 {
    eta_g.square().sum() / (2.0 * sigma0 * sigma0)
}

/// Posterior-mean initialization `U(-k, k)` with `k = 1/sqrt(fan_in)`.
pub fn init_mu(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Domain("fan_in must be positive".into()));
    }
    let k = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-k..k)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// The posterior standard deviation implied by [`RHO_INIT`].
pub fn sigma_init() -> f64 {
    softplus(RHO_INIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::check::{central_difference, compare_gradients, FD_STEP, GRAD_RTOL};
    use approx::assert_relative_eq;

    #[test]
    fn analytic_kl_worked_example() {
        // KL(N(1,1) || N(0,1)) = 0.5.
        assert_relative_eq!(kl_gaussian_analytic(1.0, 1.0, 0.0, 1.0), 0.5);
        // Identical distributions diverge by zero.
        assert_relative_eq!(kl_gaussian_analytic(0.3, 0.7, 0.3, 0.7), 0.0);
        // KL is positive off the diagonal.
        assert!(kl_gaussian_analytic(0.0, 2.0, 0.0, 1.0) > 0.0);
    }

    #[test]
    fn monte_carlo_kl_approaches_analytic_value() {
        let mut rng = stream(1, &["kl-mc"]);
        let prior = Prior::Gaussian {
            mean: 0.0,
            std: 1.0,
        };
        let exact = kl_gaussian_analytic(1.0, 0.5, 0.0, 1.0);
        let mc = kl_monte_carlo(1.0, 0.5, &prior, 200_000, &mut rng);
        assert_relative_eq!(mc, exact, max_relative = 0.02);
    }

    #[test]
    fn single_component_mixture_equals_gaussian_prior() {
        let g = Prior::Gaussian {
            mean: 0.5,
            std: 2.0,
        };
        let m = Prior::Mixture {
            weights: vec![1.0],
            means: vec![0.5],
            stds: vec![2.0],
        };
        for x in [-3.0, 0.0, 0.5, 4.0] {
            assert_relative_eq!(g.log_density(x), m.log_density(x), max_relative = 1e-12);
        }
    }

    #[test]
    fn prior_validation_catches_bad_configs() {
        assert!(Prior::Gaussian { mean: 0.0, std: 0.0 }.validate().is_err());
        assert!(Prior::Mixture {
            weights: vec![0.5, 0.4],
            means: vec![0.0, 0.0],
            stds: vec![1.0, 1.0]
        }
        .validate()
        .is_err());
        assert!(Prior::Mixture {
            weights: vec![0.5, 0.5],
            means: vec![0.0],
            stds: vec![1.0, 1.0]
        }
        .validate()
        .is_err());
        assert!(Prior::Mixture {
            weights: vec![0.5, 0.5],
            means: vec![0.0, 1.0],
            stds: vec![1.0, -1.0]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn logsumexp_is_stable_and_correct() {
        assert_relative_eq!(logsumexp(&[0.0, 0.0]), std::f64::consts::LN_2);
        // Would overflow without the shift.
        assert_relative_eq!(logsumexp(&[1000.0, 1000.0]), 1000.0 + std::f64::consts::LN_2);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn sampled_weight_follows_reparameterization() {
        let mut tape = Tape::new();
        let mu = tape.param(Tensor::from_vec(vec![1.0, -1.0]));
        let rho = tape.param(Tensor::from_vec(vec![0.0, 0.0]));
        let eps = Tensor::from_vec(vec![2.0, 0.0]);
        let sw = sample_weight(&mut tape, mu, rho, &eps).unwrap();
        // sigma = softplus(0) = ln 2; w = mu + sigma * eps.
        let ln2 = std::f64::consts::LN_2;
        assert_relative_eq!(tape.value(sw.w).data()[0], 1.0 + 2.0 * ln2, max_relative = 1e-14);
        assert_relative_eq!(tape.value(sw.w).data()[1], -1.0, max_relative = 1e-14);
        assert_relative_eq!(tape.value(sw.sigma).data()[0], ln2, max_relative = 1e-14);
        // Wrong noise shape is rejected.
        assert!(sample_weight(&mut tape, mu, rho, &Tensor::from_vec(vec![1.0])).is_err());
        // Untraced version agrees.
        let plain = sample_weight_value(
            &Tensor::from_vec(vec![1.0, -1.0]),
            &Tensor::from_vec(vec![0.0, 0.0]),
            &eps,
        )
        .unwrap();
        assert_eq!(plain.data(), tape.value(sw.w).data());
    }

    #[test]
    fn gaussian_kl_on_tape_matches_scalar_formula() {
        let mu0 = Tensor::from_vec(vec![0.5, -0.2, 1.5]);
        let rho0 = Tensor::from_vec(vec![-1.0, 0.3, -2.0]);
        let prior = Prior::Gaussian {
            mean: 0.1,
            std: 0.8,
        };
        let mut tape = Tape::new();
        let mu = tape.param(mu0.clone());
        let rho = tape.param(rho0.clone());
        let kl = kl_sum_on_tape(&mut tape, mu, rho, &prior, None).unwrap();
        let expected: f64 = mu0
            .data()
            .iter()
            .zip(rho0.data())
            .map(|(&m, &r)| kl_gaussian_analytic(m, softplus(r), 0.1, 0.8))
            .sum();
        assert_relative_eq!(tape.value(kl).item().unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_kl_gradients_match_finite_difference() {
        let mu0 = Tensor::from_vec(vec![0.4, -0.7]);
        let rho0 = Tensor::from_vec(vec![-0.5, 0.2]);
        let prior = Prior::Gaussian {
            mean: 0.0,
            std: 1.0,
        };
        let f = |inputs: &[Tensor]| -> crate::error::Result<f64> {
            Ok(inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(&m, &r)| kl_gaussian_analytic(m, softplus(r), 0.0, 1.0))
                .sum())
        };
        let inputs = [mu0, rho0];
        let numeric = central_difference(&f, &inputs, FD_STEP).unwrap();
        let mut tape = Tape::new();
        let mu = tape.param(inputs[0].clone());
        let rho = tape.param(inputs[1].clone());
        let kl = kl_sum_on_tape(&mut tape, mu, rho, &prior, None).unwrap();
        let grads = tape.backward(kl).unwrap();
        let analytic = vec![grads.get(&tape, mu).unwrap(), grads.get(&tape, rho).unwrap()];
        assert!(compare_gradients(&analytic, &numeric).unwrap() < GRAD_RTOL);
    }

    #[test]
    fn mixture_kl_on_tape_matches_plain_computation_and_gradients() {
        use crate::rng::{GaussianNoise, NoiseSource};
        let mu0 = Tensor::from_vec(vec![0.3, -0.6]);
        let rho0 = Tensor::from_vec(vec![-0.8, -0.1]);
        let prior = Prior::Mixture {
            weights: vec![0.7, 0.3],
            means: vec![0.0, 0.0],
            stds: vec![1.0, 0.1],
        };
        let mut noise = GaussianNoise::new(stream(3, &["mix-kl"]));
        let eps: Vec<Tensor> = (0..4).map(|_| noise.standard_normal(&[2])).collect();

        // Plain reference with the same draws.
        let plain = {
            let mut acc = 0.0;
            for e in &eps {
                for i in 0..2 {
                    let m = mu0.data()[i];
                    let s = softplus(rho0.data()[i]);
                    let x = m + s * e.data()[i];
                    acc += log_normal_density(x, m, s) - prior.log_density(x);
                }
            }
            acc / eps.len() as f64
        };

        let prior2 = prior.clone();
        let eps2 = eps.clone();
        let f = move |inputs: &[Tensor]| -> crate::error::Result<f64> {
            let mut acc = 0.0;
            for e in &eps2 {
                for i in 0..2 {
                    let m = inputs[0].data()[i];
                    let s = softplus(inputs[1].data()[i]);
                    let x = m + s * e.data()[i];
                    acc += log_normal_density(x, m, s) - prior2.log_density(x);
                }
            }
            Ok(acc / eps2.len() as f64)
        };

        let mut tape = Tape::new();
        let mu = tape.param(mu0.clone());
        let rho = tape.param(rho0.clone());
        let kl = kl_sum_on_tape(&mut tape, mu, rho, &prior, Some(&eps)).unwrap();
        assert_relative_eq!(tape.value(kl).item().unwrap(), plain, max_relative = 1e-10);

        let inputs = [mu0, rho0];
        let numeric = central_difference(&f, &inputs, FD_STEP).unwrap();
        let grads = tape.backward(kl).unwrap();
        let analytic = vec![grads.get(&tape, mu).unwrap(), grads.get(&tape, rho).unwrap()];
        assert!(compare_gradients(&analytic, &numeric).unwrap() < GRAD_RTOL);
    }

    #[test]
    fn mixture_kl_requires_noise() {
        let prior = Prior::Mixture {
            weights: vec![1.0],
            means: vec![0.0],
            stds: vec![1.0],
        };
        let mut tape = Tape::new();
        let mu = tape.param(Tensor::from_vec(vec![0.0]));
        let rho = tape.param(Tensor::from_vec(vec![-1.0]));
        assert!(kl_sum_on_tape(&mut tape, mu, rho, &prior, None).is_err());
        assert!(kl_sum_on_tape(&mut tape, mu, rho, &prior, Some(&[])).is_err());
    }

    #[test]
    fn sharpen_worked_example() {
        // w = 1, eta = 0.1, g = 2, eps = 0 -> w' = 0.8.
        let w = Tensor::from_vec(vec![1.0]);
        let eta = Tensor::from_vec(vec![0.1]);
        let g = Tensor::from_vec(vec![2.0]);
        let eps = Tensor::from_vec(vec![0.0]);
        let out = sharpen_value(&w, &eta, &g, 0.5, &eps).unwrap();
        assert_relative_eq!(out.data()[0], 0.8, max_relative = 1e-14);
        // Nonzero noise shifts by sigma_0 * eps.
        let eps2 = Tensor::from_vec(vec![2.0]);
        let out2 = sharpen_value(&w, &eta, &g, 0.5, &eps2).unwrap();
        assert_relative_eq!(out2.data()[0], 1.8, max_relative = 1e-14);
    }

    #[test]
    fn sharpening_loss_worked_example() {
        // eta*g = 0.2, sigma_0 = 0.1 -> 0.04 / 0.02 = 2.
        let eta_g = Tensor::from_vec(vec![0.2]);
        assert_relative_eq!(sharpening_loss_value(&eta_g, 0.1), 2.0, max_relative = 1e-14);
        let mut tape = Tape::new();
        let v = tape.param(eta_g);
        let loss = sharpening_loss_on_tape(&mut tape, v, 0.1).unwrap();
        assert_relative_eq!(tape.value(loss).item().unwrap(), 2.0, max_relative = 1e-14);
        // Gradient: d/d(eta_g) [ (eta_g)^2 / (2 s^2) ] = eta_g / s^2 = 20.
        let grads = tape.backward(loss).unwrap();
        assert_relative_eq!(grads.get(&tape, v).unwrap().data()[0], 20.0, max_relative = 1e-12);
        assert!(sharpening_loss_on_tape(&mut tape, v, 0.0).is_err());
    }

    #[test]
    fn init_mu_respects_fan_in_bound() {
        let mut rng = stream(5, &["init"]);
        let t = init_mu(&[100, 4], 16, &mut rng).unwrap();
        let k = 0.25;
        assert!(t.max_value() < k && t.min_value() > -k);
        assert!(t.max_value() > 0.1 && t.min_value() < -0.1);
        assert!(init_mu(&[2], 0, &mut rng).is_err());
    }

    #[test]
    fn sigma_init_matches_softplus_of_rho_init() {
        assert_relative_eq!(sigma_init(), softplus(-1.75));
        assert!(sigma_init() > 0.16 && sigma_init() < 0.161);
    }
}
