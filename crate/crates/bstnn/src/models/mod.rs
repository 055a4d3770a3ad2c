//! Model assemblies: the temporal network, the spatio-temporal network, and
//! the dropout-ensemble comparison model.

mod bstnn;
mod btnn;
mod comp;

pub use bstnn::BstnnModel;
pub use btnn::BtnnModel;
pub use comp::{CompBnnModel, CompForwardVars, DROPOUT_P, S_CLAMP};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Layer widths and window geometry shared by all models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Input channels per node and time step.
    pub features: usize,
    /// Hidden units of the first recurrent layer.
    pub lstm1: usize,
    /// Hidden units of the second recurrent layer.
    pub lstm2: usize,
    /// Output features of the first graph convolution.
    pub graph1: usize,
    /// Output features of the second graph convolution.
    pub graph2: usize,
    /// Input window length in time steps.
    pub window: usize,
    /// Number of trailing window steps that are predicted.
    pub horizon: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            features: 4,
            lstm1: 16,
            lstm2: 32,
            graph1: 64,
            graph2: 64,
            window: 36,
            horizon: 8,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.features == 0
            || self.lstm1 == 0
            || self.lstm2 == 0
            || self.graph1 == 0
            || self.graph2 == 0
        {
            return Err(Error::Domain("model widths must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Domain("window length must be positive".into()));
        }
        if self.horizon == 0 || self.horizon > self.window {
            return Err(Error::Domain(format!(
                "horizon must lie in [1, window]; got horizon {} with window {}",
                self.horizon, self.window
            )));
        }
        Ok(())
    }
}

/// Splits `[B, T, D]` into `T` step tensors of shape `[B, D]`.
pub(crate) fn step_slices_3d(x: &Tensor) -> Result<Vec<Tensor>> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!(
            "expected a [batch, time, features] tensor, got {:?}",
            x.shape()
        )));
    }
    let step_major = x.permute(&[1, 0, 2])?;
    (0..x.shape()[1]).map(|t| step_major.index_axis0(t)).collect()
}

/// Splits `[B, T, N, D]` into `T` step tensors of shape `[B*N, D]`.
pub(crate) fn step_slices_4d(x: &Tensor) -> Result<Vec<Tensor>> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "expected a [batch, time, nodes, features] tensor, got {:?}",
            x.shape()
        )));
    }
    let (b, n, d) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let step_major = x.permute(&[1, 0, 2, 3])?;
    (0..x.shape()[1])
        .map(|t| step_major.index_axis0(t)?.reshape(&[b * n, d]))
        .collect()
}

/// Predictions of an ensemble of stochastic forward passes.
pub struct PredictiveEnsemble {
    /// One prediction tensor per member, all the same shape.
    pub samples: Vec<Tensor>,
    /// Predicted log variances per member, for models with an aleatoric head.
    pub log_vars: Option<Vec<Tensor>>,
}

impl PredictiveEnsemble {
    pub fn ensemble_size(&self) -> usize {
        self.samples.len()
    }

    /// Elementwise mean over members.
    pub fn mean(&self) -> Result<Tensor> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Contract("empty ensemble".into()))?;
        let mut acc = Tensor::zeros(first.shape());
        for s in &self.samples {
            acc = acc.add(s)?;
        }
        Ok(acc.scale(1.0 / self.samples.len() as f64))
    }

    /// Elementwise population variance over members (the epistemic part of
    /// the predictive variance).
    pub fn epistemic_variance(&self) -> Result<Tensor> {
        let mean = self.mean()?;
        let mut acc = Tensor::zeros(mean.shape());
        for s in &self.samples {
            acc = acc.add(&s.sub(&mean)?.square())?;
        }
        Ok(acc.scale(1.0 / self.samples.len() as f64))
    }

    /// Elementwise median over members (the point prediction), invariant to
    /// the order of the samples; even ensembles use the mean of the two
    /// middle values.
    pub fn median(&self) -> Result<Tensor> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Contract("empty ensemble".into()))?;
        let e = self.samples.len();
        let mut out = vec![0.0; first.len()];
        let mut column = vec![0.0; e];
        for (i, slot) in out.iter_mut().enumerate() {
            for (k, s) in self.samples.iter().enumerate() {
                column[k] = s.data()[i];
            }
            column.sort_by(|a, b| a.partial_cmp(b).expect("ensemble values must be ordered"));
            *slot = if e % 2 == 1 {
                column[e / 2]
            } else {
                0.5 * (column[e / 2 - 1] + column[e / 2])
            };
        }
        Tensor::new(first.shape().to_vec(), out)
    }

    /// Elementwise total predictive variance for an ensemble with an
    /// aleatoric head: the epistemic population variance plus the mean
    /// member variance `exp(s)`. With `squared_aleatoric` the second term
    /// becomes the mean of `exp(s)^2` instead (the printed form of the
    /// original presentation; note its units).
    pub fn total_variance(&self, squared_aleatoric: bool) -> Result<Tensor> {
        let log_vars = self.log_vars.as_ref().ok_or_else(|| {
            Error::Contract("total variance needs per-member log variances".into())
        })?;
        if log_vars.len() != self.samples.len() {
            return Err(Error::Contract(format!(
                "{} log-variance tensors for {} samples",
                log_vars.len(),
                self.samples.len()
            )));
        }
        if self.samples.len() < 2 {
            return Err(Error::Contract(
                "total variance needs an ensemble of at least 2 members".into(),
            ));
        }
        let mut total = self.epistemic_variance()?;
        for s in log_vars {
            let v = s.map(|x| if squared_aleatoric { (2.0 * x).exp() } else { x.exp() });
            total = total.add(&v.scale(1.0 / log_vars.len() as f64))?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dims_defaults_and_validation() {
        let dims = ModelDims::default();
        assert_eq!(dims.lstm1, 16);
        assert_eq!(dims.lstm2, 32);
        assert_eq!(dims.window, 36);
        assert_eq!(dims.horizon, 8);
        dims.validate().unwrap();
        let mut bad = dims.clone();
        bad.horizon = 0;
        assert!(bad.validate().is_err());
        bad.horizon = 40;
        assert!(bad.validate().is_err());
        let mut bad2 = dims;
        bad2.lstm1 = 0;
        assert!(bad2.validate().is_err());
    }

    #[test]
    fn step_slices_reorder_correctly() {
        // x[b, t, d] = 100 b + 10 t + d.
        let mut data = Vec::new();
        for b in 0..2 {
            for t in 0..3 {
                for d in 0..2 {
                    data.push((100 * b + 10 * t + d) as f64);
                }
            }
        }
        let x = Tensor::new(vec![2, 3, 2], data).unwrap();
        let slices = step_slices_3d(&x).unwrap();
        assert_eq!(slices.len(), 3);
        assert_eq!(slices[1].shape(), &[2, 2]);
        assert_eq!(slices[1].get(&[0, 1]).unwrap(), 11.0);
        assert_eq!(slices[2].get(&[1, 0]).unwrap(), 120.0);
        assert!(step_slices_3d(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn step_slices_4d_flatten_batch_and_nodes() {
        // x[b, t, n, d] encoded as 1000 b + 100 t + 10 n + d.
        let mut data = Vec::new();
        for b in 0..2 {
            for t in 0..2 {
                for n in 0..3 {
                    for d in 0..2 {
                        data.push((1000 * b + 100 * t + 10 * n + d) as f64);
                    }
                }
            }
        }
        let x = Tensor::new(vec![2, 2, 3, 2], data).unwrap();
        let slices = step_slices_4d(&x).unwrap();
        assert_eq!(slices.len(), 2);
        assert_eq!(slices[0].shape(), &[6, 2]);
        // Row (b, n) = (1, 2) is row index 1*3 + 2 = 5.
        assert_eq!(slices[1].get(&[5, 1]).unwrap(), 1121.0);
        assert!(step_slices_4d(&Tensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn ensemble_epistemic_variance_worked_example() {
        // Members {1, 3}: mean 2, population variance 1.
        let ens = PredictiveEnsemble {
            samples: vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![3.0])],
            log_vars: None,
        };
        assert_relative_eq!(ens.mean().unwrap().data()[0], 2.0);
        assert_relative_eq!(ens.epistemic_variance().unwrap().data()[0], 1.0);
        assert_eq!(ens.ensemble_size(), 2);
    }

    #[test]
    fn ensemble_median_is_order_invariant() {
        let forward = PredictiveEnsemble {
            samples: vec![
                Tensor::from_vec(vec![3.0, 0.0]),
                Tensor::from_vec(vec![1.0, 2.0]),
                Tensor::from_vec(vec![2.0, 9.0]),
            ],
            log_vars: None,
        };
        let m = forward.median().unwrap();
        assert_eq!(m.data(), &[2.0, 2.0]);
        let backward = PredictiveEnsemble {
            samples: forward.samples.into_iter().rev().collect(),
            log_vars: None,
        };
        assert_eq!(backward.median().unwrap().data(), &[2.0, 2.0]);
        // Even ensembles average the middle pair.
        let even = PredictiveEnsemble {
            samples: vec![
                Tensor::from_vec(vec![4.0]),
                Tensor::from_vec(vec![1.0]),
                Tensor::from_vec(vec![2.0]),
                Tensor::from_vec(vec![3.0]),
            ],
            log_vars: None,
        };
        assert_relative_eq!(even.median().unwrap().data()[0], 2.5);
    }

    #[test]
    fn total_variance_combines_both_terms() {
        // Constant members with s = 0: epistemic 0, aleatoric exp(0) = 1.
        let constant = PredictiveEnsemble {
            samples: vec![Tensor::from_vec(vec![5.0]), Tensor::from_vec(vec![5.0])],
            log_vars: Some(vec![
                Tensor::from_vec(vec![0.0]),
                Tensor::from_vec(vec![0.0]),
            ]),
        };
        assert_relative_eq!(constant.total_variance(false).unwrap().data()[0], 1.0);
        // Members {1, 3} with vanishing claimed variance: epistemic 1 only.
        let spread = PredictiveEnsemble {
            samples: vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![3.0])],
            log_vars: Some(vec![
                Tensor::from_vec(vec![-700.0]),
                Tensor::from_vec(vec![-700.0]),
            ]),
        };
        assert_relative_eq!(spread.total_variance(false).unwrap().data()[0], 1.0);
        // The verbatim form squares each member variance: with s = ln 2 the
        // default aleatoric term is 2, the verbatim one 4.
        let s = (2.0f64).ln();
        let verbatim = PredictiveEnsemble {
            samples: vec![Tensor::from_vec(vec![5.0]), Tensor::from_vec(vec![5.0])],
            log_vars: Some(vec![
                Tensor::from_vec(vec![s]),
                Tensor::from_vec(vec![s]),
            ]),
        };
        assert_relative_eq!(verbatim.total_variance(false).unwrap().data()[0], 2.0);
        assert_relative_eq!(verbatim.total_variance(true).unwrap().data()[0], 4.0);
        // Contract checks: no log variances, or a lone member.
        let bare = PredictiveEnsemble {
            samples: vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![2.0])],
            log_vars: None,
        };
        assert!(bare.total_variance(false).is_err());
        let lone = PredictiveEnsemble {
            samples: vec![Tensor::from_vec(vec![1.0])],
            log_vars: Some(vec![Tensor::from_vec(vec![0.0])]),
        };
        assert!(lone.total_variance(false).is_err());
    }
}
