//! Accuracy and uncertainty-coverage metrics.
//!
//! Every metric returns `Option<f64>`: `None` marks an undefined value
//! (no valid points, zero target variance, empty aggregation) rather than
//! letting NaN propagate. Aggregates skip undefined inputs.
//!
//! Conventions, pinned here and exercised by tests:
//!
//! * Empirical quantiles interpolate linearly between order statistics at
//!   position `h = (n - 1) q` (the common "type 7" rule).
//! * Medians of even-length sets are the mean of the two middle values.
//! * A coverage level `c` denotes the central interval between the
//!   `(1 - c) / 2` and `(1 + c) / 2` quantiles, so a 0.90 level targets
//!   90% empirical coverage.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A central prediction-interval specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub coverage: f64,
}

impl IntervalSpec {
    pub fn new(coverage: f64) -> Result<Self> {
        if !(0.0 < coverage && coverage < 1.0) {
            return Err(Error::Domain(format!(
                "coverage level must lie in (0, 1), got {coverage}"
            )));
        }
        Ok(IntervalSpec { coverage })
    }

    /// Lower quantile position `(1 - c) / 2`.
    pub fn lower(&self) -> f64 {
        (1.0 - self.coverage) / 2.0
    }

    /// Upper quantile position `(1 + c) / 2`.
    pub fn upper(&self) -> f64 {
        (1.0 + self.coverage) / 2.0
    }
}

/// Root of the masked mean squared error; `None` without valid points.
pub fn rmse(pred: &[f64], target: &[f64], mask: &[f64]) -> Option<f64> {
    debug_assert_eq!(pred.len(), target.len());
    debug_assert_eq!(pred.len(), mask.len());
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..pred.len() {
        if mask[i] == 1.0 {
            let r = pred[i] - target[i];
            sum += r * r;
            count += 1.0;
        }
    }
    if count == 0.0 {
        None
    } else {
        Some((sum / count).sqrt())
    }
}

/// Coefficient of determination `1 - SS_res / SS_tot` over valid points;
/// `None` with fewer than two valid points or zero target variance.
pub fn r2(pred: &[f64], target: &[f64], mask: &[f64]) -> Option<f64> {
    debug_assert_eq!(pred.len(), target.len());
    debug_assert_eq!(pred.len(), mask.len());
    let mut mean = 0.0;
    let mut count = 0.0;
    for i in 0..target.len() {
        if mask[i] == 1.0 {
            mean += target[i];
            count += 1.0;
        }
    }
    if count < 2.0 {
        return None;
    }
    mean /= count;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..target.len() {
        if mask[i] == 1.0 {
            let r = pred[i] - target[i];
            ss_res += r * r;
            let d = target[i] - mean;
            ss_tot += d * d;
        }
    }
    if ss_tot == 0.0 {
        None
    } else {
        Some(1.0 - ss_res / ss_tot)
    }
}

/// Median with the mean-of-middle convention for even counts; `None` on
/// an empty set. Sorts its input.
pub fn median_of(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values must be comparable"));
    let n = values.len();
    if n % 2 == 1 {
        Some(values[n / 2])
    } else {
        Some(0.5 * (values[n / 2 - 1] + values[n / 2]))
    }
}

/// Median of per-week coefficients of determination. `weeks[i]` assigns a
/// calendar week to point `i`; weeks whose r2 is undefined are skipped.
/// `None` if every week is undefined.
pub fn weekly_median_r2(
    pred: &[f64],
    target: &[f64],
    mask: &[f64],
    weeks: &[usize],
) -> Option<f64> {
    debug_assert_eq!(pred.len(), weeks.len());
    let max_week = *weeks.iter().max()?;
    let mut scores = Vec::new();
    for w in 0..=max_week {
        let idx: Vec<usize> = (0..weeks.len()).filter(|&i| weeks[i] == w).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| target[i]).collect();
        let m: Vec<f64> = idx.iter().map(|&i| mask[i]).collect();
        if let Some(s) = r2(&p, &t, &m) {
            scores.push(s);
        }
    }
    median_of(&mut scores)
}

/// Arithmetic mean over defined scores; `None` if none are defined.
pub fn spatial_aggregate(per_node: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_node.iter().filter_map(|s| *s).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Linear-interpolation empirical quantile at position `h = (n - 1) q`
/// over `sorted` ascending values.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Domain("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!(
            "quantile position must lie in [0, 1], got {q}"
        )));
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[sorted.len() - 1])
    }
}

/// Central interval of an ensemble by empirical quantiles. Requires at
/// least two samples.
pub fn empirical_interval(samples: &[f64], spec: IntervalSpec) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Contract(format!(
            "interval estimation needs at least 2 ensemble samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("ensemble samples must be comparable"));
    Ok((
        empirical_quantile(&sorted, spec.lower())?,
        empirical_quantile(&sorted, spec.upper())?,
    ))
}

/// Inverse standard normal cumulative distribution function (the rational
/// approximation of Acklam; absolute error below 1.2e-9 across (0, 1)).
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Domain(format!(
            "inverse normal CDF expects p in (0, 1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    };
    Ok(x)
}

/// Central Gaussian interval `mean ± z std` with `z` at the spec's upper
/// quantile position.
pub fn gaussian_interval(mean: f64, std: f64, spec: IntervalSpec) -> Result<(f64, f64)> {
    if std < 0.0 {
        return Err(Error::Domain(format!(
            "standard deviation must be non-negative, got {std}"
        )));
    }
    let z = inverse_normal_cdf(spec.upper())?;
    Ok((mean - z * std, mean + z * std))
}

/// Fraction of valid targets inside `[lo, hi]` (inclusive); `None`
/// without valid points.
pub fn picp(lo: &[f64], hi: &[f64], target: &[f64], mask: &[f64]) -> Option<f64> {
    debug_assert_eq!(lo.len(), hi.len());
    debug_assert_eq!(lo.len(), target.len());
    let mut inside = 0.0;
    let mut count = 0.0;
    for i in 0..target.len() {
        if mask[i] == 1.0 {
            count += 1.0;
            if lo[i] <= target[i] && target[i] <= hi[i] {
                inside += 1.0;
            }
        }
    }
    if count == 0.0 {
        None
    } else {
        Some(inside / count)
    }
}

/// Mean interval width over valid points; `None` without valid points.
pub fn mpiw(lo: &[f64], hi: &[f64], mask: &[f64]) -> Option<f64> {
    debug_assert_eq!(lo.len(), hi.len());
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..lo.len() {
        if mask[i] == 1.0 {
            sum += hi[i] - lo[i];
            count += 1.0;
        }
    }
    if count == 0.0 {
        None
    } else {
        Some(sum / count)
    }
}

/// Scores for one node over the evaluated span. The coverage vectors are
/// aligned with the report's coverage levels, giving the per-node maps
/// behind the spatial heatmaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub weekly_r2: Option<f64>,
    #[serde(default)]
    pub picp: Vec<Option<f64>>,
    #[serde(default)]
    pub mpiw: Vec<Option<f64>>,
}

/// Pooled coverage scores at one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageMetrics {
    pub coverage: f64,
    pub picp: Option<f64>,
    pub mpiw: Option<f64>,
}

/// Full evaluation summary: per-node scores, spatial means, and pooled
/// coverage per requested level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub nodes: Vec<NodeMetrics>,
    pub rmse_spatial_mean: Option<f64>,
    pub r2_spatial_mean: Option<f64>,
    pub weekly_r2_spatial_mean: Option<f64>,
    pub coverage: Vec<CoverageMetrics>,
}

impl MetricReport {
    /// Looks up the pooled PICP at a coverage level.
    pub fn picp_at(&self, coverage: f64) -> Option<f64> {
        self.coverage
            .iter()
            .find(|c| (c.coverage - coverage).abs() < 1e-12)
            .and_then(|c| c.picp)
    }

    /// Looks up the pooled MPIW at a coverage level.
    pub fn mpiw_at(&self, coverage: f64) -> Option<f64> {
        self.coverage
            .iter()
            .find(|c| (c.coverage - coverage).abs() < 1e-12)
            .and_then(|c| c.mpiw)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Per-node CSV (`node,rmse,r2,weekly_r2`); undefined scores are
    /// empty fields.
    pub fn save_node_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "node".to_string(),
            "rmse".to_string(),
            "r2".to_string(),
            "weekly_r2".to_string(),
        ];
        for c in &self.coverage {
            let pct = (c.coverage * 100.0).round() as u32;
            header.push(format!("picp_{pct}"));
            header.push(format!("mpiw_{pct}"));
        }
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for n in &self.nodes {
            let mut record = vec![
                n.node.to_string(),
                fmt(n.rmse),
                fmt(n.r2),
                fmt(n.weekly_r2),
            ];
            for k in 0..self.coverage.len() {
                record.push(fmt(n.picp.get(k).copied().flatten()));
                record.push(fmt(n.mpiw.get(k).copied().flatten()));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assembles a [`MetricReport`] from flattened `[T, N]` row-major slices:
/// point predictions, per-level interval bounds, targets, and the
/// validity mask, with `weeks[t]` giving each row's calendar week.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    pred: &[f64],
    lo: &[Vec<f64>],
    hi: &[Vec<f64>],
    levels: &[f64],
    target: &[f64],
    mask: &[f64],
    weeks: &[usize],
    n_nodes: usize,
) -> Result<MetricReport> {
    if n_nodes == 0 || pred.len() % n_nodes != 0 {
        return Err(Error::Shape(format!(
            "{} predictions do not tile {n_nodes} nodes",
            pred.len()
        )));
    }
    let t_len = pred.len() / n_nodes;
    if target.len() != pred.len() || mask.len() != pred.len() || weeks.len() != t_len {
        return Err(Error::Shape(
            "prediction, target, mask, and week lengths disagree".into(),
        ));
    }
    if lo.len() != levels.len() || hi.len() != levels.len() {
        return Err(Error::Shape(
            "one pair of bound tensors is required per coverage level".into(),
        ));
    }
    if lo.iter().chain(hi).any(|b| b.len() != pred.len()) {
        return Err(Error::Shape(
            "interval bounds must match the prediction shape".into(),
        ));
    }

    let mut nodes = Vec::with_capacity(n_nodes);
    for node in 0..n_nodes {
        let idx: Vec<usize> = (0..t_len).map(|t| t * n_nodes + node).collect();
        let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| target[i]).collect();
        let m: Vec<f64> = idx.iter().map(|&i| mask[i]).collect();
        let mut node_picp = Vec::with_capacity(levels.len());
        let mut node_mpiw = Vec::with_capacity(levels.len());
        for k in 0..levels.len() {
            let l: Vec<f64> = idx.iter().map(|&i| lo[k][i]).collect();
            let h: Vec<f64> = idx.iter().map(|&i| hi[k][i]).collect();
            node_picp.push(picp(&l, &h, &y, &m));
            node_mpiw.push(mpiw(&l, &h, &m));
        }
        nodes.push(NodeMetrics {
            node,
            rmse: rmse(&p, &y, &m),
            r2: r2(&p, &y, &m),
            weekly_r2: weekly_median_r2(&p, &y, &m, weeks),
            picp: node_picp,
            mpiw: node_mpiw,
        });
    }
    let coverage = levels
        .iter()
        .enumerate()
        .map(|(k, &c)| CoverageMetrics {
            coverage: c,
            picp: picp(&lo[k], &hi[k], target, mask),
            mpiw: mpiw(&lo[k], &hi[k], mask),
        })
        .collect();
    Ok(MetricReport {
        rmse_spatial_mean: spatial_aggregate(
            &nodes.iter().map(|n| n.rmse).collect::<Vec<_>>(),
        ),
        r2_spatial_mean: spatial_aggregate(&nodes.iter().map(|n| n.r2).collect::<Vec<_>>()),
        weekly_r2_spatial_mean: spatial_aggregate(
            &nodes.iter().map(|n| n.weekly_r2).collect::<Vec<_>>(),
        ),
        nodes,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rmse_worked_examples() {
        let ones = vec![1.0; 2];
        assert_relative_eq!(rmse(&[5.0, 7.0], &[5.0, 7.0], &ones).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0], &ones).unwrap(), 1.0);
        // Residuals {3, 4}: mean square (9 + 16) / 2 = 12.5.
        assert_relative_eq!(
            rmse(&[3.0, 4.0], &[0.0, 0.0], &ones).unwrap(),
            12.5f64.sqrt()
        );
        assert!(rmse(&[1.0], &[0.0], &[0.0]).is_none());
        // The mask really excludes points.
        assert_relative_eq!(
            rmse(&[3.0, 99.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap(),
            3.0
        );
    }

    #[test]
    fn r2_worked_examples() {
        let ones = vec![1.0; 3];
        let t = [1.0, 2.0, 3.0];
        assert_relative_eq!(r2(&t, &t, &ones).unwrap(), 1.0);
        assert_relative_eq!(r2(&[2.0, 2.0, 2.0], &t, &ones).unwrap(), 0.0);
        // SS_res = 1, SS_tot = 2.
        assert_relative_eq!(r2(&[1.0, 2.0, 4.0], &t, &ones).unwrap(), 0.5);
        assert!(r2(&[1.0, 2.0], &[5.0, 5.0], &[1.0, 1.0]).is_none());
        assert!(r2(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 0.0]).is_none());
    }

    #[test]
    fn median_conventions() {
        assert_relative_eq!(median_of(&mut [0.2, 0.5, 0.9]).unwrap(), 0.5);
        // Even count: mean of the two middle values.
        assert_relative_eq!(median_of(&mut [0.8, 0.2, 0.4, 0.6]).unwrap(), 0.5);
        assert!(median_of(&mut []).is_none());
    }

    #[test]
    fn weekly_median_r2_over_constructed_weeks() {
        // Three weeks of {1, 2, 3} targets; predictions tuned so the
        // per-week scores are 0.2, 0.5, and 0.9.
        let t = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let mut p = t.clone();
        p[2] = 3.0 - (1.6f64).sqrt(); // SS_res 1.6 of SS_tot 2 -> 0.2
        p[5] = 3.0 - 1.0; // SS_res 1.0 -> 0.5
        p[8] = 3.0 - (0.2f64).sqrt(); // SS_res 0.2 -> 0.9
        let mask = vec![1.0; 9];
        let weeks = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        assert_relative_eq!(
            weekly_median_r2(&p, &t, &mask, &weeks).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        // Perfect predictions give exactly 1.
        assert_relative_eq!(weekly_median_r2(&t, &t, &mask, &weeks).unwrap(), 1.0);
        // A week with constant targets is skipped, not fatal.
        let t2 = vec![5.0, 5.0, 5.0, 1.0, 2.0, 3.0];
        let p2 = vec![4.0, 4.0, 4.0, 1.0, 2.0, 3.0];
        let weeks2 = vec![0, 0, 0, 1, 1, 1];
        assert_relative_eq!(
            weekly_median_r2(&p2, &t2, &vec![1.0; 6], &weeks2).unwrap(),
            1.0
        );
        // All weeks undefined.
        assert!(weekly_median_r2(&p2[..3], &t2[..3], &[1.0, 1.0, 1.0], &[0, 0, 0]).is_none());
    }

    #[test]
    fn spatial_aggregate_skips_undefined() {
        assert_relative_eq!(
            spatial_aggregate(&[Some(0.8), Some(1.0)]).unwrap(),
            0.9
        );
        assert_relative_eq!(spatial_aggregate(&[Some(0.7)]).unwrap(), 0.7);
        assert_relative_eq!(
            spatial_aggregate(&[Some(0.8), None, Some(1.0)]).unwrap(),
            0.9
        );
        assert!(spatial_aggregate(&[None, None]).is_none());
    }

    #[test]
    fn quantile_interpolation_rule() {
        let x = [1.0, 2.0, 3.0, 4.0];
        // h = 3 * 0.25 = 0.75 -> 1 + 0.75.
        assert_relative_eq!(empirical_quantile(&x, 0.25).unwrap(), 1.75);
        // h = 3 * 0.9 = 2.7 -> 3 + 0.7.
        assert_relative_eq!(empirical_quantile(&x, 0.9).unwrap(), 3.7);
        assert_relative_eq!(empirical_quantile(&x, 0.0).unwrap(), 1.0);
        assert_relative_eq!(empirical_quantile(&x, 1.0).unwrap(), 4.0);
        assert!(empirical_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn interval_needs_two_samples() {
        let spec = IntervalSpec::new(0.9).unwrap();
        assert!(empirical_interval(&[1.0], spec).is_err());
        let (lo, hi) = empirical_interval(&[2.0, 1.0], spec).unwrap();
        assert!(lo < hi);
    }

    #[test]
    fn inverse_normal_cdf_matches_reference_values() {
        assert_relative_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0, epsilon = 1e-9);
        assert_relative_eq!(
            inverse_normal_cdf(0.95).unwrap(),
            1.6448536269514722,
            epsilon = 1e-8
        );
        assert_relative_eq!(
            inverse_normal_cdf(0.975).unwrap(),
            1.959963984540054,
            epsilon = 1e-8
        );
        assert_relative_eq!(
            inverse_normal_cdf(0.01).unwrap(),
            -2.3263478740408408,
            epsilon = 1e-8
        );
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
    }

    #[test]
    fn gaussian_interval_uses_central_quantiles() {
        let spec = IntervalSpec::new(0.9).unwrap();
        let (lo, hi) = gaussian_interval(1.0, 2.0, spec).unwrap();
        assert_relative_eq!(hi, 1.0 + 2.0 * 1.6448536269514722, epsilon = 1e-7);
        assert_relative_eq!(lo + hi, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn picp_and_mpiw_worked_examples() {
        let mask = vec![1.0; 3];
        // Targets equal to the ensemble median sit inside any central
        // interval.
        let spec = IntervalSpec::new(0.5).unwrap();
        let samples = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (lo, hi) = empirical_interval(&samples, spec).unwrap();
        let lows = vec![lo; 3];
        let highs = vec![hi; 3];
        assert_relative_eq!(
            picp(&lows, &highs, &[3.0, 3.0, 3.0], &mask).unwrap(),
            1.0
        );
        // Degenerate ensemble: zero width, offset targets never covered.
        let (dlo, dhi) = empirical_interval(&[2.0, 2.0, 2.0], spec).unwrap();
        let dl = vec![dlo; 3];
        let dh = vec![dhi; 3];
        assert_relative_eq!(picp(&dl, &dh, &[2.5, 2.5, 2.5], &mask).unwrap(), 0.0);
        assert_relative_eq!(mpiw(&dl, &dh, &mask).unwrap(), 0.0);
        assert!(picp(&dl, &dh, &[2.5, 2.5, 2.5], &[0.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn coverage_is_monotone_in_level() {
        let mut rng = stream(13, &["mono"]);
        let samples: Vec<f64> = (0..101).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let targets: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mask = vec![1.0; targets.len()];
        let mut last_picp = -1.0;
        let mut last_mpiw = -1.0;
        for c in [0.5, 0.75, 0.9, 0.95] {
            let spec = IntervalSpec::new(c).unwrap();
            let (lo, hi) = empirical_interval(&samples, spec).unwrap();
            let lows = vec![lo; targets.len()];
            let highs = vec![hi; targets.len()];
            let p = picp(&lows, &highs, &targets, &mask).unwrap();
            let w = mpiw(&lows, &highs, &mask).unwrap();
            assert!(p >= last_picp, "picp fell from {last_picp} to {p} at {c}");
            assert!(w >= last_mpiw, "mpiw fell from {last_mpiw} to {w} at {c}");
            last_picp = p;
            last_mpiw = w;
        }
    }

    #[test]
    fn mpiw_shift_and_scale_behaviour() {
        let spec = IntervalSpec::new(0.8).unwrap();
        let samples: Vec<f64> = (0..50).map(|i| (i as f64) * 0.3 - 7.0).collect();
        let (lo, hi) = empirical_interval(&samples, spec).unwrap();
        let shifted: Vec<f64> = samples.iter().map(|s| s + 11.0).collect();
        let (slo, shi) = empirical_interval(&shifted, spec).unwrap();
        assert_relative_eq!(shi - slo, hi - lo, epsilon = 1e-12);
        let scaled: Vec<f64> = samples.iter().map(|s| s * 3.0).collect();
        let (klo, khi) = empirical_interval(&scaled, spec).unwrap();
        assert_relative_eq!(khi - klo, 3.0 * (hi - lo), epsilon = 1e-12);
    }

    #[test]
    fn picp_invariant_under_monotone_transforms() {
        // With 21 samples the 0.05 and 0.95 quantile positions are the
        // exact order statistics h = 1 and h = 19, so a monotone map
        // commutes with the interval construction exactly.
        let mut rng = stream(29, &["monotone"]);
        let samples: Vec<f64> = (0..21).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let targets: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mask = vec![1.0; targets.len()];
        let spec = IntervalSpec::new(0.9).unwrap();
        let (lo, hi) = empirical_interval(&samples, spec).unwrap();
        let p_raw = picp(
            &vec![lo; targets.len()],
            &vec![hi; targets.len()],
            &targets,
            &mask,
        )
        .unwrap();
        let f = |x: f64| (x * 0.7).exp();
        let t_samples: Vec<f64> = samples.iter().map(|&s| f(s)).collect();
        let t_targets: Vec<f64> = targets.iter().map(|&t| f(t)).collect();
        let (tlo, thi) = empirical_interval(&t_samples, spec).unwrap();
        let p_mapped = picp(
            &vec![tlo; targets.len()],
            &vec![thi; targets.len()],
            &t_targets,
            &mask,
        )
        .unwrap();
        assert_relative_eq!(p_raw, p_mapped);
    }

    #[test]
    fn standard_normal_coverage_experiment() {
        // A 10,000-sample standard normal ensemble scored against 10,000
        // standard normal targets at the 0.9 level.
        let mut rng = stream(47, &["coverage"]);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let targets: Vec<f64> = (0..10_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let spec = IntervalSpec::new(0.9).unwrap();
        let (lo, hi) = empirical_interval(&samples, spec).unwrap();
        let mask = vec![1.0; targets.len()];
        let p = picp(
            &vec![lo; targets.len()],
            &vec![hi; targets.len()],
            &targets,
            &mask,
        )
        .unwrap();
        assert!((0.88..=0.92).contains(&p), "coverage {p} outside [0.88, 0.92]");
    }

    #[test]
    fn report_assembly_and_serialization() {
        // Two nodes, four hours in two weeks.
        let pred = vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.5, 40.0];
        let target = vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let mask = vec![1.0; 8];
        let weeks = vec![0, 0, 1, 1];
        let lo: Vec<f64> = target.iter().map(|t| t - 1.0).collect();
        let hi: Vec<f64> = target.iter().map(|t| t + 1.0).collect();
        let report = build_report(
            &pred,
            &[lo.clone()],
            &[hi.clone()],
            &[0.9],
            &target,
            &mask,
            &weeks,
            2,
        )
        .unwrap();
        assert_eq!(report.nodes.len(), 2);
        assert_relative_eq!(report.nodes[1].rmse.unwrap(), 0.0);
        assert!(report.nodes[0].rmse.unwrap() > 0.0);
        assert_relative_eq!(report.picp_at(0.9).unwrap(), 1.0);
        assert_relative_eq!(report.mpiw_at(0.9).unwrap(), 2.0);
        // Per-node coverage maps line up with the level list.
        for node in &report.nodes {
            assert_relative_eq!(node.picp[0].unwrap(), 1.0);
            assert_relative_eq!(node.mpiw[0].unwrap(), 2.0);
        }

        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("report.json");
        report.save_json(&jpath).unwrap();
        let text = std::fs::read_to_string(&jpath).unwrap();
        let parsed: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.nodes.len(), 2);
        let cpath = dir.path().join("nodes.csv");
        report.save_node_csv(&cpath).unwrap();
        let csv_text = std::fs::read_to_string(&cpath).unwrap();
        assert!(csv_text.starts_with("node,rmse,r2,weekly_r2,picp_90,mpiw_90"));
        // Mismatched bound shapes are rejected.
        assert!(build_report(
            &pred,
            &[lo[..4].to_vec()],
            &[hi.clone()],
            &[0.9],
            &target,
            &mask,
            &weeks,
            2,
        )
        .is_err());
    }
}
