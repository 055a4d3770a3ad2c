//! Ensemble prediction over a held-out span and metric-report assembly.
//!
//! A trained checkpoint is evaluated by tiling the span with prediction
//! windows, running `E` stochastic forward passes, and scoring the ensemble
//! median plus central prediction intervals:
//!
//! * variational models take empirical ensemble quantiles;
//! * the dropout baseline takes Gaussian quantiles around the ensemble mean
//!   with its total (epistemic + aleatoric) variance, since its aleatoric
//!   part is parametric.
//!
//! Every ensemble member draws its own deterministic noise stream keyed by
//! the member index, so results are identical no matter how many workers
//! run the members.

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::data::{
    eval_windows, gather_node_batch, gather_spatial_batch, EvalWindow, SpatioTemporalDataset,
    HOURS_PER_WEEK,
};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::metrics::{
    build_report, empirical_interval, gaussian_interval, CoverageMetrics, IntervalSpec,
    MetricReport,
};
use crate::models::{BstnnModel, BtnnModel, CompBnnModel, PredictiveEnsemble};
use crate::params::ParamStore;
use crate::rng::{stream, GaussianNoise};
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::ops::Range;
use std::path::Path;

pub const DEFAULT_ENSEMBLE: usize = 11;
pub const DEFAULT_COVERAGE: [f64; 2] = [0.75, 0.90];
/// Eval windows per forward batch.
pub const DEFAULT_EVAL_BATCH: usize = 32;

/// Settings of one evaluation run.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Ensemble size `E`.
    pub ensemble: usize,
    /// Central coverage levels to score.
    pub coverage: Vec<f64>,
    pub seed: u64,
    /// Worker threads for ensemble members (1 = sequential; results do not
    /// depend on this).
    pub workers: usize,
    /// Use the squared-aleatoric form of the baseline's total variance.
    pub paper_verbatim_variance: bool,
    /// Score against every target cell instead of only observed ones (for
    /// synthetic data, whose target field is dense ground truth).
    pub dense_truth: bool,
    pub batch_windows: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ensemble: DEFAULT_ENSEMBLE,
            coverage: DEFAULT_COVERAGE.to_vec(),
            seed: 0,
            workers: 1,
            paper_verbatim_variance: false,
            dense_truth: false,
            batch_windows: DEFAULT_EVAL_BATCH,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble == 0 {
            return Err(Error::Contract(
                "ensemble size must be at least 1".into(),
            ));
        }
        for &c in &self.coverage {
            IntervalSpec::new(c)?;
        }
        if self.workers == 0 {
            return Err(Error::Domain("worker count must be at least 1".into()));
        }
        if self.batch_windows == 0 {
            return Err(Error::Domain(
                "evaluation batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A finished evaluation: the report plus everything needed to plot it.
/// All tensors are `[T, N]` over the evaluated span, in original units.
#[derive(Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    pub median: Tensor,
    /// Interval bounds per coverage level; empty when `E < 2`.
    pub lo: Vec<Tensor>,
    pub hi: Vec<Tensor>,
    pub target: Tensor,
    pub mask: Tensor,
    /// Absolute dataset hour of each row.
    pub hours: Vec<usize>,
    pub coverage: Vec<f64>,
}

/// A model rebuilt from a checkpoint, ready for stochastic forward passes.
struct RestoredModel {
    store: ParamStore,
    kind: RestoredKind,
}

enum RestoredKind {
    Btnn(BtnnModel),
    Bstnn(BstnnModel),
    Comp(CompBnnModel),
}

fn has_eta(ckpt: &Checkpoint) -> bool {
    ckpt.params
        .iter()
        .any(|p| p.role == crate::params::ParamRole::Eta)
}

/// Rebuilds the checkpointed model into a fresh store.
fn restore_model(ckpt: &Checkpoint) -> Result<RestoredModel> {
    let mut store = ParamStore::new();
    let mut scratch = stream(0, &["restore-scratch"]);
    let kind = match ckpt.model {
        ModelKind::Btnn => RestoredKind::Btnn(BtnnModel::build(
            &mut store,
            ckpt.dims,
            has_eta(ckpt),
            &mut scratch,
        )?),
        ModelKind::Bstnn => RestoredKind::Bstnn(BstnnModel::build(
            &mut store,
            ckpt.dims,
            has_eta(ckpt),
            &mut scratch,
        )?),
        ModelKind::Comp => RestoredKind::Comp(CompBnnModel::build(
            &mut store,
            ckpt.dims,
            ckpt.dropout_p.ok_or_else(|| {
                Error::Contract("baseline checkpoint lacks its dropout probability".into())
            })?,
            &mut scratch,
        )?),
    };
    ckpt.restore(&mut store)?;
    Ok(RestoredModel { store, kind })
}

/// Runs `E` stochastic passes of a checkpointed model over a span of the
/// dataset, tiled by prediction windows. Returns samples in original target
/// units, shaped `[span_len, N]`, along with the tiling used.
pub fn predict_ensemble(
    ckpt: &Checkpoint,
    dataset: &SpatioTemporalDataset,
    graph: Option<&SpatialGraph>,
    span: &Range<usize>,
    config: &EvalConfig,
) -> Result<(PredictiveEnsemble, Vec<EvalWindow>)> {
    config.validate()?;
    let dims = ckpt.dims;
    if dataset.channels() != dims.features {
        return Err(Error::Contract(format!(
            "dataset has {} feature channels but the checkpoint expects {}",
            dataset.channels(),
            dims.features
        )));
    }
    if span.start < dims.window.saturating_sub(dims.horizon) || span.end > dataset.hours() {
        return Err(Error::Domain(format!(
            "span {span:?} leaves no room for {}-hour windows in {} hours",
            dims.window,
            dataset.hours()
        )));
    }
    let norm = ckpt.normalization.clone().ok_or_else(|| {
        Error::Contract("checkpoint carries no normalization statistics".into())
    })?;
    if ckpt.model == ModelKind::Bstnn {
        let g = graph.ok_or_else(|| {
            Error::Contract("evaluating a spatio-temporal checkpoint requires a graph".into())
        })?;
        if g.len() != dataset.node_count() {
            return Err(Error::Contract(format!(
                "graph has {} nodes but the dataset has {}",
                g.len(),
                dataset.node_count()
            )));
        }
        if let Some(expected) = &ckpt.graph_sha256 {
            if *expected != g.sha256_hex() {
                return Err(Error::Contract(
                    "checkpoint was trained on a different graph than the one supplied".into(),
                ));
            }
        }
    }

    let ds = norm.apply(dataset)?;
    let windows = eval_windows(span, dims.window, dims.horizon)?;
    let model = restore_model(ckpt)?;

    let run_member = |member: usize| -> Result<(Tensor, Option<Tensor>)> {
        let tag = member.to_string();
        member_pass(&model, &ds, graph, span, &windows, config, &tag)
    };

    let members: Vec<(Tensor, Option<Tensor>)> = if config.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..config.ensemble)
                .into_par_iter()
                .map(run_member)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..config.ensemble)
            .map(run_member)
            .collect::<Result<Vec<_>>>()?
    };

    // Back to original units.
    let mut samples = Vec::with_capacity(members.len());
    let mut log_vars = Vec::new();
    let log_var_shift = 2.0 * norm.target_std.ln();
    for (pred, lv) in members {
        samples.push(pred.map(|v| norm.invert_target(v)));
        if let Some(lv) = lv {
            log_vars.push(lv.map(|s| s + log_var_shift));
        }
    }
    let log_vars = if log_vars.is_empty() {
        None
    } else {
        Some(log_vars)
    };
    Ok((PredictiveEnsemble { samples, log_vars }, windows))
}

/// One stochastic pass over the whole span (standardized units).
fn member_pass(
    model: &RestoredModel,
    ds: &SpatioTemporalDataset,
    graph: Option<&SpatialGraph>,
    span: &Range<usize>,
    windows: &[EvalWindow],
    config: &EvalConfig,
    member_tag: &str,
) -> Result<(Tensor, Option<Tensor>)> {
    let n = ds.node_count();
    let rows = span.len();
    match &model.kind {
        RestoredKind::Btnn(m) => {
            let dims = m.dims;
            let mut out = vec![0.0; rows * n];
            for node in 0..n {
                for chunk in windows.chunks(config.batch_windows) {
                    let anchors: Vec<usize> = chunk.iter().map(|w| w.anchor).collect();
                    let batch = gather_node_batch(ds, node, &anchors, dims.window, dims.horizon)?;
                    // Recreating the stream per batch replays the same weight
                    // draw, so one member is one function sample throughout.
                    let mut noise =
                        GaussianNoise::new(stream(config.seed, &["eval-member", member_tag]));
                    let pred = m.forward_values(&model.store, &mut noise, &batch.x)?;
                    for (b, w) in chunk.iter().enumerate() {
                        for k in 0..w.write_len {
                            let hour = w.anchor - w.write_len + k;
                            let p = pred.get(&[b, dims.horizon - w.write_len + k])?;
                            out[(hour - span.start) * n + node] = p;
                        }
                    }
                }
            }
            Ok((Tensor::new(vec![rows, n], out)?, None))
        }
        RestoredKind::Bstnn(m) => {
            let dims = m.dims;
            let graph = graph.expect("checked by predict_ensemble");
            let mut out = vec![0.0; rows * n];
            for chunk in windows.chunks(config.batch_windows) {
                let anchors: Vec<usize> = chunk.iter().map(|w| w.anchor).collect();
                let batch = gather_spatial_batch(ds, &anchors, dims.window, dims.horizon)?;
                let mut noise =
                    GaussianNoise::new(stream(config.seed, &["eval-member", member_tag]));
                let pred = m.forward_values(&model.store, &mut noise, graph, &batch.x)?;
                for (b, w) in chunk.iter().enumerate() {
                    for k in 0..w.write_len {
                        let hour = w.anchor - w.write_len + k;
                        for node in 0..n {
                            let p = pred.get(&[b, dims.horizon - w.write_len + k, node])?;
                            out[(hour - span.start) * n + node] = p;
                        }
                    }
                }
            }
            Ok((Tensor::new(vec![rows, n], out)?, None))
        }
        RestoredKind::Comp(m) => {
            let dims = m.dims;
            let mut out = vec![0.0; rows * n];
            let mut lv_out = vec![0.0; rows * n];
            // One mask stream per member, consumed across batches.
            let mut rng = stream(config.seed, &["eval-member", member_tag]);
            for node in 0..n {
                for chunk in windows.chunks(config.batch_windows) {
                    let anchors: Vec<usize> = chunk.iter().map(|w| w.anchor).collect();
                    let batch = gather_node_batch(ds, node, &anchors, dims.window, dims.horizon)?;
                    let (pred, lv) = m.forward_values(&model.store, &mut rng, &batch.x)?;
                    for (b, w) in chunk.iter().enumerate() {
                        for k in 0..w.write_len {
                            let hour = w.anchor - w.write_len + k;
                            let col = dims.horizon - w.write_len + k;
                            out[(hour - span.start) * n + node] = pred.get(&[b, col])?;
                            lv_out[(hour - span.start) * n + node] = lv.get(&[b, col])?;
                        }
                    }
                }
            }
            Ok((
                Tensor::new(vec![rows, n], out)?,
                Some(Tensor::new(vec![rows, n], lv_out)?),
            ))
        }
    }
}

/// Evaluates a checkpoint over a span: ensemble prediction, intervals, and
/// the full metric report.
pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &SpatioTemporalDataset,
    graph: Option<&SpatialGraph>,
    span: &Range<usize>,
    config: &EvalConfig,
) -> Result<Evaluation> {
    let (ensemble, _windows) = predict_ensemble(ckpt, dataset, graph, span, config)?;
    let n = dataset.node_count();
    let rows = span.len();
    let median = ensemble.median()?;

    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let coverage_defined = ensemble.ensemble_size() >= 2;
    if coverage_defined {
        if ensemble.log_vars.is_some() {
            // Parametric Gaussian intervals for the baseline.
            let mean = ensemble.mean()?;
            let total = ensemble.total_variance(config.paper_verbatim_variance)?;
            let std = total.map(|v| v.max(0.0).sqrt());
            for &c in &config.coverage {
                let spec = IntervalSpec::new(c)?;
                let mut l = vec![0.0; rows * n];
                let mut h = vec![0.0; rows * n];
                for i in 0..rows * n {
                    let (a, b) = gaussian_interval(mean.data()[i], std.data()[i], spec)?;
                    l[i] = a;
                    h[i] = b;
                }
                lo.push(Tensor::new(vec![rows, n], l)?);
                hi.push(Tensor::new(vec![rows, n], h)?);
            }
        } else {
            // Empirical ensemble quantiles for the variational models.
            let e = ensemble.ensemble_size();
            let specs: Vec<IntervalSpec> = config
                .coverage
                .iter()
                .map(|&c| IntervalSpec::new(c))
                .collect::<Result<_>>()?;
            let mut l = vec![vec![0.0; rows * n]; specs.len()];
            let mut h = vec![vec![0.0; rows * n]; specs.len()];
            let mut column = vec![0.0; e];
            for i in 0..rows * n {
                for (k, s) in ensemble.samples.iter().enumerate() {
                    column[k] = s.data()[i];
                }
                for (k, spec) in specs.iter().enumerate() {
                    let (a, b) = empirical_interval(&column, *spec)?;
                    l[k][i] = a;
                    h[k][i] = b;
                }
            }
            for k in 0..specs.len() {
                lo.push(Tensor::new(vec![rows, n], std::mem::take(&mut l[k]))?);
                hi.push(Tensor::new(vec![rows, n], std::mem::take(&mut h[k]))?);
            }
        }
    }

    let target = slice_rows(&dataset.targets, span)?;
    let mask = if config.dense_truth {
        Tensor::new(vec![rows, n], vec![1.0; rows * n])?
    } else {
        slice_rows(&dataset.valid, span)?
    };
    let weeks: Vec<usize> = (span.start..span.end)
        .map(|t| t / HOURS_PER_WEEK)
        .collect();

    let report = if coverage_defined {
        let lo_data: Vec<Vec<f64>> = lo.iter().map(|t| t.data().to_vec()).collect();
        let hi_data: Vec<Vec<f64>> = hi.iter().map(|t| t.data().to_vec()).collect();
        build_report(
            median.data(),
            &lo_data,
            &hi_data,
            &config.coverage,
            target.data(),
            mask.data(),
            &weeks,
            n,
        )?
    } else {
        // A lone member defines no interval: coverage metrics are undefined.
        let mut report = build_report(
            median.data(),
            &[],
            &[],
            &[],
            target.data(),
            mask.data(),
            &weeks,
            n,
        )?;
        report.coverage = config
            .coverage
            .iter()
            .map(|&c| CoverageMetrics {
                coverage: c,
                picp: None,
                mpiw: None,
            })
            .collect();
        report
    };

    Ok(Evaluation {
        report,
        median,
        lo,
        hi,
        target,
        mask,
        hours: (span.start..span.end).collect(),
        coverage: config.coverage.clone(),
    })
}

fn slice_rows(t: &Tensor, span: &Range<usize>) -> Result<Tensor> {
    let n = t.shape()[1];
    Tensor::new(
        vec![span.len(), n],
        t.data()[span.start * n..span.end * n].to_vec(),
    )
}

impl Evaluation {
    /// Writes per-hour predictions (`hour,node,target,valid,median` plus one
    /// `lo_XX,hi_XX` pair per coverage level) as CSV.
    pub fn save_predictions_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "hour".to_string(),
            "node".to_string(),
            "target".to_string(),
            "valid".to_string(),
            "median".to_string(),
        ];
        for &c in &self.coverage {
            let pct = (c * 100.0).round() as u32;
            header.push(format!("lo_{pct}"));
            header.push(format!("hi_{pct}"));
        }
        w.write_record(&header)?;
        let n = self.median.shape()[1];
        for (row, &hour) in self.hours.iter().enumerate() {
            for node in 0..n {
                let i = row * n + node;
                let mut record = vec![
                    hour.to_string(),
                    node.to_string(),
                    format!("{}", self.target.data()[i]),
                    format!("{}", self.mask.data()[i]),
                    format!("{}", self.median.data()[i]),
                ];
                for k in 0..self.lo.len() {
                    record.push(format!("{}", self.lo[k].data()[i]));
                    record.push(format!("{}", self.hi[k].data()[i]));
                }
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_weekly;
    use crate::models::ModelDims;
    use crate::synthdata::{simulate, SyntheticConfig};
    use crate::training::{train, TrainingConfig, TrainingMode};

    fn mini_world() -> (SpatioTemporalDataset, SpatialGraph, crate::data::DatasetSplit) {
        let config = SyntheticConfig {
            seed: 21,
            hours: 6 * 168,
            grid_x: 4,
            grid_y: 3,
            nodes: 6,
            mask_rate: 0.6,
            ..Default::default()
        };
        let (ds, graph) = simulate(&config).unwrap();
        let split = split_weekly(ds.hours(), 2 * 168, 0.25, 5).unwrap();
        (ds, graph, split)
    }

    fn mini_dims() -> ModelDims {
        ModelDims {
            features: 4,
            lstm1: 4,
            lstm2: 5,
            graph1: 6,
            graph2: 6,
            window: 12,
            horizon: 4,
        }
    }

    fn mini_train(mode: TrainingMode) -> (SpatioTemporalDataset, SpatialGraph, crate::data::DatasetSplit, crate::checkpoint::Checkpoint) {
        let (ds, graph, split) = mini_world();
        let config = TrainingConfig {
            mode,
            dims: mini_dims(),
            epochs: Some(1),
            batch_size: 8,
            max_batches_per_epoch: Some(2),
            max_val_windows: Some(8),
            seed: 3,
            ..Default::default()
        };
        let needs_graph = mode.needs_graph();
        let out = train(
            &config,
            &ds,
            &split,
            if needs_graph { Some(&graph) } else { None },
            None,
        )
        .unwrap();
        (ds, graph, split, out.checkpoint)
    }

    fn quick_eval_config(e: usize) -> EvalConfig {
        EvalConfig {
            ensemble: e,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn btnn_evaluation_covers_span_and_is_deterministic() {
        let (ds, _graph, split, ckpt) = mini_train(TrainingMode::Btnn);
        let cfg = quick_eval_config(3);
        let eval = evaluate(&ckpt, &ds, None, &split.test, &cfg).unwrap();
        assert_eq!(eval.median.shape(), &[split.test.len(), ds.node_count()]);
        assert!(eval.median.data().iter().all(|v| v.is_finite()));
        assert_eq!(eval.lo.len(), 2);
        let p = eval.report.picp_at(0.9).unwrap();
        assert!((0.0..=1.0).contains(&p));
        // Reruns are identical.
        let again = evaluate(&ckpt, &ds, None, &split.test, &cfg).unwrap();
        assert_eq!(eval.median.data(), again.median.data());
        assert_eq!(eval.lo[1].data(), again.lo[1].data());
    }

    #[test]
    fn members_differ_but_member_weights_hold_across_batches() {
        let (ds, _graph, split, ckpt) = mini_train(TrainingMode::Btnn);
        // Two batch sizes that split the windows differently must agree,
        // because a member's weight draw replays per batch.
        let a = predict_ensemble(
            &ckpt,
            &ds,
            None,
            &split.test,
            &EvalConfig {
                batch_windows: 7,
                ..quick_eval_config(2)
            },
        )
        .unwrap()
        .0;
        let b = predict_ensemble(
            &ckpt,
            &ds,
            None,
            &split.test,
            &EvalConfig {
                batch_windows: 32,
                ..quick_eval_config(2)
            },
        )
        .unwrap()
        .0;
        assert_eq!(a.samples[0].data(), b.samples[0].data());
        assert_eq!(a.samples[1].data(), b.samples[1].data());
        // And different members genuinely differ.
        assert_ne!(a.samples[0].data(), a.samples[1].data());
    }

    #[test]
    fn bstnn_evaluation_requires_matching_graph() {
        let (ds, graph, split, ckpt) = mini_train(TrainingMode::Jt);
        let cfg = quick_eval_config(2);
        let eval = evaluate(&ckpt, &ds, Some(&graph), &split.test, &cfg).unwrap();
        assert!(eval.report.rmse_spatial_mean.unwrap().is_finite());
        // Missing graph.
        assert!(evaluate(&ckpt, &ds, None, &split.test, &cfg).is_err());
        // Wrong graph (rebuilt with another adjacency rule -> different hash).
        let other = SpatialGraph::build(
            ds.nodes.clone(),
            crate::graph::AdjacencyConfig::Threshold { radius: 900.0 },
        )
        .unwrap();
        assert!(evaluate(&ckpt, &ds, Some(&other), &split.test, &cfg).is_err());
    }

    #[test]
    fn single_member_reports_undefined_coverage() {
        let (ds, _graph, split, ckpt) = mini_train(TrainingMode::Btnn);
        let eval = evaluate(&ckpt, &ds, None, &split.test, &quick_eval_config(1)).unwrap();
        assert!(eval.lo.is_empty());
        assert_eq!(eval.report.coverage.len(), 2);
        assert!(eval.report.coverage.iter().all(|c| c.picp.is_none() && c.mpiw.is_none()));
        // Accuracy metrics still come out.
        assert!(eval.report.rmse_spatial_mean.is_some());
    }

    #[test]
    fn comp_evaluation_uses_gaussian_intervals() {
        let (ds, _graph, split, ckpt) = mini_train(TrainingMode::Comp);
        let cfg = EvalConfig {
            dense_truth: true,
            ..quick_eval_config(3)
        };
        let eval = evaluate(&ckpt, &ds, None, &split.test, &cfg).unwrap();
        // Gaussian intervals are symmetric around the ensemble mean.
        let (ensemble, _) =
            predict_ensemble(&ckpt, &ds, None, &split.test, &cfg).unwrap();
        let mean = ensemble.mean().unwrap();
        for i in 0..20 {
            let mid = 0.5 * (eval.lo[0].data()[i] + eval.hi[0].data()[i]);
            approx::assert_relative_eq!(mid, mean.data()[i], epsilon = 1e-9);
        }
        // Wider nominal coverage gives wider intervals.
        for i in 0..mean.len() {
            let w75 = eval.hi[0].data()[i] - eval.lo[0].data()[i];
            let w90 = eval.hi[1].data()[i] - eval.lo[1].data()[i];
            assert!(w90 >= w75);
        }
        // Dense truth: every cell is scored.
        assert!(eval.mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (ds, _graph, split, ckpt) = mini_train(TrainingMode::Btnn);
        let sequential = evaluate(&ckpt, &ds, None, &split.test, &quick_eval_config(3)).unwrap();
        let parallel = evaluate(
            &ckpt,
            &ds,
            None,
            &split.test,
            &EvalConfig {
                workers: 3,
                ..quick_eval_config(3)
            },
        )
        .unwrap();
        assert_eq!(sequential.median.data(), parallel.median.data());
        assert_eq!(sequential.lo[0].data(), parallel.lo[0].data());
    }

    #[test]
    fn predictions_csv_has_interval_columns() {
        let (ds, _graph, split, ckpt) = mini_train(TrainingMode::Btnn);
        let eval = evaluate(&ckpt, &ds, None, &split.test, &quick_eval_config(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        eval.save_predictions_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("hour,node,target,valid,median,lo_75,hi_75,lo_90,hi_90"));
        // One row per (hour, node).
        assert_eq!(
            text.lines().count(),
            1 + split.test.len() * ds.node_count()
        );
    }

    #[test]
    fn zero_ensemble_is_a_contract_error() {
        let (ds, _graph, split, ckpt) = mini_train(TrainingMode::Btnn);
        let err = evaluate(&ckpt, &ds, None, &split.test, &quick_eval_config(0)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
