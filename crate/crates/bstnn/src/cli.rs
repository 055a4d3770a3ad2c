//! Command-line interface: `simulate`, `train`, `predict`, `evaluate`, and
//! `plot`, glued together by a plain-text `key = value` configuration file
//! whose entries individual flags override.
//!
//! Every command is deterministic given its seed; rerunning a command with
//! the same inputs reproduces its output files byte for byte.

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::data::{load_nodes, split_weekly, DatasetSplit, SpatioTemporalDataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, Evaluation};
use crate::graph::{AdjacencyConfig, SpatialGraph};
use crate::plot::{heatmap_svg, read_node_csv, read_predictions_csv, timeseries_svg};
use crate::synthdata::{simulate, CloudConfig, SyntheticConfig};
use crate::training::{train, TrainingConfig};
use crate::variational::Prior;
use clap::{Parser, Subcommand};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "bstnn",
    version,
    about = "Bayesian spatio-temporal prediction of scalar fields on spatial graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic lake-temperature dataset
    Simulate {
        /// Key-value configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated hours
        #[arg(long)]
        hours: Option<usize>,
        /// Number of grid nodes
        #[arg(long)]
        nodes: Option<usize>,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and history
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory written by `simulate` (or in the same schema)
        #[arg(long)]
        data: PathBuf,
        /// Training regime: BTNN, PT, FT, JT, or COMP
        #[arg(long)]
        mode: Option<String>,
        /// Source checkpoint (required for PT and FT)
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write ensemble predictions for the held-out span
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Trained checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Ensemble size E
        #[arg(long)]
        ensemble: Option<usize>,
        /// Worker threads for ensemble members
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the held-out span and write the metric report
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated central coverage levels, e.g. 0.75,0.9
        #[arg(long)]
        coverage: Option<String>,
        /// Use the squared-aleatoric total variance for the baseline
        #[arg(long)]
        paper_verbatim_variance: bool,
        /// Score against every cell (synthetic data carries dense truth)
        #[arg(long)]
        dense_truth: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG heatmaps and time series from evaluation outputs
    Plot {
        /// Directory holding report nodes.csv and predictions.csv
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Dataset directory (node coordinates)
        #[arg(long)]
        data: PathBuf,
        /// Render the time series of this node only
        #[arg(long)]
        node: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the CLI against the process arguments.
pub fn run() -> Result<()> {
    dispatch(Cli::parse())
}

/// Runs the CLI against explicit arguments (clap errors become usage
/// errors instead of exiting the process).
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Contract(e.to_string()))?;
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            hours,
            nodes,
            out,
        } => cmd_simulate(config.as_deref(), seed, hours, nodes, &out),
        Command::Train {
            config,
            data,
            mode,
            from,
            seed,
            epochs,
            out,
        } => cmd_train(
            config.as_deref(),
            &data,
            mode.as_deref(),
            from.as_deref(),
            seed,
            epochs,
            &out,
        ),
        Command::Predict {
            config,
            data,
            ckpt,
            seed,
            ensemble,
            workers,
            out,
        } => cmd_predict(
            config.as_deref(),
            &data,
            &ckpt,
            seed,
            ensemble,
            workers,
            &out,
        ),
        Command::Evaluate {
            config,
            data,
            ckpt,
            seed,
            ensemble,
            workers,
            coverage,
            paper_verbatim_variance,
            dense_truth,
            out,
        } => cmd_evaluate(
            config.as_deref(),
            &data,
            &ckpt,
            seed,
            ensemble,
            workers,
            coverage.as_deref(),
            paper_verbatim_variance,
            dense_truth,
            &out,
        ),
        Command::Plot {
            input,
            data,
            node,
            out,
        } => cmd_plot(&input, &data, node, &out),
    }
}

// ---------------------------------------------------------------------------
// Key-value configuration.

/// Parsed `key = value` entries in file order.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    pub entries: Vec<(String, String)>,
}

/// Parses a configuration file: one `key = value` per line, `#` comments,
/// blank lines ignored.
pub fn parse_key_values(text: &str, origin: &str) -> Result<KeyValues> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Contract(format!("{origin}:{}: expected key = value", idx + 1))
        })?;
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(KeyValues { entries })
}

fn load_key_values(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        None => Ok(KeyValues::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            parse_key_values(&text, &p.display().to_string())
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| {
        Error::Contract(format!("config key {key}: cannot parse {value:?}: {e}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Contract(format!(
            "config key {key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

/// Applies one key to the adjacency rule; `Ok(false)` means the key is not
/// an adjacency key.
fn apply_adjacency(adj: &mut AdjacencyConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "adjacency" => {
            *adj = match value.to_ascii_lowercase().as_str() {
                "threshold" => AdjacencyConfig::Threshold { radius: 1000.0 },
                "diffusion" => default_adjacency(),
                other => {
                    return Err(Error::Contract(format!(
                        "config key adjacency: unknown rule {other:?} (expected threshold or diffusion)"
                    )))
                }
            };
        }
        "radius" => match adj {
            AdjacencyConfig::Threshold { radius } => *radius = parse_value(key, value)?,
            _ => {
                return Err(Error::Contract(
                    "config key radius applies to the threshold rule; set adjacency = threshold first"
                        .into(),
                ))
            }
        },
        "sigma_sq" | "squared" | "cutoff" => match adj {
            AdjacencyConfig::Diffusion {
                sigma_sq,
                squared,
                cutoff,
            } => match key {
                "sigma_sq" => *sigma_sq = parse_value(key, value)?,
                "squared" => *squared = parse_bool(key, value)?,
                _ => {
                    *cutoff = if value.eq_ignore_ascii_case("none") {
                        None
                    } else {
                        Some(parse_value(key, value)?)
                    }
                }
            },
            _ => {
                return Err(Error::Contract(format!(
                    "config key {key} applies to the diffusion rule; set adjacency = diffusion first"
                )))
            }
        },
        _ => return Ok(false),
    }
    Ok(true)
}

fn default_adjacency() -> AdjacencyConfig {
    AdjacencyConfig::Diffusion {
        sigma_sq: 1000.0,
        squared: false,
        cutoff: Some(0.45),
    }
}

fn apply_synthetic(cfg: &mut SyntheticConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "seed" => cfg.seed = parse_value(key, value)?,
        "hours" => cfg.hours = parse_value(key, value)?,
        "grid_x" => cfg.grid_x = parse_value(key, value)?,
        "grid_y" => cfg.grid_y = parse_value(key, value)?,
        "nodes" => cfg.nodes = parse_value(key, value)?,
        "half_length" => cfg.half_length = parse_value(key, value)?,
        "half_width" => cfg.half_width = parse_value(key, value)?,
        "jitter" => cfg.jitter = parse_value(key, value)?,
        "base_temp" => cfg.base_temp = parse_value(key, value)?,
        "seasonal_amplitude" => cfg.seasonal_amplitude = parse_value(key, value)?,
        "seasonal_period" => cfg.seasonal_period = parse_value(key, value)?,
        "diurnal_amplitude" => cfg.diurnal_amplitude = parse_value(key, value)?,
        "spatial_gradient" => cfg.spatial_gradient = parse_value(key, value)?,
        "trend" => cfg.trend = parse_value(key, value)?,
        "weather_rho" => cfg.weather_rho = parse_value(key, value)?,
        "weather_std" => cfg.weather_std = parse_value(key, value)?,
        "disturbance_std" => cfg.disturbance_std = parse_value(key, value)?,
        "disturbance_rho" => cfg.disturbance_rho = parse_value(key, value)?,
        "disturbance_length" => cfg.disturbance_length = parse_value(key, value)?,
        "diffusion" => cfg.diffusion = parse_value(key, value)?,
        "forcing_pull" => cfg.forcing_pull = parse_value(key, value)?,
        "dynamic_noise" => cfg.dynamic_noise = parse_value(key, value)?,
        "feature_noise" => cfg.feature_noise = parse_value(key, value)?,
        "bulk_time_constant" => cfg.bulk_time_constant = parse_value(key, value)?,
        "bulk_lag" => cfg.bulk_lag = parse_value(key, value)?,
        "mask_rate" => cfg.mask_rate = parse_value(key, value)?,
        "cloud_event_rate" | "cloud_radius" => {
            let clouds = cfg.clouds.get_or_insert(CloudConfig {
                event_rate: 0.01,
                radius: 400.0,
            });
            if key == "cloud_event_rate" {
                clouds.event_rate = parse_value(key, value)?;
            } else {
                clouds.radius = parse_value(key, value)?;
            }
        }
        _ => return apply_adjacency(&mut cfg.adjacency, key, value),
    }
    Ok(true)
}

fn apply_training(cfg: &mut TrainingConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "mode" => cfg.mode = value.parse()?,
        "epochs" => {
            cfg.epochs = if value.eq_ignore_ascii_case("auto") {
                None
            } else {
                Some(parse_value(key, value)?)
            }
        }
        "learning_rate" => cfg.learning_rate = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "alpha_kl" => cfg.alpha_kl = parse_value(key, value)?,
        "scale_kl_per_batch" => cfg.scale_kl_per_batch = parse_bool(key, value)?,
        "prior" => {
            cfg.prior = match value.to_ascii_lowercase().as_str() {
                "gaussian" => Prior::Gaussian { mean: 0.0, std: 1.0 },
                "mixture" => Prior::Mixture {
                    weights: vec![0.5, 0.5],
                    means: vec![0.0, 0.0],
                    stds: vec![1.0, 0.1],
                },
                other => {
                    return Err(Error::Contract(format!(
                        "config key prior: unknown family {other:?} (expected gaussian or mixture)"
                    )))
                }
            }
        }
        "prior_mean" | "prior_std" => match &mut cfg.prior {
            Prior::Gaussian { mean, std } => {
                if key == "prior_mean" {
                    *mean = parse_value(key, value)?;
                } else {
                    *std = parse_value(key, value)?;
                }
            }
            _ => {
                return Err(Error::Contract(format!(
                    "config key {key} applies to the gaussian prior; set prior = gaussian first"
                )))
            }
        },
        "prior_weights" | "prior_means" | "prior_stds" => match &mut cfg.prior {
            Prior::Mixture {
                weights,
                means,
                stds,
            } => match key {
                "prior_weights" => *weights = parse_list(key, value)?,
                "prior_means" => *means = parse_list(key, value)?,
                _ => *stds = parse_list(key, value)?,
            },
            _ => {
                return Err(Error::Contract(format!(
                    "config key {key} applies to the mixture prior; set prior = mixture first"
                )))
            }
        },
        "sharpening" => cfg.sharpening.enabled = parse_bool(key, value)?,
        "sharpening_sigma0" => cfg.sharpening.sigma0 = parse_value(key, value)?,
        "dropout_p" => cfg.dropout_p = parse_value(key, value)?,
        "patience" => cfg.patience = parse_value(key, value)?,
        "max_batches_per_epoch" => {
            cfg.max_batches_per_epoch = if value.eq_ignore_ascii_case("none") {
                None
            } else {
                Some(parse_value(key, value)?)
            }
        }
        "max_val_windows" => {
            cfg.max_val_windows = if value.eq_ignore_ascii_case("none") {
                None
            } else {
                Some(parse_value(key, value)?)
            }
        }
        "seed" => cfg.seed = parse_value(key, value)?,
        "window" => cfg.dims.window = parse_value(key, value)?,
        "horizon" => cfg.dims.horizon = parse_value(key, value)?,
        "lstm1" => cfg.dims.lstm1 = parse_value(key, value)?,
        "lstm2" => cfg.dims.lstm2 = parse_value(key, value)?,
        "graph1" => cfg.dims.graph1 = parse_value(key, value)?,
        "graph2" => cfg.dims.graph2 = parse_value(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// How the dataset timeline is split for training and scoring. The split
/// seed is independent of the model seed so that training and evaluation
/// agree on the held-out span by default.
#[derive(Debug, Clone)]
pub struct SplitSettings {
    /// Held-out test hours at the end of the timeline (default: the later
    /// half).
    pub test_hours: Option<usize>,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            test_hours: None,
            val_fraction: 0.2,
            split_seed: 104_729,
        }
    }
}

impl SplitSettings {
    pub fn resolve(&self, total_hours: usize) -> Result<DatasetSplit> {
        let test_hours = self.test_hours.unwrap_or(total_hours / 2);
        split_weekly(total_hours, test_hours, self.val_fraction, self.split_seed)
    }
}

fn apply_split(cfg: &mut SplitSettings, key: &str, value: &str) -> Result<bool> {
    match key {
        "test_hours" => cfg.test_hours = Some(parse_value(key, value)?),
        "val_fraction" => cfg.val_fraction = parse_value(key, value)?,
        "split_seed" => cfg.split_seed = parse_value(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_eval(cfg: &mut EvalConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "ensemble" => cfg.ensemble = parse_value(key, value)?,
        "coverage" => cfg.coverage = parse_list(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "workers" => cfg.workers = parse_value(key, value)?,
        "paper_verbatim_variance" => cfg.paper_verbatim_variance = parse_bool(key, value)?,
        "dense_truth" => cfg.dense_truth = parse_bool(key, value)?,
        "batch_windows" => cfg.batch_windows = parse_value(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn unknown_key(command: &str, key: &str) -> Error {
    Error::Contract(format!("config key {key} is not recognized by {command}"))
}

// ---------------------------------------------------------------------------
// Commands.

fn cmd_simulate(
    config: Option<&Path>,
    seed: Option<u64>,
    hours: Option<usize>,
    nodes: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut cfg = SyntheticConfig::default();
    for (key, value) in &load_key_values(config)?.entries {
        if !apply_synthetic(&mut cfg, key, value)? {
            return Err(unknown_key("simulate", key));
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(h) = hours {
        cfg.hours = h;
    }
    if let Some(n) = nodes {
        cfg.nodes = n;
    }
    let (ds, _graph) = simulate(&cfg)?;
    ds.save(out)?;
    let valid_fraction =
        ds.valid.data().iter().sum::<f64>() / (ds.hours() * ds.node_count()) as f64;
    println!(
        "nodes={} hours={} valid_fraction={:.4}",
        ds.node_count(),
        ds.hours(),
        valid_fraction
    );
    Ok(())
}

/// Builds the model graph for a dataset from the adjacency keys of a
/// configuration file (defaults to the diffusion kernel).
pub fn graph_from_config(ds: &SpatioTemporalDataset, kv: &KeyValues) -> Result<SpatialGraph> {
    let mut adjacency = default_adjacency();
    for (key, value) in &kv.entries {
        // Non-adjacency keys belong to other appliers of the same command.
        let _ = apply_adjacency(&mut adjacency, key, value)?;
    }
    SpatialGraph::build(ds.nodes.clone(), adjacency)
}

fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    mode: Option<&str>,
    from: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let kv = load_key_values(config)?;
    let mut cfg = TrainingConfig::default();
    let mut split_settings = SplitSettings::default();
    let mut adjacency = default_adjacency();
    for (key, value) in &kv.entries {
        let used = apply_training(&mut cfg, key, value)?
            || apply_split(&mut split_settings, key, value)?
            || apply_adjacency(&mut adjacency, key, value)?;
        if !used {
            return Err(unknown_key("train", key));
        }
    }
    if let Some(m) = mode {
        cfg.mode = m.parse()?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = Some(e);
    }

    let ds = SpatioTemporalDataset::load(data)?;
    cfg.dims.features = ds.channels();
    let split = split_settings.resolve(ds.hours())?;
    let graph = if cfg.mode.needs_graph() {
        Some(SpatialGraph::build(ds.nodes.clone(), adjacency)?)
    } else {
        None
    };
    let source = match (cfg.mode.needs_source(), from) {
        (true, None) => {
            return Err(Error::Contract(format!(
                "mode {} requires --from with the checkpoint to start from",
                cfg.mode
            )))
        }
        (_, Some(path)) => Some(Checkpoint::load(path)?),
        (false, None) => None,
    };

    let outcome = train(&cfg, &ds, &split, graph.as_ref(), source.as_ref())?;
    std::fs::create_dir_all(out)?;
    let tag = cfg.mode.to_string().to_lowercase();
    let ckpt_path = out.join(format!("{tag}.ckpt"));
    let history_path = out.join(format!("{tag}_history.csv"));
    outcome.checkpoint.save(&ckpt_path)?;
    crate::training::save_history_csv(&history_path, &outcome.history)?;
    println!(
        "mode={} epochs={} best_epoch={} best_val_loss={:.6} checkpoint={}",
        cfg.mode,
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_val_loss,
        ckpt_path.display()
    );
    Ok(())
}

/// Shared preparation of predict/evaluate: configuration, dataset, graph,
/// checkpoint, and held-out span.
#[allow(clippy::too_many_arguments)]
fn prepare_evaluation(
    command: &str,
    config: Option<&Path>,
    data: &Path,
    ckpt: &Path,
    seed: Option<u64>,
    ensemble: Option<usize>,
    workers: Option<usize>,
    coverage: Option<&str>,
) -> Result<(Checkpoint, SpatioTemporalDataset, Option<SpatialGraph>, std::ops::Range<usize>, EvalConfig)>
{
    let kv = load_key_values(config)?;
    let mut cfg = EvalConfig {
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..EvalConfig::default()
    };
    let mut split_settings = SplitSettings::default();
    let mut adjacency = default_adjacency();
    for (key, value) in &kv.entries {
        let used = apply_eval(&mut cfg, key, value)?
            || apply_split(&mut split_settings, key, value)?
            || apply_adjacency(&mut adjacency, key, value)?;
        if !used {
            return Err(unknown_key(command, key));
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = ensemble {
        cfg.ensemble = e;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(c) = coverage {
        cfg.coverage = parse_list("coverage", c)?;
    }

    let checkpoint = Checkpoint::load(ckpt)?;
    let ds = SpatioTemporalDataset::load(data)?;
    let split = split_settings.resolve(ds.hours())?;
    let graph = if checkpoint.model == ModelKind::Bstnn {
        Some(SpatialGraph::build(ds.nodes.clone(), adjacency)?)
    } else {
        None
    };
    Ok((checkpoint, ds, graph, split.test, cfg))
}

fn run_evaluation(
    command: &str,
    config: Option<&Path>,
    data: &Path,
    ckpt: &Path,
    seed: Option<u64>,
    ensemble: Option<usize>,
    workers: Option<usize>,
    coverage: Option<&str>,
    paper_verbatim_variance: bool,
    dense_truth: bool,
) -> Result<Evaluation> {
    let (checkpoint, ds, graph, test, mut cfg) = prepare_evaluation(
        command, config, data, ckpt, seed, ensemble, workers, coverage,
    )?;
    cfg.paper_verbatim_variance |= paper_verbatim_variance;
    cfg.dense_truth |= dense_truth;
    evaluate(&checkpoint, &ds, graph.as_ref(), &test, &cfg)
}

fn cmd_predict(
    config: Option<&Path>,
    data: &Path,
    ckpt: &Path,
    seed: Option<u64>,
    ensemble: Option<usize>,
    workers: Option<usize>,
    out: &Path,
) -> Result<()> {
    let eval = run_evaluation(
        "predict", config, data, ckpt, seed, ensemble, workers, None, false, false,
    )?;
    std::fs::create_dir_all(out)?;
    let path = out.join("predictions.csv");
    eval.save_predictions_csv(&path)?;
    println!(
        "hours={} nodes={} predictions={}",
        eval.hours.len(),
        eval.median.shape()[1],
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    config: Option<&Path>,
    data: &Path,
    ckpt: &Path,
    seed: Option<u64>,
    ensemble: Option<usize>,
    workers: Option<usize>,
    coverage: Option<&str>,
    paper_verbatim_variance: bool,
    dense_truth: bool,
    out: &Path,
) -> Result<()> {
    let eval = run_evaluation(
        "evaluate",
        config,
        data,
        ckpt,
        seed,
        ensemble,
        workers,
        coverage,
        paper_verbatim_variance,
        dense_truth,
    )?;
    std::fs::create_dir_all(out)?;
    eval.report.save_json(&out.join("report.json"))?;
    eval.report.save_node_csv(&out.join("nodes.csv"))?;
    eval.save_predictions_csv(&out.join("predictions.csv"))?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "rmse={} r2={} weekly_r2={} picp90={} mpiw90={}",
        fmt(eval.report.rmse_spatial_mean),
        fmt(eval.report.r2_spatial_mean),
        fmt(eval.report.weekly_r2_spatial_mean),
        fmt(eval.report.picp_at(0.9)),
        fmt(eval.report.mpiw_at(0.9)),
    );
    Ok(())
}

fn cmd_plot(input: &Path, data: &Path, only_node: Option<usize>, out: &Path) -> Result<()> {
    let table = read_node_csv(&input.join("nodes.csv"))?;
    let predictions = read_predictions_csv(&input.join("predictions.csv"))?;
    let nodes = load_nodes(data)?;
    std::fs::create_dir_all(out)?;

    let mut written = 0usize;
    for (k, metric) in table.metrics.iter().enumerate() {
        let mut values = vec![None; nodes.len()];
        for (pos, &node) in table.nodes.iter().enumerate() {
            if node >= nodes.len() {
                return Err(Error::Data(format!(
                    "score table references node {node} but the dataset has {}",
                    nodes.len()
                )));
            }
            values[node] = table.columns[k][pos];
        }
        match heatmap_svg(&nodes, &values, metric) {
            Ok(svg) => {
                std::fs::write(out.join(format!("heatmap_{metric}.svg")), svg)?;
                written += 1;
            }
            Err(Error::Domain(_)) => {
                log::warn!("skipping heatmap for {metric}: no defined values");
            }
            Err(e) => return Err(e),
        }
    }

    for (&node, series) in &predictions.series {
        if only_node.is_some_and(|k| k != node) {
            continue;
        }
        let band = predictions
            .levels
            .last()
            .map(|_| {
                let k = predictions.levels.len() - 1;
                (series.lo[k].as_slice(), series.hi[k].as_slice())
            });
        let title = match predictions.levels.last() {
            Some(level) => format!("node {node} · median and {level}% interval"),
            None => format!("node {node} · median"),
        };
        let svg = timeseries_svg(
            &series.hours,
            &series.target,
            &series.valid,
            &series.median,
            band,
            &title,
        )?;
        std::fs::write(out.join(format!("timeseries_node{node}.svg")), svg)?;
        written += 1;
    }
    if let Some(k) = only_node {
        if !predictions.series.contains_key(&k) {
            return Err(Error::Contract(format!(
                "node {k} does not appear in the predictions table"
            )));
        }
    }
    println!("wrote {written} svg files to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainingMode;

    #[test]
    fn key_value_parsing_accepts_comments_and_rejects_garbage() {
        let kv = parse_key_values(
            "# experiment\n\nseed = 7\nmode=PT\n  alpha_kl =0.001\n",
            "test.cfg",
        )
        .unwrap();
        assert_eq!(
            kv.entries,
            [
                ("seed".to_string(), "7".to_string()),
                ("mode".to_string(), "PT".to_string()),
                ("alpha_kl".to_string(), "0.001".to_string()),
            ]
        );
        let err = parse_key_values("seed 7\n", "test.cfg").unwrap_err().to_string();
        assert!(err.contains("test.cfg:1"), "{err}");
    }

    #[test]
    fn training_keys_cover_dims_prior_and_mode() {
        let mut cfg = TrainingConfig::default();
        for (k, v) in [
            ("mode", "JT"),
            ("window", "24"),
            ("horizon", "6"),
            ("prior", "mixture"),
            ("prior_weights", "0.7,0.3"),
            ("prior_stds", "1.0,0.05"),
            ("epochs", "auto"),
            ("max_batches_per_epoch", "40"),
            ("scale_kl_per_batch", "off"),
        ] {
            assert!(apply_training(&mut cfg, k, v).unwrap(), "{k} unused");
        }
        assert_eq!(cfg.mode, TrainingMode::Jt);
        assert_eq!(cfg.dims.window, 24);
        assert_eq!(cfg.dims.horizon, 6);
        assert!(matches!(&cfg.prior, Prior::Mixture { weights, .. } if weights == &[0.7, 0.3]));
        assert_eq!(cfg.epochs, None);
        assert_eq!(cfg.max_batches_per_epoch, Some(40));
        assert!(!cfg.scale_kl_per_batch);
        assert!(!apply_training(&mut cfg, "test_hours", "8736").unwrap());
        assert!(apply_training(&mut cfg, "bogus", "1").is_err() || !apply_training(&mut cfg, "bogus", "1").unwrap());
    }

    #[test]
    fn prior_keys_must_match_family() {
        let mut cfg = TrainingConfig::default();
        assert!(apply_training(&mut cfg, "prior_weights", "0.5,0.5").is_err());
        apply_training(&mut cfg, "prior_std", "0.3").unwrap();
        assert!(matches!(cfg.prior, Prior::Gaussian { std, .. } if std == 0.3));
    }

    #[test]
    fn adjacency_keys_switch_and_configure_rules() {
        let mut adj = default_adjacency();
        assert!(apply_adjacency(&mut adj, "cutoff", "none").unwrap());
        assert!(matches!(adj, AdjacencyConfig::Diffusion { cutoff: None, .. }));
        assert!(apply_adjacency(&mut adj, "adjacency", "threshold").unwrap());
        assert!(apply_adjacency(&mut adj, "radius", "500").unwrap());
        assert!(matches!(adj, AdjacencyConfig::Threshold { radius } if radius == 500.0));
        // Rule/key mismatch is a usage error, not silence.
        assert!(apply_adjacency(&mut adj, "sigma_sq", "10").is_err());
        assert!(!apply_adjacency(&mut adj, "ensemble", "5").unwrap());
    }

    #[test]
    fn eval_and_split_keys_apply() {
        let mut cfg = EvalConfig::default();
        assert!(apply_eval(&mut cfg, "coverage", "0.5, 0.95").unwrap());
        assert_eq!(cfg.coverage, [0.5, 0.95]);
        assert!(apply_eval(&mut cfg, "dense_truth", "yes").unwrap());
        assert!(cfg.dense_truth);
        let mut split = SplitSettings::default();
        assert!(apply_split(&mut split, "test_hours", "336").unwrap());
        let resolved = split.resolve(1000).unwrap();
        assert_eq!(resolved.test, 664..1000);
    }

    #[test]
    fn split_default_holds_out_the_later_half() {
        let split = SplitSettings::default().resolve(17520).unwrap();
        assert_eq!(split.test, 8760..17520);
    }

    #[test]
    fn bad_arguments_are_usage_errors() {
        let err = run_from(["bstnn", "train", "--data"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = run_from(["bstnn", "explode"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
