//! Synthetic spatio-temporal oracle: a physically flavored toy lake whose
//! surface temperature field evolves by graph diffusion plus relaxation
//! toward a seasonal/diurnal forcing, observed through a sparse
//! satellite-like validity mask.
//!
//! The generator keeps dense ground truth in the target tensor and marks
//! only a small fraction of entries as observed, so training sees sparse
//! data while evaluation can score against the full field.
//!
//! Feature channels, in order:
//!
//! 0. air temperature — the common forcing signal plus noise
//! 1. wind proxy — an exogenous AR(1) distractor plus noise
//! 2. radiation proxy — daylight times season factor plus noise
//! 3. bulk temperature — the target low-pass filtered (first-order,
//!    configurable time constant) and lagged, plus noise

use crate::data::SpatioTemporalDataset;
use crate::error::{Error, Result};
use crate::graph::{AdjacencyConfig, Node, SpatialGraph};
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Number of feature channels the generator emits.
pub const CHANNELS: usize = 4;

/// Wind distractor AR(1) parameters (fixed; the channel carries no signal
/// about the target, it exists to test robustness to irrelevant inputs).
const WIND_RHO: f64 = 0.95;
const WIND_STD: f64 = 0.5;

/// Optional spatially correlated blanking: each hour, with probability
/// `event_rate`, one disc of `radius` metres around a random node is
/// marked unobserved on top of the Bernoulli mask.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CloudConfig {
    pub event_rate: f64,
    pub radius: f64,
}

/// Full description of a synthetic world.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Simulated hours.
    pub hours: usize,
    /// Candidate lattice dimensions across the lake bounding box.
    pub grid_x: usize,
    pub grid_y: usize,
    /// Exact number of nodes kept (a seeded subsample of the lattice
    /// points that fall inside the lake boundary).
    pub nodes: usize,
    /// Lake half-axes in metres (elliptical boundary).
    pub half_length: f64,
    pub half_width: f64,
    /// Lattice jitter as a fraction of the cell size.
    pub jitter: f64,
    /// Forcing: mean level plus seasonal and diurnal sinusoids.
    pub base_temp: f64,
    pub seasonal_amplitude: f64,
    pub seasonal_period: f64,
    pub diurnal_amplitude: f64,
    /// Smooth along-lake offset added to the forcing (amplitude at the
    /// lake tips).
    pub spatial_gradient: f64,
    /// Linear warming of the forcing, in degrees per 8760 hours. A held-out
    /// final span then sits slightly outside the training distribution, as
    /// a fresh year of real measurements would.
    pub trend: f64,
    /// Shared AR(1) weather deviation on the forcing.
    pub weather_rho: f64,
    pub weather_std: f64,
    /// Slowly varying regional disturbance: a zero-mean temperature offset
    /// on the forcing, AR(1) in time with the given stationary standard
    /// deviation and autocorrelation, and smooth in space (Gaussian kernel
    /// of the given length scale, in metres). Patches of upwelling or
    /// mixing behave this way: nearby stations share the offset, so a
    /// node's neighbours carry information about it that the node's own
    /// history cannot provide — real structure for spatial models to use.
    pub disturbance_std: f64,
    pub disturbance_rho: f64,
    pub disturbance_length: f64,
    /// Diffusion strength kappa applied to adjacency-weighted neighbor
    /// differences.
    pub diffusion: f64,
    /// Relaxation rate gamma pulling the field toward the forcing.
    pub forcing_pull: f64,
    /// Node-local process noise on the update.
    pub dynamic_noise: f64,
    /// Observation noise on the feature channels.
    pub feature_noise: f64,
    /// Bulk channel: first-order low-pass time constant (hours) and lag.
    pub bulk_time_constant: f64,
    pub bulk_lag: usize,
    /// Probability that a (time, node) target entry is observed.
    pub mask_rate: f64,
    /// Optional cloud-like blanking on top of the Bernoulli mask.
    pub clouds: Option<CloudConfig>,
    /// Adjacency rule for the dynamics (and for models trained on the
    /// emitted node set).
    pub adjacency: AdjacencyConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            hours: 17520,
            grid_x: 9,
            grid_y: 5,
            nodes: 30,
            half_length: 1250.0,
            half_width: 625.0,
            jitter: 0.3,
            base_temp: 12.0,
            seasonal_amplitude: 8.0,
            seasonal_period: 8760.0,
            diurnal_amplitude: 1.5,
            spatial_gradient: 1.0,
            trend: 2.0,
            weather_rho: 0.98,
            weather_std: 0.3,
            disturbance_std: 1.5,
            disturbance_rho: 0.995,
            disturbance_length: 2000.0,
            diffusion: 0.05,
            forcing_pull: 0.1,
            dynamic_noise: 0.05,
            feature_noise: 0.45,
            bulk_time_constant: 72.0,
            bulk_lag: 24,
            mask_rate: 0.05,
            clouds: None,
            // The cutoff zeroes kernel weights below 0.45, which for
            // sigma_sq = 1000 keeps neighbours within roughly 800 m.
            adjacency: AdjacencyConfig::Diffusion {
                sigma_sq: 1000.0,
                squared: false,
                cutoff: Some(0.45),
            },
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hours < 36 {
            return Err(Error::Domain(format!(
                "simulation of {} hours is shorter than one model window",
                self.hours
            )));
        }
        if self.nodes == 0 || self.grid_x == 0 || self.grid_y == 0 {
            return Err(Error::Domain("node lattice must be non-empty".into()));
        }
        if self.half_length <= 0.0 || self.half_width <= 0.0 {
            return Err(Error::Domain("lake half-axes must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return Err(Error::Domain(format!(
                "jitter must lie in [0, 0.5], got {}",
                self.jitter
            )));
        }
        if !(0.0 < self.mask_rate && self.mask_rate <= 1.0) {
            return Err(Error::Domain(format!(
                "mask rate must lie in (0, 1], got {}",
                self.mask_rate
            )));
        }
        if self.seasonal_period <= 0.0 || self.bulk_time_constant <= 0.0 {
            return Err(Error::Domain(
                "seasonal period and bulk time constant must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.weather_rho) {
            return Err(Error::Domain(format!(
                "weather autocorrelation must lie in [0, 1), got {}",
                self.weather_rho
            )));
        }
        if !(0.0..1.0).contains(&self.disturbance_rho) {
            return Err(Error::Domain(format!(
                "disturbance autocorrelation must lie in [0, 1), got {}",
                self.disturbance_rho
            )));
        }
        if self.disturbance_length <= 0.0 {
            return Err(Error::Domain(
                "disturbance length scale must be positive".into(),
            ));
        }
        if self.diffusion < 0.0
            || !(0.0..=1.0).contains(&self.forcing_pull)
            || self.dynamic_noise < 0.0
            || self.weather_std < 0.0
            || self.disturbance_std < 0.0
            || self.feature_noise < 0.0
        {
            return Err(Error::Domain(
                "rates and noise scales must be non-negative (forcing pull at most 1)".into(),
            ));
        }
        self.adjacency.validate()?;
        Ok(())
    }
}

/// Lays out the node set: lattice cell centres over the bounding box,
/// jittered, kept if inside the ellipse, then subsampled to exactly
/// `config.nodes` points.
pub fn layout_nodes(config: &SyntheticConfig) -> Result<Vec<Node>> {
    config.validate()?;
    let mut rng = stream(config.seed, &["synth-layout"]);
    let cell_w = 2.0 * config.half_length / config.grid_x as f64;
    let cell_h = 2.0 * config.half_width / config.grid_y as f64;
    let mut candidates = Vec::new();
    for j in 0..config.grid_y {
        for i in 0..config.grid_x {
            let cx = -config.half_length + (i as f64 + 0.5) * cell_w;
            let cy = -config.half_width + (j as f64 + 0.5) * cell_h;
            let jx: f64 = rng.gen_range(-1.0..1.0) * config.jitter * cell_w;
            let jy: f64 = rng.gen_range(-1.0..1.0) * config.jitter * cell_h;
            let (x, y) = (cx + jx, cy + jy);
            let r = (x / config.half_length).powi(2) + (y / config.half_width).powi(2);
            if r <= 1.0 {
                candidates.push((x, y));
            }
        }
    }
    if candidates.len() < config.nodes {
        return Err(Error::Domain(format!(
            "lattice yields {} in-lake points but {} nodes requested; enlarge the grid",
            candidates.len(),
            config.nodes
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut rng);
    let mut keep: Vec<usize> = order[..config.nodes].to_vec();
    keep.sort_unstable();
    Ok(keep
        .into_iter()
        .enumerate()
        .map(|(id, k)| Node {
            id: id.to_string(),
            x: candidates[k].0,
            y: candidates[k].1,
        })
        .collect())
}

fn seasonal(config: &SyntheticConfig, t: f64) -> f64 {
    -config.seasonal_amplitude * (2.0 * PI * t / config.seasonal_period).cos()
}

fn diurnal(config: &SyntheticConfig, t: f64) -> f64 {
    -config.diurnal_amplitude * (2.0 * PI * t / 24.0).cos()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix given in row-major order.
fn cholesky(n: usize, k: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(k.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = k[i * n + j];
            for p in 0..j {
                sum -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numeric(
                        "disturbance kernel is not positive definite".into(),
                    ));
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// One spatially correlated Gaussian draw: `scale * L * eps` with `L` the
/// kernel's Cholesky factor.
fn correlated_draw(rng: &mut impl Rng, chol: &[f64], n: usize, scale: f64) -> Vec<f64> {
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..n)
        .map(|i| scale * (0..=i).map(|j| chol[i * n + j] * eps[j]).sum::<f64>())
        .collect()
}

/// Cholesky factor of the Gaussian-kernel correlation between node
/// positions, used to draw spatially smooth disturbance innovations. A tiny
/// diagonal jitter keeps the factorization robust for near-duplicate
/// points.
fn disturbance_factor(nodes: &[Node], length: f64) -> Result<Vec<f64>> {
    let n = nodes.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dx = nodes[i].x - nodes[j].x;
            let dy = nodes[i].y - nodes[j].y;
            let d2 = dx * dx + dy * dy;
            k[i * n + j] = (-d2 / (length * length)).exp();
        }
        k[i * n + i] += 1e-9;
    }
    cholesky(n, &k)
}

/// Runs the world and returns the dataset (dense truth, sparse mask) and
/// the spatial graph it evolved on.
pub fn simulate(config: &SyntheticConfig) -> Result<(SpatioTemporalDataset, SpatialGraph)> {
    config.validate()?;
    let nodes = layout_nodes(config)?;
    let graph = SpatialGraph::build(nodes.clone(), config.adjacency.clone())?;
    let n = nodes.len();
    let t_total = config.hours;
    let adj = graph.adjacency().data();

    // Stability: the explicit update must stay a convex combination of
    // the current field and the forcing, which is exactly the maximum
    // principle for this scheme.
    let max_degree = (0..n)
        .map(|i| (0..n).map(|j| adj[i * n + j]).sum::<f64>())
        .fold(0.0, f64::max);
    if config.diffusion * max_degree + config.forcing_pull > 1.0 {
        return Err(Error::Domain(format!(
            "unstable dynamics: diffusion {} x max degree {max_degree:.3} plus pull {} exceeds 1",
            config.diffusion, config.forcing_pull
        )));
    }

    let offsets: Vec<f64> = nodes
        .iter()
        .map(|node| config.spatial_gradient * node.x / config.half_length)
        .collect();

    let mut weather_rng = stream(config.seed, &["synth-weather"]);
    let mut wind_rng = stream(config.seed, &["synth-wind"]);
    let mut dyn_rng = stream(config.seed, &["synth-dyn"]);
    let mut feat_rng = stream(config.seed, &["synth-feat"]);
    let mut dist_rng = stream(config.seed, &["synth-dist"]);

    // Regional disturbance state, started from its stationary distribution.
    let chol = disturbance_factor(&nodes, config.disturbance_length)?;
    let mut disturbance = correlated_draw(&mut dist_rng, &chol, n, config.disturbance_std);
    let innovation_std =
        config.disturbance_std * (1.0 - config.disturbance_rho * config.disturbance_rho).sqrt();

    // State at t = 0: local forcing without the diurnal cycle.
    let mut u: Vec<f64> = offsets
        .iter()
        .zip(&disturbance)
        .map(|(o, d)| config.base_temp + seasonal(config, 0.0) + o + d)
        .collect();
    let mut bulk = u.clone();
    let alpha = (-1.0 / config.bulk_time_constant).exp();

    let mut weather = 0.0;
    let mut wind: f64 = 0.0;

    let mut targets = Vec::with_capacity(t_total * n);
    let mut bulk_series = Vec::with_capacity(t_total * n);
    let mut features = vec![0.0; t_total * n * CHANNELS];

    for t in 0..t_total {
        let tf = t as f64;
        let f_common = config.base_temp
            + seasonal(config, tf)
            + diurnal(config, tf)
            + weather
            + config.trend * tf / 8760.0;
        let daylight = (-(2.0 * PI * tf / 24.0).cos()).max(0.0);
        let season_factor = 0.5 - 0.5 * (2.0 * PI * tf / config.seasonal_period).cos();
        let radiation = daylight * season_factor;

        targets.extend_from_slice(&u);
        for (node, b) in bulk.iter_mut().enumerate() {
            *b = alpha * *b + (1.0 - alpha) * u[node];
        }
        bulk_series.extend_from_slice(&bulk);

        for node in 0..n {
            let base = (t * n + node) * CHANNELS;
            let e_air: f64 = feat_rng.sample(StandardNormal);
            let e_wind: f64 = feat_rng.sample(StandardNormal);
            let e_rad: f64 = feat_rng.sample(StandardNormal);
            features[base] = f_common + config.feature_noise * e_air;
            features[base + 1] = wind + config.feature_noise * e_wind;
            features[base + 2] = radiation + config.feature_noise * e_rad;
            // The bulk channel is filled after the loop once the lag can
            // be applied.
        }

        // Advance the field.
        let mut next = vec![0.0; n];
        for node in 0..n {
            let mut exchange = 0.0;
            for j in 0..n {
                exchange += adj[node * n + j] * (u[j] - u[node]);
            }
            let e: f64 = dyn_rng.sample(StandardNormal);
            next[node] = u[node]
                + config.diffusion * exchange
                + config.forcing_pull * (f_common + offsets[node] + disturbance[node] - u[node])
                + config.dynamic_noise * e;
        }
        u = next;

        let e_w: f64 = weather_rng.sample(StandardNormal);
        weather = config.weather_rho * weather + config.weather_std * e_w;
        let e_v: f64 = wind_rng.sample(StandardNormal);
        wind = WIND_RHO * wind + WIND_STD * e_v;
        let innovation = correlated_draw(&mut dist_rng, &chol, n, innovation_std);
        for (d, inn) in disturbance.iter_mut().zip(innovation) {
            *d = config.disturbance_rho * *d + inn;
        }
    }

    // Bulk channel: lagged low-pass series plus noise.
    for t in 0..t_total {
        let src = t.saturating_sub(config.bulk_lag);
        for node in 0..n {
            let e: f64 = feat_rng.sample(StandardNormal);
            features[(t * n + node) * CHANNELS + 3] =
                bulk_series[src * n + node] + config.feature_noise * e;
        }
    }

    let dense = SpatioTemporalDataset::new(
        Tensor::new(vec![t_total, n, CHANNELS], features)?,
        Tensor::new(vec![t_total, n], targets)?,
        Tensor::full(&[t_total, n], 1.0),
        nodes,
    )?;
    let mut masked = apply_mask(&dense, config.mask_rate, config.seed)?;
    if let Some(clouds) = &config.clouds {
        masked = apply_cloud_blanking(&masked, clouds, config.seed)?;
    }
    Ok((masked, graph))
}

/// Replaces the validity mask with independent Bernoulli draws: each
/// (time, node) entry is observed with probability `mask_rate`. Target
/// values are untouched, so dense truth stays available.
pub fn apply_mask(
    ds: &SpatioTemporalDataset,
    mask_rate: f64,
    seed: u64,
) -> Result<SpatioTemporalDataset> {
    if !(0.0 < mask_rate && mask_rate <= 1.0) {
        return Err(Error::Domain(format!(
            "mask rate must lie in (0, 1], got {mask_rate}"
        )));
    }
    let mut rng = stream(seed, &["synth-mask"]);
    let valid: Vec<f64> = (0..ds.targets.len())
        .map(|_| if rng.gen::<f64>() < mask_rate { 1.0 } else { 0.0 })
        .collect();
    SpatioTemporalDataset::new(
        ds.features.clone(),
        ds.targets.clone(),
        Tensor::new(ds.valid.shape().to_vec(), valid)?,
        ds.nodes.clone(),
    )
}

/// Adds spatially correlated blanking: each hour, with probability
/// `event_rate`, every node within `radius` of a randomly chosen centre
/// node is marked unobserved.
pub fn apply_cloud_blanking(
    ds: &SpatioTemporalDataset,
    clouds: &CloudConfig,
    seed: u64,
) -> Result<SpatioTemporalDataset> {
    if !(0.0..=1.0).contains(&clouds.event_rate) || clouds.radius < 0.0 {
        return Err(Error::Domain(format!(
            "cloud event rate must lie in [0, 1] and radius be non-negative, got {clouds:?}"
        )));
    }
    let n = ds.node_count();
    let mut rng = stream(seed, &["synth-clouds"]);
    let mut valid = ds.valid.data().to_vec();
    for t in 0..ds.hours() {
        if rng.gen::<f64>() >= clouds.event_rate {
            continue;
        }
        let centre = rng.gen_range(0..n);
        let (cx, cy) = (ds.nodes[centre].x, ds.nodes[centre].y);
        for node in 0..n {
            let dx = ds.nodes[node].x - cx;
            let dy = ds.nodes[node].y - cy;
            if (dx * dx + dy * dy).sqrt() <= clouds.radius {
                valid[t * n + node] = 0.0;
            }
        }
    }
    SpatioTemporalDataset::new(
        ds.features.clone(),
        ds.targets.clone(),
        Tensor::new(ds.valid.shape().to_vec(), valid)?,
        ds.nodes.clone(),
    )
}
