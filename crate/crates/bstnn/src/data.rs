//! Dataset container, disk format, weekly splits, normalization, and
//! sliding-window extraction.
//!
//! A dataset is an hourly record over a fixed set of spatial nodes:
//! exogenous driver channels per node and hour, a scalar target per node
//! and hour, and a validity flag marking which target entries count as
//! observed. The target tensor may hold dense ground truth even where the
//! flag is zero (a simulator knows the full field); training losses must
//! only ever read flagged entries, while evaluation against dense truth
//! can read everything.
//!
//! On disk a dataset is a directory holding three CSV files plus a JSON
//! manifest:
//!
//! * `features.csv` — `time,node,channel,value`
//! * `targets.csv`  — `time,node,value,valid`
//! * `nodes.csv`    — `node,x,y`
//! * `manifest.json` — dimensions and format version
//!
//! Prediction windows follow one convention throughout: a window is a span
//! of `window` consecutive hours ending at an exclusive anchor `t`; the
//! model consumes the features of the whole span and predicts the targets
//! of its last `horizon` hours, `[t - horizon, t)`. Driver channels are
//! exogenous, so feeding the rows of the predicted hours is legitimate.

use crate::error::{Error, Result};
use crate::graph::Node;
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

/// Hours per calendar week; splits are made on weekly chunks.
pub const HOURS_PER_WEEK: usize = 168;

/// Guard against division by a degenerate standard deviation.
const STD_FLOOR: f64 = 1e-8;

const MANIFEST_FORMAT: &str = "bstnn-dataset";
const MANIFEST_VERSION: u32 = 1;

/// In-memory hourly dataset over a node set.
#[derive(Debug, Clone)]
pub struct SpatioTemporalDataset {
    /// Driver channels, `[hours, nodes, channels]`.
    pub features: Tensor,
    /// Target field, `[hours, nodes]`. May be dense ground truth; entries
    /// with `valid == 0` are unobserved and must never enter a training
    /// loss. Unknown entries are stored as `0.0`.
    pub targets: Tensor,
    /// Observation mask, `[hours, nodes]`, entries `0.0` or `1.0`.
    pub valid: Tensor,
    /// Node coordinates in metres, in tensor order.
    pub nodes: Vec<Node>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    hours: usize,
    nodes: usize,
    channels: usize,
}

impl SpatioTemporalDataset {
    pub fn new(features: Tensor, targets: Tensor, valid: Tensor, nodes: Vec<Node>) -> Result<Self> {
        if features.rank() != 3 {
            return Err(Error::Shape(format!(
                "features must be [hours, nodes, channels], got {:?}",
                features.shape()
            )));
        }
        let (hours, n) = (features.shape()[0], features.shape()[1]);
        if targets.shape() != [hours, n] || valid.shape() != [hours, n] {
            return Err(Error::Shape(format!(
                "targets/valid must be [{hours}, {n}], got {:?} and {:?}",
                targets.shape(),
                valid.shape()
            )));
        }
        if nodes.len() != n {
            return Err(Error::Shape(format!(
                "node list has {} entries but tensors have {n} nodes",
                nodes.len()
            )));
        }
        if features.has_non_finite() || targets.has_non_finite() {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        if valid.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("validity mask entries must be 0 or 1".into()));
        }
        Ok(SpatioTemporalDataset {
            features,
            targets,
            valid,
            nodes,
        })
    }

    pub fn hours(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn node_count(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[2]
    }

    /// Fraction of target entries flagged as observed.
    pub fn valid_fraction(&self) -> f64 {
        let observed: f64 = self.valid.data().iter().sum();
        observed / self.valid.len() as f64
    }

    /// Writes the dataset directory, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            hours: self.hours(),
            nodes: self.node_count(),
            channels: self.channels(),
        };
        let manifest_text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join("manifest.json"), manifest_text + "\n")?;

        let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
        w.write_record(["time", "node", "channel", "value"])?;
        let f = self.features.data();
        let (n, c) = (self.node_count(), self.channels());
        for t in 0..self.hours() {
            for node in 0..n {
                for ch in 0..c {
                    w.write_record([
                        t.to_string(),
                        node.to_string(),
                        ch.to_string(),
                        format_float(f[(t * n + node) * c + ch]),
                    ])?;
                }
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("targets.csv"))?;
        w.write_record(["time", "node", "value", "valid"])?;
        let y = self.targets.data();
        let v = self.valid.data();
        for t in 0..self.hours() {
            for node in 0..n {
                let idx = t * n + node;
                w.write_record([
                    t.to_string(),
                    node.to_string(),
                    format_float(y[idx]),
                    if v[idx] == 1.0 { "1" } else { "0" }.to_string(),
                ])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("nodes.csv"))?;
        w.write_record(["node", "x", "y"])?;
        // The node column is the array index used by the other two files.
        for (i, node) in self.nodes.iter().enumerate() {
            w.write_record([i.to_string(), format_float(node.x), format_float(node.y)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dataset directory written by [`Self::save`].
    ///
    /// An unobserved target row (`valid = 0`) may carry a numeric value —
    /// dense simulator truth — which is kept; it may instead carry an
    /// unparsable or non-finite placeholder (empty, `NaN`), which is
    /// stored as `0.0`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&manifest_text)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Data(format!(
                "unrecognized dataset format {:?}",
                manifest.format
            )));
        }
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset version {}",
                manifest.version
            )));
        }
        let (hours, n, c) = (manifest.hours, manifest.nodes, manifest.channels);
        if hours == 0 || n == 0 || c == 0 {
            return Err(Error::Data("manifest declares an empty dataset".into()));
        }

        let mut features = vec![f64::NAN; hours * n * c];
        let mut rows = 0usize;
        let mut reader = open_csv(&dir.join("features.csv"), &["time", "node", "channel", "value"])?;
        for record in reader.records() {
            let record = record.map_err(Error::from)?;
            let t: usize = parse_field(&record, 0, "time")?;
            let node: usize = parse_field(&record, 1, "node")?;
            let ch: usize = parse_field(&record, 2, "channel")?;
            let value: f64 = parse_field(&record, 3, "value")?;
            if t >= hours || node >= n || ch >= c {
                return Err(Error::Data(format!(
                    "feature index ({t}, {node}, {ch}) outside manifest dimensions"
                )));
            }
            features[(t * n + node) * c + ch] = value;
            rows += 1;
        }
        if rows != hours * n * c || features.iter().any(|v| v.is_nan()) {
            return Err(Error::Data(
                "features.csv does not cover every (time, node, channel) exactly once".into(),
            ));
        }

        let mut targets = vec![0.0; hours * n];
        let mut valid = vec![f64::NAN; hours * n];
        let mut rows = 0usize;
        let mut reader = open_csv(&dir.join("targets.csv"), &["time", "node", "value", "valid"])?;
        for record in reader.records() {
            let record = record.map_err(Error::from)?;
            let t: usize = parse_field(&record, 0, "time")?;
            let node: usize = parse_field(&record, 1, "node")?;
            let flag: u8 = parse_field(&record, 3, "valid")?;
            if t >= hours || node >= n {
                return Err(Error::Data(format!(
                    "target index ({t}, {node}) outside manifest dimensions"
                )));
            }
            if flag > 1 {
                return Err(Error::Data(format!("valid flag must be 0 or 1, got {flag}")));
            }
            let raw = record.get(2).unwrap_or("");
            let parsed: Option<f64> = raw.trim().parse().ok().filter(|v: &f64| v.is_finite());
            let value = match parsed {
                Some(v) => v,
                None if flag == 0 => 0.0,
                None => {
                    return Err(Error::Data(format!(
                        "observed target at ({t}, {node}) has unusable value {raw:?}"
                    )))
                }
            };
            let idx = t * n + node;
            targets[idx] = value;
            valid[idx] = flag as f64;
            rows += 1;
        }
        if rows != hours * n || valid.iter().any(|v| v.is_nan()) {
            return Err(Error::Data(
                "targets.csv does not cover every (time, node) exactly once".into(),
            ));
        }

        let nodes = read_node_records(dir, n)?;

        SpatioTemporalDataset::new(
            Tensor::new(vec![hours, n, c], features)?,
            Tensor::new(vec![hours, n], targets)?,
            Tensor::new(vec![hours, n], valid)?,
            nodes,
        )
    }
}

fn format_float(v: f64) -> String {
    // `{}` on f64 prints the shortest string that parses back to the same
    // bits, so save/load round-trips exactly.
    format!("{v}")
}

fn read_node_records(dir: &Path, n: usize) -> Result<Vec<Node>> {
    let mut nodes: Vec<Option<Node>> = vec![None; n];
    let mut reader = open_csv(&dir.join("nodes.csv"), &["node", "x", "y"])?;
    for record in reader.records() {
        let record = record.map_err(Error::from)?;
        let id: usize = parse_field(&record, 0, "node")?;
        let x: f64 = parse_field(&record, 1, "x")?;
        let y: f64 = parse_field(&record, 2, "y")?;
        if id >= n {
            return Err(Error::Data(format!(
                "node id {id} outside manifest node count {n}"
            )));
        }
        if nodes[id].is_some() {
            return Err(Error::Data(format!("duplicate node id {id}")));
        }
        nodes[id] = Some(Node {
            id: id.to_string(),
            x,
            y,
        });
    }
    nodes
        .into_iter()
        .enumerate()
        .map(|(id, slot)| slot.ok_or_else(|| Error::Data(format!("node id {id} missing"))))
        .collect()
}

/// Reads only the node table of a saved dataset (for plotting, which needs
/// coordinates but not the full feature series).
pub fn load_nodes(dir: &Path) -> Result<Vec<Node>> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    read_node_records(dir, manifest.nodes)
}

fn open_csv(path: &Path, expected_header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers().map_err(Error::from)?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected_header {
        return Err(Error::Data(format!(
            "{} has header {:?}, expected {:?}",
            path.display(),
            got,
            expected_header
        )));
    }
    Ok(reader)
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    index: usize,
    name: &str,
) -> Result<T> {
    let raw = record
        .get(index)
        .ok_or_else(|| Error::Data(format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Data(format!("cannot parse {name} from {raw:?}")))
}

/// Weekly train/validation/test assignment.
///
/// The test span is a contiguous block at the end of the record. The hours
/// before it are divided into consecutive weekly chunks (a trailing
/// partial week forms a short chunk); the chunks are shuffled by seed and
/// partitioned into validation (`floor(chunks × val_fraction)`) and
/// training. Chunk lists are kept sorted by start hour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_chunks: Vec<Range<usize>>,
    pub val_chunks: Vec<Range<usize>>,
    pub test: Range<usize>,
}

pub fn split_weekly(
    total_hours: usize,
    test_hours: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Domain(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    if test_hours == 0 || test_hours >= total_hours {
        return Err(Error::Domain(format!(
            "test span of {test_hours} hours must leave training data within {total_hours}"
        )));
    }
    let head = total_hours - test_hours;
    if head < HOURS_PER_WEEK {
        return Err(Error::Domain(format!(
            "only {head} hours precede the test span; at least one week is required"
        )));
    }
    let mut chunks: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    while start < head {
        let end = (start + HOURS_PER_WEEK).min(head);
        chunks.push(start..end);
        start = end;
    }
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.shuffle(&mut stream(seed, &["weekly-split"]));
    let val_count = ((chunks.len() as f64) * val_fraction).floor() as usize;
    if val_count == chunks.len() {
        return Err(Error::Domain(
            "split leaves no training weeks; lower the validation fraction".into(),
        ));
    }
    let mut val_chunks: Vec<Range<usize>> = order[..val_count]
        .iter()
        .map(|&i| chunks[i].clone())
        .collect();
    let mut train_chunks: Vec<Range<usize>> = order[val_count..]
        .iter()
        .map(|&i| chunks[i].clone())
        .collect();
    val_chunks.sort_by_key(|r| r.start);
    train_chunks.sort_by_key(|r| r.start);
    Ok(DatasetSplit {
        train_chunks,
        val_chunks,
        test: head..total_hours,
    })
}

/// All window anchors whose full span lies inside the union of `chunks`:
/// windows straddling a boundary into excluded hours are discarded.
/// Chunks must be sorted and disjoint; adjacent chunks merge into one
/// contiguous run.
pub fn anchors_in_chunks(chunks: &[Range<usize>], window: usize) -> Vec<usize> {
    let mut anchors = Vec::new();
    let mut run: Option<Range<usize>> = None;
    let flush = |run: &Option<Range<usize>>, anchors: &mut Vec<usize>| {
        if let Some(r) = run {
            if r.len() >= window {
                anchors.extend((r.start + window)..=r.end);
            }
        }
    };
    for chunk in chunks {
        match run {
            Some(ref mut r) if r.end == chunk.start => r.end = chunk.end,
            _ => {
                flush(&run, &mut anchors);
                run = Some(chunk.clone());
            }
        }
    }
    flush(&run, &mut anchors);
    anchors
}

/// Per-channel feature statistics and target statistics fitted on the
/// training chunks, used to standardize inputs and undo the transform on
/// predictions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Normalization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Normalization {
    /// Fits statistics on the hours covered by `chunks`. Feature moments
    /// use every entry; target moments use observed entries only.
    pub fn fit(ds: &SpatioTemporalDataset, chunks: &[Range<usize>]) -> Result<Self> {
        if chunks.is_empty() || chunks.iter().any(|r| r.end > ds.hours() || r.is_empty()) {
            return Err(Error::Domain(format!(
                "invalid fitting ranges {chunks:?} for a dataset of {} hours",
                ds.hours()
            )));
        }
        let (n, c) = (ds.node_count(), ds.channels());
        let f = ds.features.data();
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0.0;
        let y = ds.targets.data();
        let v = ds.valid.data();
        let mut t_mean = 0.0;
        let mut t_sq = 0.0;
        let mut t_count = 0.0;
        for chunk in chunks {
            count += (chunk.len() * n) as f64;
            for t in chunk.clone() {
                for node in 0..n {
                    let row = (t * n + node) * c;
                    for ch in 0..c {
                        let x = f[row + ch];
                        mean[ch] += x;
                        sq[ch] += x * x;
                    }
                    let idx = t * n + node;
                    if v[idx] == 1.0 {
                        t_mean += y[idx];
                        t_sq += y[idx] * y[idx];
                        t_count += 1.0;
                    }
                }
            }
        }
        let mut std = vec![0.0; c];
        for ch in 0..c {
            mean[ch] /= count;
            std[ch] = (sq[ch] / count - mean[ch] * mean[ch]).max(0.0).sqrt();
            std[ch] = std[ch].max(STD_FLOOR);
        }
        if t_count == 0.0 {
            return Err(Error::Data(
                "no observed targets in the training chunks".into(),
            ));
        }
        t_mean /= t_count;
        let t_std = (t_sq / t_count - t_mean * t_mean)
            .max(0.0)
            .sqrt()
            .max(STD_FLOOR);
        Ok(Normalization {
            feature_mean: mean,
            feature_std: std,
            target_mean: t_mean,
            target_std: t_std,
        })
    }

    /// Returns a standardized copy: features per channel, targets with the
    /// target moments. Every target entry is transformed — dense truth
    /// included — so evaluation code can invert uniformly.
    pub fn apply(&self, ds: &SpatioTemporalDataset) -> Result<SpatioTemporalDataset> {
        if self.feature_mean.len() != ds.channels() {
            return Err(Error::Shape(format!(
                "normalization has {} channels, dataset has {}",
                self.feature_mean.len(),
                ds.channels()
            )));
        }
        let c = ds.channels();
        let features: Vec<f64> = ds
            .features
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.feature_mean[i % c]) / self.feature_std[i % c])
            .collect();
        let targets: Vec<f64> = ds
            .targets
            .data()
            .iter()
            .map(|&y| (y - self.target_mean) / self.target_std)
            .collect();
        SpatioTemporalDataset::new(
            Tensor::new(ds.features.shape().to_vec(), features)?,
            Tensor::new(ds.targets.shape().to_vec(), targets)?,
            ds.valid.clone(),
            ds.nodes.clone(),
        )
    }

    /// Maps a standardized prediction back to original units.
    pub fn invert_target(&self, standardized: f64) -> f64 {
        standardized * self.target_std + self.target_mean
    }

    /// Maps a standardized spread (standard deviation or interval width)
    /// back to original units.
    pub fn invert_scale(&self, standardized: f64) -> f64 {
        standardized * self.target_std
    }
}

/// One evaluation window: the model runs on the span ending at `anchor`
/// and the last `write_len` of its `horizon` predictions are written to
/// the hours ending at `anchor`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalWindow {
    pub anchor: usize,
    pub write_len: usize,
}

/// Tiles `test` with prediction blocks of `horizon` hours. Each block ends
/// at its window anchor; the final block is clipped to the range end, so
/// every test hour is predicted exactly once. Window spans may reach back
/// before `test.start` for history.
pub fn eval_windows(test: &Range<usize>, window: usize, horizon: usize) -> Result<Vec<EvalWindow>> {
    if test.is_empty() {
        return Err(Error::Domain("empty evaluation range".into()));
    }
    if horizon == 0 || horizon > window {
        return Err(Error::Domain(format!(
            "horizon {horizon} must lie in [1, window {window}]"
        )));
    }
    if test.start + horizon < window {
        return Err(Error::Domain(format!(
            "first window needs {window} hours of history before hour {}",
            test.start + horizon
        )));
    }
    let mut out = Vec::new();
    let mut block_start = test.start;
    while block_start < test.end {
        let anchor = (block_start + horizon).min(test.end);
        out.push(EvalWindow {
            anchor,
            write_len: anchor - block_start,
        });
        block_start = anchor;
    }
    Ok(out)
}

/// A training batch: inputs `x`, targets `y`, and the observation mask.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub valid: Tensor,
}

/// Gathers a spatio-temporal batch for window anchors: `x` is
/// `[B, window, N, C]`, `y` and `valid` are `[B, horizon, N]`.
pub fn gather_spatial_batch(
    ds: &SpatioTemporalDataset,
    anchors: &[usize],
    window: usize,
    horizon: usize,
) -> Result<Batch> {
    check_anchors(ds, anchors, window, horizon)?;
    let (n, c) = (ds.node_count(), ds.channels());
    let b = anchors.len();
    let f = ds.features.data();
    let mut x = Vec::with_capacity(b * window * n * c);
    for &t in anchors {
        x.extend_from_slice(&f[(t - window) * n * c..t * n * c]);
    }
    let y_all = ds.targets.data();
    let v_all = ds.valid.data();
    let mut y = Vec::with_capacity(b * horizon * n);
    let mut v = Vec::with_capacity(b * horizon * n);
    for &t in anchors {
        y.extend_from_slice(&y_all[(t - horizon) * n..t * n]);
        v.extend_from_slice(&v_all[(t - horizon) * n..t * n]);
    }
    Ok(Batch {
        x: Tensor::new(vec![b, window, n, c], x)?,
        y: Tensor::new(vec![b, horizon, n], y)?,
        valid: Tensor::new(vec![b, horizon, n], v)?,
    })
}

/// Gathers a single-node batch for window anchors: `x` is
/// `[B, window, C]`, `y` and `valid` are `[B, horizon]`.
pub fn gather_node_batch(
    ds: &SpatioTemporalDataset,
    node: usize,
    anchors: &[usize],
    window: usize,
    horizon: usize,
) -> Result<Batch> {
    check_anchors(ds, anchors, window, horizon)?;
    let n = ds.node_count();
    if node >= n {
        return Err(Error::Domain(format!(
            "node {node} outside dataset of {n} nodes"
        )));
    }
    let c = ds.channels();
    let b = anchors.len();
    let f = ds.features.data();
    let mut x = Vec::with_capacity(b * window * c);
    for &t in anchors {
        for step in (t - window)..t {
            let base = (step * n + node) * c;
            x.extend_from_slice(&f[base..base + c]);
        }
    }
    let y_all = ds.targets.data();
    let v_all = ds.valid.data();
    let mut y = Vec::with_capacity(b * horizon);
    let mut v = Vec::with_capacity(b * horizon);
    for &t in anchors {
        for step in (t - horizon)..t {
            y.push(y_all[step * n + node]);
            v.push(v_all[step * n + node]);
        }
    }
    Ok(Batch {
        x: Tensor::new(vec![b, window, c], x)?,
        y: Tensor::new(vec![b, horizon], y)?,
        valid: Tensor::new(vec![b, horizon], v)?,
    })
}

/// Gathers a batch of `(node, anchor)` pairs, each sample taken from its
/// own node: `x` is `[B, window, C]`, `y` and `valid` are `[B, horizon]`.
pub fn gather_pair_batch(
    ds: &SpatioTemporalDataset,
    pairs: &[(usize, usize)],
    window: usize,
    horizon: usize,
) -> Result<Batch> {
    let anchors: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
    check_anchors(ds, &anchors, window, horizon)?;
    let n = ds.node_count();
    let c = ds.channels();
    let b = pairs.len();
    let f = ds.features.data();
    let y_all = ds.targets.data();
    let v_all = ds.valid.data();
    let mut x = Vec::with_capacity(b * window * c);
    let mut y = Vec::with_capacity(b * horizon);
    let mut v = Vec::with_capacity(b * horizon);
    for &(node, t) in pairs {
        if node >= n {
            return Err(Error::Domain(format!(
                "node {node} outside dataset of {n} nodes"
            )));
        }
        for step in (t - window)..t {
            let base = (step * n + node) * c;
            x.extend_from_slice(&f[base..base + c]);
        }
        for step in (t - horizon)..t {
            y.push(y_all[step * n + node]);
            v.push(v_all[step * n + node]);
        }
    }
    Ok(Batch {
        x: Tensor::new(vec![b, window, c], x)?,
        y: Tensor::new(vec![b, horizon], y)?,
        valid: Tensor::new(vec![b, horizon], v)?,
    })
}

fn check_anchors(
    ds: &SpatioTemporalDataset,
    anchors: &[usize],
    window: usize,
    horizon: usize,
) -> Result<()> {
    if anchors.is_empty() {
        return Err(Error::Domain("empty anchor list".into()));
    }
    if horizon == 0 || horizon > window {
        return Err(Error::Domain(format!(
            "horizon {horizon} must lie in [1, window {window}]"
        )));
    }
    for &t in anchors {
        if t < window || t > ds.hours() {
            return Err(Error::Domain(format!(
                "anchor {t} needs {window} hours of history within {} total",
                ds.hours()
            )));
        }
    }
    Ok(())
}
