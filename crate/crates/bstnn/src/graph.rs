//! Spatial graph construction: adjacency kernels, symmetric normalization,
//! and integrity hashing.
//!
//! Nodes are points in a planar metric (coordinates in meters). Two adjacency
//! builders are provided: a hard distance threshold and a diffusion kernel
//! `exp(-d / sigma^2)` over pairwise distances (optionally `exp(-d^2 / sigma^2)`).
//! The propagation matrix used by graph convolutions is the renormalized
//! `S = D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`,
//! whose spectrum lies in `[-1, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// How edge weights are derived from pairwise distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdjacencyConfig {
    /// Unit edge between nodes strictly closer than `radius` (self-distances
    /// excluded).
    Threshold { radius: f64 },
    /// Diffusion weight `exp(-d / sigma_sq)`, or `exp(-d^2 / sigma_sq)` when
    /// `squared` is set. Weights below `cutoff` (if given) are dropped.
    Diffusion {
        sigma_sq: f64,
        #[serde(default)]
        squared: bool,
        #[serde(default)]
        cutoff: Option<f64>,
    },
}

impl Default for AdjacencyConfig {
    fn default() -> Self {
        AdjacencyConfig::Diffusion {
            sigma_sq: 1000.0,
            squared: false,
            cutoff: None,
        }
    }
}

impl AdjacencyConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            AdjacencyConfig::Threshold { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Domain(format!(
                        "threshold radius must be positive, got {radius}"
                    )));
                }
            }
            AdjacencyConfig::Diffusion {
                sigma_sq, cutoff, ..
            } => {
                if !(*sigma_sq > 0.0) {
                    return Err(Error::Domain(format!(
                        "diffusion sigma_sq must be positive, got {sigma_sq}"
                    )));
                }
                if let Some(c) = cutoff {
                    if !(*c >= 0.0) {
                        return Err(Error::Domain(format!(
                            "diffusion cutoff must be non-negative, got {c}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One named node with planar coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// Immutable spatial structure shared by a dataset and its models.
#[derive(Clone, Debug)]
pub struct SpatialGraph {
    nodes: Vec<Node>,
    config: AdjacencyConfig,
    adjacency: Tensor,
    propagation: Tensor,
}

/// Pairwise Euclidean distance matrix.
pub fn pairwise_distances(nodes: &[Node]) -> Tensor {
    let n = nodes.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = nodes[i].x - nodes[j].x;
            let dy = nodes[i].y - nodes[j].y;
            let dist = (dx * dx + dy * dy).sqrt();
            d[i * n + j] = dist;
            d[j * n + i] = dist;
        }
    }
    Tensor::new(vec![n, n], d).expect("n*n buffer")
}

/// Weighted adjacency from a distance matrix; the diagonal is always zero.
pub fn build_adjacency(distances: &Tensor, config: &AdjacencyConfig) -> Result<Tensor> {
    config.validate()?;
    let n = distances.shape()[0];
    if distances.shape() != [n, n] {
        return Err(Error::Shape(format!(
            "distance matrix must be square, got {:?}",
            distances.shape()
        )));
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = distances.data()[i * n + j];
            a[i * n + j] = match config {
                AdjacencyConfig::Threshold { radius } => {
                    if d > 0.0 && d < *radius {
                        1.0
                    } else {
                        0.0
                    }
                }
                AdjacencyConfig::Diffusion {
                    sigma_sq,
                    squared,
                    cutoff,
                } => {
                    let arg = if *squared { d * d } else { d };
                    let w = (-arg / sigma_sq).exp();
                    match cutoff {
                        Some(c) if w < *c => 0.0,
                        _ => w,
                    }
                }
            };
        }
    }
    Tensor::new(vec![n, n], a)
}

/// Renormalized propagation matrix `S = D^{-1/2} (A + I) D^{-1/2}` where `D`
/// is the degree matrix of `A + I`.
pub fn normalize_adjacency(adjacency: &Tensor) -> Result<Tensor> {
    let n = adjacency.shape()[0];
    if adjacency.shape() != [n, n] {
        return Err(Error::Shape(format!(
            "adjacency must be square, got {:?}",
            adjacency.shape()
        )));
    }
    let a = adjacency.data();
    for i in 0..n {
        for j in 0..n {
            if a[i * n + j] < 0.0 {
                return Err(Error::Domain(format!(
                    "adjacency weights must be non-negative, found {} at ({i}, {j})",
                    a[i * n + j]
                )));
            }
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "adjacency must be symmetric, differs at ({i}, {j})"
                )));
            }
        }
    }
    // Degrees of A + I are at least 1, so the inverse square roots exist.
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = 1.0 + (0..n).map(|j| a[i * n + j]).sum::<f64>();
        inv_sqrt_deg[i] = 1.0 / deg.sqrt();
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let aug = a[i * n + j] + if i == j { 1.0 } else { 0.0 };
            s[i * n + j] = inv_sqrt_deg[i] * aug * inv_sqrt_deg[j];
        }
    }
    Tensor::new(vec![n, n], s)
}

impl SpatialGraph {
    /// Builds the graph for a node set under an adjacency configuration.
    pub fn build(nodes: Vec<Node>, config: AdjacencyConfig) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Data("graph needs at least one node".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for node in &nodes {
            if !seen.insert(node.id.as_str()) {
                return Err(Error::Data(format!("duplicate node id '{}'", node.id)));
            }
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(Error::Data(format!(
                    "node '{}' has non-finite coordinates",
                    node.id
                )));
            }
        }
        let distances = pairwise_distances(&nodes);
        let adjacency = build_adjacency(&distances, &config)?;
        let propagation = normalize_adjacency(&adjacency)?;
        Ok(SpatialGraph {
            nodes,
            config,
            adjacency,
            propagation,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn config(&self) -> &AdjacencyConfig {
        &self.config
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    /// The normalized propagation matrix used by graph convolutions.
    pub fn propagation(&self) -> &Tensor {
        &self.propagation
    }

    /// SHA-256 over node ids, coordinates, and the adjacency configuration;
    /// checkpoints store it so a model is only ever applied to the graph it
    /// was trained on.
    pub fn sha256_hex(&self) -> String {
        let mut hasher = Sha256::new();
        for node in &self.nodes {
            hasher.update(node.id.as_bytes());
            hasher.update([0u8]);
            hasher.update(node.x.to_le_bytes());
            hasher.update(node.y.to_le_bytes());
        }
        let config = serde_json::to_string(&self.config).expect("config serializes");
        hasher.update(config.as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Power-iteration estimate of the spectral radius of the propagation
    /// matrix.
    pub fn spectral_radius_estimate(&self, iterations: usize) -> f64 {
        let n = self.len();
        let mut v = Tensor::full(&[n, 1], 1.0 / (n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let w = self.propagation.matmul(&v).expect("square matrix");
            let norm = w.square().sum().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = w.scale(1.0 / norm);
        }
        lambda
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn two_nodes() -> Vec<Node> {
        vec![
            Node {
                id: "a".into(),
                x: 0.0,
                y: 0.0,
            },
            Node {
                id: "b".into(),
                x: 3.0,
                y: 4.0,
            },
        ]
    }

    #[test]
    fn pairwise_distances_are_euclidean_and_symmetric() {
        let d = pairwise_distances(&two_nodes());
        assert_eq!(d.get(&[0, 0]).unwrap(), 0.0);
        assert_eq!(d.get(&[0, 1]).unwrap(), 5.0);
        assert_eq!(d.get(&[1, 0]).unwrap(), 5.0);
    }

    #[test]
    fn diffusion_kernel_worked_examples() {
        // d = sigma_sq gives e^-1; sigma_sq = 1000 and d = 3000 gives e^-3.
        let nodes = vec![
            Node { id: "a".into(), x: 0.0, y: 0.0 },
            Node { id: "b".into(), x: 1000.0, y: 0.0 },
            Node { id: "c".into(), x: 3000.0, y: 0.0 },
        ];
        let d = pairwise_distances(&nodes);
        let a = build_adjacency(
            &d,
            &AdjacencyConfig::Diffusion {
                sigma_sq: 1000.0,
                squared: false,
                cutoff: None,
            },
        )
        .unwrap();
        assert_relative_eq!(a.get(&[0, 1]).unwrap(), (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(a.get(&[0, 2]).unwrap(), (-3.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(a.get(&[0, 2]).unwrap(), 0.049787, max_relative = 1e-4);
        assert_eq!(a.get(&[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn squared_variant_and_cutoff_apply() {
        let nodes = vec![
            Node { id: "a".into(), x: 0.0, y: 0.0 },
            Node { id: "b".into(), x: 10.0, y: 0.0 },
            Node { id: "c".into(), x: 40.0, y: 0.0 },
        ];
        let d = pairwise_distances(&nodes);
        let a = build_adjacency(
            &d,
            &AdjacencyConfig::Diffusion {
                sigma_sq: 100.0,
                squared: true,
                cutoff: Some(1e-4),
            },
        )
        .unwrap();
        assert_relative_eq!(a.get(&[0, 1]).unwrap(), (-1.0f64).exp(), max_relative = 1e-12);
        // exp(-1600/100) = e^-16 < 1e-4 is cut to zero.
        assert_eq!(a.get(&[0, 2]).unwrap(), 0.0);
    }

    #[test]
    fn threshold_adjacency_is_strict_on_both_ends() {
        let nodes = vec![
            Node { id: "a".into(), x: 0.0, y: 0.0 },
            Node { id: "b".into(), x: 1.0, y: 0.0 },
            Node { id: "c".into(), x: 2.0, y: 0.0 },
            Node { id: "d".into(), x: 0.0, y: 0.0 }, // coincides with a
        ];
        let d = pairwise_distances(&nodes);
        let a = build_adjacency(&d, &AdjacencyConfig::Threshold { radius: 2.0 }).unwrap();
        assert_eq!(a.get(&[0, 1]).unwrap(), 1.0);
        // d = radius exactly is excluded.
        assert_eq!(a.get(&[0, 2]).unwrap(), 0.0);
        // Zero distance between distinct nodes is excluded.
        assert_eq!(a.get(&[0, 3]).unwrap(), 0.0);
    }

    #[test]
    fn normalization_worked_example() {
        // Two fully connected nodes: S is constant 1/2.
        let a = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = normalize_adjacency(&a).unwrap();
        for v in s.data() {
            assert_relative_eq!(*v, 0.5, max_relative = 1e-14);
        }
    }

    #[test]
    fn normalization_rejects_asymmetric_or_negative_weights() {
        let asym = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.5, 0.0]).unwrap();
        assert!(normalize_adjacency(&asym).is_err());
        let neg = Tensor::new(vec![2, 2], vec![0.0, -1.0, -1.0, 0.0]).unwrap();
        assert!(normalize_adjacency(&neg).is_err());
    }

    #[test]
    fn isolated_node_keeps_identity_row() {
        let a = Tensor::new(vec![3, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let s = normalize_adjacency(&a).unwrap();
        assert_relative_eq!(s.get(&[2, 2]).unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(s.get(&[2, 0]).unwrap(), 0.0);
    }

    #[test]
    fn propagation_spectral_radius_is_at_most_one() {
        let mut rng = crate::rng::stream(9, &["graph-spectral"]);
        for trial in 0..5 {
            let nodes: Vec<Node> = (0..12)
                .map(|i| Node {
                    id: format!("n{i}"),
                    x: rng.gen_range(0.0..2000.0),
                    y: rng.gen_range(0.0..1000.0),
                })
                .collect();
            let graph = SpatialGraph::build(
                nodes,
                AdjacencyConfig::Diffusion {
                    sigma_sq: 700.0,
                    squared: false,
                    cutoff: None,
                },
            )
            .unwrap();
            let radius = graph.spectral_radius_estimate(200);
            assert!(radius <= 1.0 + 1e-9, "trial {trial}: spectral radius {radius}");
            // The all-ones direction keeps it close to 1 in practice.
            assert!(radius > 0.5, "trial {trial}: spectral radius {radius}");
        }
    }

    #[test]
    fn build_validates_nodes() {
        let mut nodes = two_nodes();
        nodes.push(Node {
            id: "a".into(),
            x: 1.0,
            y: 1.0,
        });
        assert!(SpatialGraph::build(nodes, AdjacencyConfig::default()).is_err());
        assert!(SpatialGraph::build(Vec::new(), AdjacencyConfig::default()).is_err());
        let bad = vec![Node {
            id: "n".into(),
            x: f64::NAN,
            y: 0.0,
        }];
        assert!(SpatialGraph::build(bad, AdjacencyConfig::default()).is_err());
    }

    #[test]
    fn hash_tracks_nodes_and_config() {
        let g1 = SpatialGraph::build(two_nodes(), AdjacencyConfig::default()).unwrap();
        let g2 = SpatialGraph::build(two_nodes(), AdjacencyConfig::default()).unwrap();
        assert_eq!(g1.sha256_hex(), g2.sha256_hex());
        let g3 = SpatialGraph::build(
            two_nodes(),
            AdjacencyConfig::Threshold { radius: 10.0 },
        )
        .unwrap();
        assert_ne!(g1.sha256_hex(), g3.sha256_hex());
        let mut moved = two_nodes();
        moved[1].x += 1.0;
        let g4 = SpatialGraph::build(moved, AdjacencyConfig::default()).unwrap();
        assert_ne!(g1.sha256_hex(), g4.sha256_hex());
    }

    #[test]
    fn config_validation() {
        assert!(AdjacencyConfig::Threshold { radius: 0.0 }.validate().is_err());
        assert!(AdjacencyConfig::Diffusion {
            sigma_sq: -1.0,
            squared: false,
            cutoff: None
        }
        .validate()
        .is_err());
        assert!(AdjacencyConfig::default().validate().is_ok());
    }
}
