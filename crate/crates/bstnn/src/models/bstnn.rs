//! Spatio-temporal Bayesian network: the shared temporal stack feeds two
//! Bayesian graph convolutions over the spatial graph and a dense readout.
//!
//! Parameter names of the temporal stack deliberately coincide with the
//! temporal model's, so a pretrained temporal group can be transferred into
//! this model by name.

use super::{step_slices_4d, ModelDims};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::layers::{
    dense_apply, dense_apply_values, lstm_sequence, lstm_sequence_values, BayesianDense,
    BayesianGraphConv, BayesianLstm,
};
use crate::params::{ParamGroup, ParamStore};
use crate::pass::{Pass, WeightBinder};
use crate::rng::NoiseSource;
use crate::tensor::tape::Var;
use crate::tensor::{graph_conv_forward, stack, Tensor};
use crate::variational::VariationalWeight;
use rand::Rng;

/// Spatio-temporal model over a fixed node set.
pub struct BstnnModel {
    pub dims: ModelDims,
    pub lstm1: BayesianLstm,
    pub lstm2: BayesianLstm,
    pub conv1: BayesianGraphConv,
    pub conv2: BayesianGraphConv,
    pub head: BayesianDense,
}

impl BstnnModel {
    /// Registers all parameters in `store` and assembles the model.
    pub fn build(
        store: &mut ParamStore,
        dims: ModelDims,
        sharpened: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        dims.validate()?;
        let lstm1 = BayesianLstm::new(
            store,
            "temporal.lstm1",
            ParamGroup::Temporal,
            dims.features,
            dims.lstm1,
            sharpened,
            rng,
        )?;
        let lstm2 = BayesianLstm::new(
            store,
            "temporal.lstm2",
            ParamGroup::Temporal,
            dims.lstm1,
            dims.lstm2,
            sharpened,
            rng,
        )?;
        let conv1 = BayesianGraphConv::new(
            store,
            "spatial.conv1",
            ParamGroup::Spatial,
            dims.lstm2,
            dims.graph1,
            sharpened,
            rng,
        )?;
        let conv2 = BayesianGraphConv::new(
            store,
            "spatial.conv2",
            ParamGroup::Spatial,
            dims.graph1,
            dims.graph2,
            sharpened,
            rng,
        )?;
        let head = BayesianDense::new(
            store,
            "spatial_head.out",
            ParamGroup::SpatialHead,
            dims.graph2,
            1,
            sharpened,
            rng,
        )?;
        Ok(BstnnModel {
            dims,
            lstm1,
            lstm2,
            conv1,
            conv2,
            head,
        })
    }

    /// All variational weights in binding order.
    pub fn variational_weights(&self) -> Vec<&VariationalWeight> {
        let mut out: Vec<&VariationalWeight> = Vec::new();
        out.extend(self.lstm1.weights());
        out.extend(self.lstm2.weights());
        out.push(&self.conv1.theta);
        out.push(&self.conv2.theta);
        out.extend(self.head.weights());
        out
    }

    fn check_input(&self, x: &Tensor, graph: &SpatialGraph) -> Result<()> {
        if x.rank() != 4
            || x.shape()[1] != self.dims.window
            || x.shape()[2] != graph.len()
            || x.shape()[3] != self.dims.features
        {
            return Err(Error::Shape(format!(
                "expected input [batch, {}, {}, {}], got {:?}",
                self.dims.window,
                graph.len(),
                self.dims.features,
                x.shape()
            )));
        }
        if x.shape()[0] == 0 {
            return Err(Error::Shape("batch must not be empty".into()));
        }
        Ok(())
    }

    /// Spatial stage on the tape: `[P, B, N, lstm2]` features to `[B, P, N]`
    /// predictions.
    fn spatial_on_tape(
        &self,
        pass: &mut Pass,
        binder: &mut dyn WeightBinder,
        graph: &SpatialGraph,
        features: Var,
        b: usize,
    ) -> Result<Var> {
        let p = self.dims.horizon;
        let n = graph.len();
        let t1 = self.conv1.bind(pass, binder)?;
        let t2 = self.conv2.bind(pass, binder)?;
        let vh = self.head.bind(pass, binder)?;

        let s = graph.propagation();
        let z1 = self.conv1.apply(&mut pass.tape, s, t1, features)?;
        let a1 = pass.tape.relu(z1)?;
        let z2 = self.conv2.apply(&mut pass.tape, s, t2, a1)?;
        let a2 = pass.tape.relu(z2)?; // [P, B, N, G2]

        let flat = pass.tape.reshape(a2, &[p * b * n, self.dims.graph2])?;
        let out = dense_apply(&mut pass.tape, &vh, flat)?;
        let grid = pass.tape.reshape(out, &[p, b, n])?;
        pass.tape.permute(grid, &[1, 0, 2]) // [B, P, N]
    }

    /// Fully traced forward pass: `[B, window, N, features]` to `[B, horizon, N]`.
    ///
    /// Weights are drawn once per pass in the fixed order lstm1, lstm2,
    /// conv1, conv2, head.
    pub fn forward_on_tape(
        &self,
        pass: &mut Pass,
        binder: &mut dyn WeightBinder,
        graph: &SpatialGraph,
        x: &Tensor,
    ) -> Result<Var> {
        self.check_input(x, graph)?;
        let (b, n) = (x.shape()[0], graph.len());
        let p = self.dims.horizon;

        let v1 = self.lstm1.bind(pass, binder)?;
        let v2 = self.lstm2.bind(pass, binder)?;

        let xs: Vec<Var> = step_slices_4d(x)?
            .into_iter()
            .map(|s| pass.tape.input(s))
            .collect();
        let h1 = lstm_sequence(&mut pass.tape, &v1, self.dims.lstm1, &xs)?;
        let h2 = lstm_sequence(&mut pass.tape, &v2, self.dims.lstm2, &h1)?;

        let tail = &h2[h2.len() - p..];
        let stacked = pass.tape.stack(tail)?; // [P, B*N, H2]
        let features = pass
            .tape
            .reshape(stacked, &[p, b, n, self.dims.lstm2])?;
        self.spatial_on_tape(pass, binder, graph, features, b)
    }

    /// Forward pass with a frozen, untraced temporal stage: temporal weights
    /// are drawn from `temporal_noise` (same order as the traced pass) and
    /// their computation stays off the tape; only the spatial stage records
    /// gradients.
    pub fn forward_frozen_temporal(
        &self,
        pass: &mut Pass,
        binder: &mut dyn WeightBinder,
        temporal_noise: &mut dyn NoiseSource,
        graph: &SpatialGraph,
        x: &Tensor,
    ) -> Result<Var> {
        self.check_input(x, graph)?;
        let (b, n) = (x.shape()[0], graph.len());
        let p = self.dims.horizon;

        let v1 = self.lstm1.sample_values(pass.store(), temporal_noise)?;
        let v2 = self.lstm2.sample_values(pass.store(), temporal_noise)?;
        let xs = step_slices_4d(x)?;
        let h1 = lstm_sequence_values(&v1, self.dims.lstm1, &xs)?;
        let h2 = lstm_sequence_values(&v2, self.dims.lstm2, &h1)?;
        let stacked = stack(&h2[h2.len() - p..])?;
        let features_value = stacked.reshape(&[p, b, n, self.dims.lstm2])?;

        let features = pass.tape.input(features_value);
        self.spatial_on_tape(pass, binder, graph, features, b)
    }

    /// Untraced forward pass with the same arithmetic and noise order as
    /// [`Self::forward_on_tape`].
    pub fn forward_values(
        &self,
        store: &ParamStore,
        noise: &mut dyn NoiseSource,
        graph: &SpatialGraph,
        x: &Tensor,
    ) -> Result<Tensor> {
        self.check_input(x, graph)?;
        let (b, n) = (x.shape()[0], graph.len());
        let p = self.dims.horizon;

        let v1 = self.lstm1.sample_values(store, noise)?;
        let v2 = self.lstm2.sample_values(store, noise)?;
        let t1 = self.conv1.sample_values(store, noise)?;
        let t2 = self.conv2.sample_values(store, noise)?;
        let vh = self.head.sample_values(store, noise)?;

        let xs = step_slices_4d(x)?;
        let h1 = lstm_sequence_values(&v1, self.dims.lstm1, &xs)?;
        let h2 = lstm_sequence_values(&v2, self.dims.lstm2, &h1)?;
        let stacked = stack(&h2[h2.len() - p..])?;
        let features = stacked.reshape(&[p, b, n, self.dims.lstm2])?;

        let s = graph.propagation();
        let (z1, _) = graph_conv_forward(s, &features, &t1)?;
        let a1 = z1.relu();
        let (z2, _) = graph_conv_forward(s, &a1, &t2)?;
        let a2 = z2.relu();

        let flat = a2.reshape(&[p * b * n, self.dims.graph2])?;
        let out = dense_apply_values(&vh, &flat)?;
        out.reshape(&[p, b, n])?.permute(&[1, 0, 2]) // [B, P, N]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AdjacencyConfig, Node};
    use crate::pass::StandardBinder;
    use crate::rng::{stream, CountingNoise, GaussianNoise, ZeroNoise};

    fn small_dims() -> ModelDims {
        ModelDims {
            features: 2,
            lstm1: 3,
            lstm2: 4,
            graph1: 5,
            graph2: 4,
            window: 5,
            horizon: 2,
        }
    }

    fn small_graph() -> SpatialGraph {
        let nodes = vec![
            Node { id: "a".into(), x: 0.0, y: 0.0 },
            Node { id: "b".into(), x: 500.0, y: 0.0 },
            Node { id: "c".into(), x: 0.0, y: 800.0 },
        ];
        SpatialGraph::build(
            nodes,
            AdjacencyConfig::Diffusion {
                sigma_sq: 1000.0,
                squared: false,
                cutoff: None,
            },
        )
        .unwrap()
    }

    fn build_model() -> (ParamStore, BstnnModel) {
        let mut store = ParamStore::new();
        let mut rng = stream(51, &["bstnn-init"]);
        let model = BstnnModel::build(&mut store, small_dims(), true, &mut rng).unwrap();
        (store, model)
    }

    fn random_input(b: usize, dims: &ModelDims, n: usize, tag: &str) -> Tensor {
        let mut noise = GaussianNoise::new(stream(52, &[tag]));
        noise.standard_normal(&[b, dims.window, n, dims.features])
    }

    #[test]
    fn forward_shape_and_validation() {
        let (store, model) = build_model();
        let graph = small_graph();
        let x = random_input(2, &model.dims, graph.len(), "shape");
        let mut pass = Pass::new(&store, |_| true);
        let mut noise = ZeroNoise;
        let mut binder = StandardBinder { noise: &mut noise };
        let out = model
            .forward_on_tape(&mut pass, &mut binder, &graph, &x)
            .unwrap();
        assert_eq!(pass.tape.value(out).shape(), &[2, 2, 3]);
        // Node-count mismatch.
        let bad = Tensor::zeros(&[2, 5, 4, 2]);
        assert!(model
            .forward_values(&store, &mut ZeroNoise, &graph, &bad)
            .is_err());
    }

    #[test]
    fn traced_and_untraced_forwards_agree() {
        let (store, model) = build_model();
        let graph = small_graph();
        let x = random_input(3, &model.dims, graph.len(), "eq");
        let mut pass = Pass::new(&store, |_| true);
        let mut noise_a = GaussianNoise::new(stream(8, &["fw"]));
        let mut binder = StandardBinder {
            noise: &mut noise_a,
        };
        let traced = model
            .forward_on_tape(&mut pass, &mut binder, &graph, &x)
            .unwrap();
        let mut noise_b = GaussianNoise::new(stream(8, &["fw"]));
        let untraced = model.forward_values(&store, &mut noise_b, &graph, &x).unwrap();
        assert_eq!(pass.tape.value(traced).data(), untraced.data());
    }

    #[test]
    fn one_noise_draw_per_weight_per_forward() {
        let (store, model) = build_model();
        let graph = small_graph();
        let x = random_input(2, &model.dims, graph.len(), "count");
        let mut counting = CountingNoise::new(ZeroNoise);
        model
            .forward_values(&store, &mut counting, &graph, &x)
            .unwrap();
        // lstm1 w/u/b + lstm2 w/u/b + conv1 + conv2 + head w/b = 10.
        assert_eq!(counting.count(), 10);
        assert_eq!(counting.count(), model.variational_weights().len());
    }

    #[test]
    fn frozen_temporal_forward_matches_composed_reference() {
        let (store, model) = build_model();
        let graph = small_graph();
        let x = random_input(2, &model.dims, graph.len(), "pt");

        // Reference: untraced forward whose noise source replays the same two
        // streams in sequence (temporal first, spatial second).
        struct TwoPhase<A, B> {
            first: A,
            second: B,
            taken: usize,
        }
        impl<A: NoiseSource, B: NoiseSource> NoiseSource for TwoPhase<A, B> {
            fn standard_normal(&mut self, shape: &[usize]) -> Tensor {
                self.taken += 1;
                if self.taken <= 6 {
                    self.first.standard_normal(shape)
                } else {
                    self.second.standard_normal(shape)
                }
            }
        }
        let mut reference_noise = TwoPhase {
            first: GaussianNoise::new(stream(61, &["temporal"])),
            second: GaussianNoise::new(stream(62, &["spatial"])),
            taken: 0,
        };
        let expected = model
            .forward_values(&store, &mut reference_noise, &graph, &x)
            .unwrap();

        let mut pass = Pass::new(&store, |m| {
            matches!(
                m.group,
                ParamGroup::Spatial | ParamGroup::SpatialHead
            )
        });
        let mut temporal_noise = GaussianNoise::new(stream(61, &["temporal"]));
        let mut spatial_noise = GaussianNoise::new(stream(62, &["spatial"]));
        let mut binder = StandardBinder {
            noise: &mut spatial_noise,
        };
        let out = model
            .forward_frozen_temporal(&mut pass, &mut binder, &mut temporal_noise, &graph, &x)
            .unwrap();
        assert_eq!(pass.tape.value(out).data(), expected.data());

        // Gradients exist only for spatial-side parameters.
        let sq = pass.tape.square(out).unwrap();
        let loss = pass.tape.mean(sq).unwrap();
        let grads = pass.tape.backward(loss).unwrap();
        let pg = pass.parameter_gradients(&grads);
        // conv1 mu/rho + conv2 mu/rho + head w mu/rho + head b mu/rho.
        assert_eq!(pg.len(), 8);
        for (id, _) in &pg {
            let group = store.meta(*id).group;
            assert!(matches!(
                group,
                ParamGroup::Spatial | ParamGroup::SpatialHead
            ));
        }
    }

    #[test]
    fn temporal_names_align_with_temporal_model() {
        // The transfer path copies the temporal group by name.
        let (bstnn_store, _) = build_model();
        let mut btnn_store = ParamStore::new();
        let mut rng = stream(53, &["btnn"]);
        super::super::BtnnModel::build(&mut btnn_store, small_dims(), true, &mut rng).unwrap();
        let temporal_names: Vec<String> = bstnn_store
            .ids_in(|g| g == ParamGroup::Temporal)
            .map(|id| bstnn_store.meta(id).name.clone())
            .collect();
        assert!(!temporal_names.is_empty());
        for name in temporal_names {
            assert!(
                btnn_store.by_name(&name).is_some(),
                "temporal parameter '{name}' missing from the temporal model"
            );
        }
    }
}
