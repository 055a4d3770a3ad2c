//! Bayesian temporal and spatio-temporal neural networks for probabilistic
//! prediction of scalar fields over a spatial graph.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod params;
pub mod pass;
pub mod plot;
pub mod synthdata;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod variational;
