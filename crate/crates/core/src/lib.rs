//! Bayesian ensemble trees.
//!
//! An infinite Dirichlet-process mixture whose components are Bayesian CART
//! trees. Each tree is grown on the observations currently assigned to it by a
//! node-by-node Metropolis-within-Gibbs sweep on the leaf-marginalized
//! likelihood; assignments, stick-breaking weights and slice variables are
//! then refreshed by a blocked Gibbs step. The highest-scoring post-burn-in
//! state is kept for prediction and variable ranking.
//!
//! Module map:
//! - [`data`]: datasets, CSV ingestion, simulation generators, splits
//! - [`tree`]: heap-indexed binary trees, routing, sufficient statistics
//! - [`likelihood`]: priors, marginal likelihoods, conditional draws
//! - [`sampler`]: the per-tree Gibbs sweep
//! - [`mixture`]: sticks, slices, assignments, cluster births
//! - [`inference`]: chain driver, best-ensemble selection, predictors, metrics

pub mod data;
pub mod error;
pub mod inference;
pub mod likelihood;
pub mod mixture;
pub mod rng;
pub mod sampler;
pub mod tree;

pub use data::{Dataset, OutcomeKind, SplitBy, Study};
pub use error::{BetError, Result};
pub use inference::{
    evaluate, run_chain, select_best, ChainConfig, ChainOutput, EnsembleSnapshot, Metrics,
    PredictMode, Prediction, Trace, TraceRow,
};
pub use likelihood::{LeafError, LeafPrior};
pub use mixture::{Cluster, MixtureState};
pub use sampler::{SweepReport, TreeSampler};
pub use tree::{LeafParams, LeafStats, Node, Tree, TreeError};
