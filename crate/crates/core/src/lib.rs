//! Graph dataset distillation by structural attention matching.
//!
//! The crate condenses a graph-classification dataset into a handful of
//! synthetic graphs with learnable node features and Bernoulli-parameterized
//! adjacencies, by matching the per-layer structural attention maps of
//! randomly re-initialized GNNs fed with real and synthetic batches. No GNN
//! training happens during distillation; a fresh random parameter draw is
//! used at every step.
//!
//! Modules:
//! - [`autodiff`]: dense-matrix reverse-mode automatic differentiation
//! - [`data`]: graphs, datasets, TU/JSON ingestion, splits, class batching
//! - [`models`]: GCN and GIN classifiers exposing per-layer feature maps
//! - [`stam`]: structural attention maps and the two distillation losses
//! - [`distill`]: the distillation loop over synthetic features and logits
//! - [`coreset`]: Random / Herding / K-Center selection baselines
//! - [`eval`]: train-on-condensed / test-on-real evaluation protocol

pub mod autodiff;
pub mod coreset;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod models;
pub mod seeds;
pub mod stam;

pub use error::{Error, Result};
