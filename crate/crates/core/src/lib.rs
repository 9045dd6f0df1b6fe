//! Supervised superpoint partitioning.
//!
//! The pipeline learns per-vertex unit-sphere embeddings with a
//! graph-structured contrastive loss, partitions the adjacency graph by
//! approximately minimizing a piecewise-constant Potts energy with an
//! l0 cut-pursuit solver, and scores the result with oversegmentation
//! metrics (undersegmentation error, oracle accuracy, boundary
//! recall/precision).

pub mod cloud;
pub mod config;
pub mod embed;
pub mod gmpp;
pub mod graph;
pub mod loss;
pub mod metrics;

mod error;

pub use error::{Error, Result};
