//! Collider regression.
//!
//! When the data generating process of a regression problem `(X1, X2) -> Y`
//! contains a collider `Y -> X1 <- X2`, the independence `Y ⟂ X2` forces the
//! optimal regressor to have zero conditional expectation given `X2`. This
//! crate provides estimators that enforce that constraint on least-squares
//! regressors, the graph machinery to find such structures in a causal DAG,
//! and a synthetic benchmark harness measuring the resulting generalisation
//! gains.
//!
//! Module map:
//!
//! - [`graph`]: DAGs, Markov boundaries, d-separation and collider partitions.
//! - [`numerics`]: point sets, jittered Cholesky, seeded RNG streams, Gaussian
//!   sampling and conditioning.
//! - [`kernels`]: Gaussian and collider kernels, projected kernels.
//! - [`cme`]: conditional mean embeddings.
//! - [`regressors`]: kernel ridge, least squares and random forest baselines.
//! - [`collider`]: the projection estimators.
//! - [`datagen`]: synthetic generators with latent-conditioned oracles.
//! - [`harness`]: metrics, Monte-Carlo gap estimates, grid search, Wilcoxon
//!   tests and the experiment runner.

pub mod cme;
pub mod collider;
pub mod datagen;
mod error;
pub mod graph;
pub mod harness;
pub mod kernels;
pub mod numerics;
pub mod regressors;

pub use error::{Error, Result};
pub use numerics::{Matrix, Points};

/// Library version string echoed into experiment summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
