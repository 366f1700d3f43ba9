use serde::{Deserialize, Serialize};

use super::delta::{debiased_square, summarize};
use crate::datagen::{Oracle, SimDataset};
use crate::kernels::{gram_unchecked, ColliderKernel, Kernel};
use crate::numerics::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    /// Lower bound on the expected gap between KRR and its projection.
    pub bound: f64,
    pub standard_error: f64,
    /// Estimate of `E‖μ_{X|X2}(X)‖²`.
    pub embedding_norm: f64,
}

/// `η·E‖μ_{X|X2}(X)‖² / (√n·M + λ/√n)²` for KRR trained on `n` = train rows.
///
/// The expectation `E_X E_X′[(E[k(X, X″) | X2″ = X2′])²]` is estimated with
/// `X` from the test split, `X′` from the oracle-test split (first `n_points`
/// of each) and `m` oracle draws per `X′`.
pub fn theorem_bound(
    ds: &SimDataset,
    kernel: ColliderKernel,
    lambda: f64,
    eta: f64,
    m: usize,
    n_points: usize,
    rng: &mut RngStream,
) -> Result<BoundEstimate> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise floor must be non-negative, got {eta}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("regularizer must be positive, got {lambda}")));
    }
    if m == 0 || n_points == 0 {
        return Err(Error::InvalidParameter("need at least one draw and one point".into()));
    }
    if kernel.dim() != ds.layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "kernel over {} columns for data of dimension {}",
            kernel.dim(),
            ds.layout.dim()
        )));
    }
    if ds.oracle_test.len() < n_points || ds.test.len() < n_points || ds.oracle_test.latents.dim() == 0 {
        return Err(Error::MissingLatents);
    }
    let n = ds.train.len() as f64;
    if n == 0.0 {
        return Err(Error::EmptyData("no training rows".into()));
    }
    let oracle = Oracle::new(ds)?;
    let outer = ds.test.x.head(n_points);
    let mut per_point = Vec::with_capacity(n_points);
    for j in 0..n_points {
        let draws = oracle.draws(ds.oracle_test.latents.row(j), m, rng);
        let k = gram_unchecked(&kernel, &outer, &draws);
        let vals: f64 = (0..n_points)
            .map(|i| {
                let row: Vec<f64> = k.row(i).iter().copied().collect();
                debiased_square(&row, 0.0)
            })
            .sum();
        per_point.push(vals / n_points as f64);
    }
    let (norm, se) = summarize(&per_point);
    let sup = kernel.sup_diag();
    let denom = (n.sqrt() * sup + lambda / n.sqrt()).powi(2);
    Ok(BoundEstimate {
        bound: eta * norm / denom,
        standard_error: eta * se / denom,
        embedding_norm: norm,
    })
}
