use statrs::distribution::{ContinuousCDF, Normal};

use super::metrics::ranks;
use crate::{Error, Result};

/// Largest number of nonzero differences handled by the exact null distribution.
pub const EXACT_LIMIT: usize = 25;

/// Two-tailed Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped; tied absolute differences share average
/// ranks. Up to [`EXACT_LIMIT`] pairs the null distribution of `W+` is
/// enumerated exactly (over doubled ranks, so ties stay integral); beyond that
/// a normal approximation with tie and continuity corrections is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n < 5 {
        return Err(Error::TooFewDifferences(n));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let r = ranks(&abs);
    if n <= EXACT_LIMIT {
        let doubled: Vec<usize> = r.iter().map(|v| (2.0 * v).round() as usize).collect();
        let w: usize = doubled.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
        Ok(exact_p(&doubled, w))
    } else {
        let w: f64 = r.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            var -= (t * t * t - t) / 48.0;
            i = j + 1;
        }
        if var <= 0.0 {
            return Ok(1.0);
        }
        let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        Ok((2.0 * (1.0 - normal.cdf(z))).min(1.0))
    }
}

// Distribution of Σ over random sign subsets of the given integer weights.
fn exact_p(weights: &[usize], w: usize) -> f64 {
    let total: usize = weights.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in weights {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}
