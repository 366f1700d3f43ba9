use serde::{Deserialize, Serialize};

use crate::datagen::{Oracle, SimDataset};
use crate::numerics::RngStream;
use crate::regressors::Predictor;
use crate::{Error, Result};

/// Monte-Carlo estimate of a squared conditional-expectation norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub delta_hat: f64,
    pub standard_error: f64,
    pub m: usize,
    pub n_test: usize,
}

// Mean as `first + Σ(v − first)/n`: exact when every value is equal.
pub(crate) fn shifted_mean(v: &[f64]) -> f64 {
    let first = v[0];
    first + v.iter().map(|x| x - first).sum::<f64>() / v.len() as f64
}

// Squared mean of `v − shift` minus the Monte-Carlo variance of that mean.
pub(crate) fn debiased_square(v: &[f64], shift: f64) -> f64 {
    let m = v.len();
    let mu = shifted_mean(v);
    let centered = mu - shift;
    if m < 2 {
        return centered * centered;
    }
    let s2 = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (m - 1) as f64;
    centered * centered - s2 / m as f64
}

pub(crate) fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mu = shifted_mean(values);
    if n < 2 {
        return (mu, f64::NAN);
    }
    let var = values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1) as f64;
    (mu, (var / n as f64).sqrt())
}

fn check(ds: &SimDataset, m: usize, n_test: usize) -> Result<()> {
    if m == 0 || n_test == 0 {
        return Err(Error::InvalidParameter("need at least one inner draw and one outer point".into()));
    }
    if ds.oracle_test.len() < n_test || ds.oracle_test.latents.dim() == 0 {
        return Err(Error::MissingLatents);
    }
    Ok(())
}

fn estimate<P, F>(h: &P, ds: &SimDataset, m: usize, n_test: usize, rng: &mut RngStream, shift: F) -> Result<DeltaEstimate>
where
    P: Predictor + ?Sized,
    F: Fn(usize) -> f64,
{
    check(ds, m, n_test)?;
    let oracle = Oracle::new(ds)?;
    let mut per_point = Vec::with_capacity(n_test);
    for j in 0..n_test {
        let draws = oracle.draws(ds.oracle_test.latents.row(j), m, rng);
        let v = h.predict(&draws)?;
        per_point.push(debiased_square(&v, shift(j)));
    }
    let (delta_hat, standard_error) = summarize(&per_point);
    Ok(DeltaEstimate {
        delta_hat,
        standard_error,
        m,
        n_test,
    })
}

/// `‖E h‖²` over the first `n_test` oracle-test rows with `m` inner draws each.
pub fn delta_mc<P: Predictor + ?Sized>(
    h: &P,
    ds: &SimDataset,
    m: usize,
    n_test: usize,
    rng: &mut RngStream,
) -> Result<DeltaEstimate> {
    estimate(h, ds, m, n_test, rng, |_| 0.0)
}

/// `‖E′h − f̂0‖²`, where `E′` conditions on the second and third blocks and
/// `f̂0` is evaluated at each oracle-test row.
pub fn delta_mc_general<P, Q>(
    h: &P,
    f0_hat: &Q,
    ds: &SimDataset,
    m: usize,
    n_test: usize,
    rng: &mut RngStream,
) -> Result<DeltaEstimate>
where
    P: Predictor + ?Sized,
    Q: Predictor + ?Sized,
{
    check(ds, m, n_test)?;
    let f0 = f0_hat.predict(&ds.oracle_test.x.head(n_test))?;
    estimate(h, ds, m, n_test, rng, |j| f0[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{simulate_general, simulate_seeded, GeneralScales, GeneratorModel, Layout, SplitSizes};
    use crate::numerics::Points;
    use crate::regressors::FnPredictor;

    fn sizes() -> SplitSizes {
        SplitSizes {
            train: 10,
            semi: 0,
            validation: 0,
            test: 0,
            oracle_test: 100,
        }
    }

    #[test]
    fn constant_is_exact() {
        let ds = simulate_seeded(2, 2, 0.1, &sizes(), 3).unwrap();
        for c in [0.0, 0.1, -1.7, 3.3e5] {
            let h = FnPredictor(move |_: &[f64]| c);
            let est = delta_mc(&h, &ds, 7, 100, &mut RngStream::new(1, 10)).unwrap();
            assert_eq!(est.delta_hat, c * c);
        }
    }

    #[test]
    fn function_of_conditioning_block() {
        let ds = simulate_seeded(2, 2, 0.1, &sizes(), 4).unwrap();
        let h = FnPredictor(|x: &[f64]| x[2].sin() + x[3]);
        let est = delta_mc(&h, &ds, 5, 100, &mut RngStream::new(2, 10)).unwrap();
        let direct: f64 =
            ds.oracle_test.x.rows().map(|r| (r[2].sin() + r[3]).powi(2)).sum::<f64>() / 100.0;
        assert!((est.delta_hat - direct).abs() < 1e-12);
    }

    #[test]
    fn general_first_stage_cancels() {
        let layout = Layout { d1: 2, d2: 2, d3: 2 };
        let ds = simulate_general(layout, &GeneralScales::default(), 0.1, &sizes(), 5).unwrap();
        let beta = match &ds.model {
            GeneratorModel::General(c) => c.beta.clone(),
            _ => unreachable!(),
        };
        let b = beta.clone();
        let f0 = FnPredictor(move |x: &[f64]| b[0] * x[4] + b[1] * x[5]);
        let est = delta_mc_general(&f0, &f0, &ds, 10, 100, &mut RngStream::new(3, 10)).unwrap();
        assert!(est.delta_hat.abs() < 1e-12);
        let c = FnPredictor(|_: &[f64]| 1.5);
        let zero = FnPredictor(|_: &[f64]| 0.0);
        let est = delta_mc_general(&c, &zero, &ds, 10, 100, &mut RngStream::new(3, 10)).unwrap();
        assert_eq!(est.delta_hat, 2.25);
    }

    #[test]
    fn requires_latents() {
        let mut ds = simulate_seeded(1, 1, 0.1, &sizes(), 1).unwrap();
        let h = FnPredictor(|_: &[f64]| 1.0);
        assert!(matches!(delta_mc(&h, &ds, 3, 101, &mut RngStream::new(1, 10)), Err(Error::MissingLatents)));
        ds.oracle_test.latents = Points::empty(0);
        assert!(delta_mc(&h, &ds, 3, 10, &mut RngStream::new(1, 10)).is_err());
    }

    #[test]
    fn debiasing() {
        assert_eq!(debiased_square(&[2.0], 0.0), 4.0);
        // mean 1, sample variance 2, so 1 − 2/2
        assert!((debiased_square(&[0.0, 2.0], 0.0)).abs() < 1e-15);
    }
}
