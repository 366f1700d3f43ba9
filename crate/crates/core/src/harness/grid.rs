use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::regressors::ForestParams;
use crate::{Error, Result};

/// Value lists per hyperparameter. An empty list leaves that axis unused.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default)]
    pub theta1: Vec<f64>,
    #[serde(default)]
    pub theta2: Vec<f64>,
    #[serde(default)]
    pub theta3: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub forest: Vec<ForestParams>,
}

/// One grid point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub theta3: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub forest: Option<ForestParams>,
}

fn axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().cloned().map(Some).collect()
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta1", &self.theta1),
            ("theta2", &self.theta2),
            ("theta3", &self.theta3),
            ("lambda", &self.lambda),
            ("gamma", &self.gamma),
        ] {
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} values must be positive, got {bad}")));
            }
        }
        Ok(())
    }

    /// Cartesian product of the used axes in the order θ1, θ2, θ3, γ, λ,
    /// forest, the first varying slowest.
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for t1 in axis(&self.theta1) {
            for t2 in axis(&self.theta2) {
                for t3 in axis(&self.theta3) {
                    for g in axis(&self.gamma) {
                        for l in axis(&self.lambda) {
                            for f in axis(&self.forest) {
                                out.push(Candidate {
                                    theta1: t1,
                                    theta2: t2,
                                    theta3: t3,
                                    lambda: l,
                                    gamma: g,
                                    forest: f.clone(),
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn opt_cmp(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(a), Some(b)) => a.total_cmp(&b),
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

// Greater means more regularized.
fn forest_cmp(a: &Option<ForestParams>, b: &Option<ForestParams>) -> Ordering {
    match (a, b) {
        (Some(a), Some(b)) => {
            let depth = |p: &ForestParams| p.max_depth.map_or(usize::MAX, |d| d);
            depth(b)
                .cmp(&depth(a))
                .then(a.min_samples_leaf.cmp(&b.min_samples_leaf))
                .then(a.min_samples_split.cmp(&b.min_samples_split))
                .then(a.n_estimators.cmp(&b.n_estimators))
                .then(a.bootstrap.cmp(&b.bootstrap))
        }
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

/// Orders candidates from most to least regularized.
pub fn regularization_order(a: &Candidate, b: &Candidate) -> Ordering {
    opt_cmp(b.lambda, a.lambda)
        .then(opt_cmp(b.gamma, a.gamma))
        .then(opt_cmp(b.theta1, a.theta1))
        .then(opt_cmp(b.theta2, a.theta2))
        .then(opt_cmp(b.theta3, a.theta3))
        .then(forest_cmp(&b.forest, &a.forest))
}

#[derive(Debug, Clone)]
pub struct GridResult<T> {
    pub best: Candidate,
    pub mse: f64,
    pub fitted: T,
    pub evaluated: usize,
    pub failed: usize,
}

/// Evaluates every candidate with `eval`, which returns the validation MSE
/// and whatever it fitted, and keeps the minimum. Exact ties go to the more
/// regularized candidate, so the result does not depend on candidate order.
/// Failed fits and non-finite scores are skipped.
pub fn grid_search_cv<T, F>(candidates: &[Candidate], mut eval: F) -> Result<GridResult<T>>
where
    F: FnMut(&Candidate) -> Result<(f64, T)>,
{
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let mut best: Option<(Candidate, f64, T)> = None;
    let mut failed = 0;
    for c in candidates {
        match eval(c) {
            Ok((mse, fitted)) if mse.is_finite() => {
                let better = match &best {
                    None => true,
                    Some((bc, bm, _)) => match mse.total_cmp(bm) {
                        Ordering::Less => true,
                        Ordering::Equal => regularization_order(c, bc) == Ordering::Less,
                        Ordering::Greater => false,
                    },
                };
                if better {
                    best = Some((c.clone(), mse, fitted));
                }
            }
            _ => failed += 1,
        }
    }
    let (best, mse, fitted) = best.ok_or(Error::GridExhausted)?;
    Ok(GridResult {
        best,
        mse,
        fitted,
        evaluated: candidates.len(),
        failed,
    })
}

/// Selection over scores already computed, with the same tie-break.
pub fn select_best(scored: &[(Candidate, f64)]) -> Result<(Candidate, f64)> {
    let r = grid_search_cv(
        &scored.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>(),
        |c| {
            scored
                .iter()
                .find(|(d, _)| d == c)
                .map(|(_, m)| (*m, ()))
                .ok_or(Error::GridExhausted)
        },
    )?;
    Ok((r.best, r.mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn product_size_and_unused_axes() {
        let g = GridSpec {
            theta1: vec![1.0, 2.0],
            lambda: vec![0.1, 1.0, 10.0],
            ..Default::default()
        };
        let c = g.candidates();
        assert_eq!(c.len(), 6);
        assert!(c.iter().all(|c| c.gamma.is_none() && c.theta2.is_none()));
        assert_eq!(GridSpec::default().candidates().len(), 1);
        let bad = GridSpec {
            gamma: vec![0.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_point() {
        let c = Candidate {
            lambda: Some(0.3),
            ..Default::default()
        };
        let r = grid_search_cv(&[c.clone()], |_| Ok((1.0, 7))).unwrap();
        assert_eq!(r.best, c);
        assert_eq!(r.fitted, 7);
    }

    #[test]
    fn all_failed() {
        let c = GridSpec {
            lambda: vec![1.0, 2.0],
            ..Default::default()
        }
        .candidates();
        let r = grid_search_cv(&c, |_| -> Result<(f64, ())> { Err(Error::GridExhausted) });
        assert!(matches!(r, Err(Error::GridExhausted)));
        let r = grid_search_cv(&c, |c| if c.lambda == Some(1.0) { Ok((f64::NAN, ())) } else { Ok((2.0, ())) })
            .unwrap();
        assert_eq!(r.failed, 1);
        assert_eq!(r.best.lambda, Some(2.0));
    }

    #[test]
    fn ties_prefer_regularization() {
        let c = GridSpec {
            theta1: vec![1.0, 3.0],
            lambda: vec![0.1, 1.0],
            gamma: vec![0.01, 0.1],
            ..Default::default()
        }
        .candidates();
        let r = grid_search_cv(&c, |_| Ok((1.0, ()))).unwrap();
        assert_eq!((r.best.lambda, r.best.gamma, r.best.theta1), (Some(1.0), Some(0.1), Some(3.0)));
        let f = GridSpec {
            forest: vec![
                ForestParams { max_depth: None, ..Default::default() },
                ForestParams { max_depth: Some(4), ..Default::default() },
                ForestParams { max_depth: Some(8), ..Default::default() },
            ],
            ..Default::default()
        }
        .candidates();
        let r = grid_search_cv(&f, |_| Ok((1.0, ()))).unwrap();
        assert_eq!(r.best.forest.unwrap().max_depth, Some(4));
    }

    #[test]
    fn order_invariant() {
        let grid = GridSpec {
            theta1: vec![0.5, 1.0, 2.0],
            lambda: vec![1e-3, 1e-2, 1e-1],
            gamma: vec![0.1, 1.0],
            ..Default::default()
        };
        let mut c = grid.candidates();
        // coarse scores so ties occur
        let score = |c: &Candidate| ((c.theta1.unwrap() - 1.0).abs() * 2.0).round();
        let reference = grid_search_cv(&c, |c| Ok((score(c), ()))).unwrap().best;
        let mut rng = RngStream::new(9, 0);
        for _ in 0..50 {
            for i in (1..c.len()).rev() {
                let j = rng.below(i + 1);
                c.swap(i, j);
            }
            assert_eq!(grid_search_cv(&c, |c| Ok((score(c), ()))).unwrap().best, reference);
        }
    }

    #[test]
    fn selects_generating_ridge() {
        // y = 2x + noise; validation MSE of the closed-form ridge slope
        let mut rng = RngStream::new(4, 0);
        let x: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.3 * rng.normal()).collect();
        let xv: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let yv: Vec<f64> = xv.iter().map(|v| 2.0 * v + 0.3 * rng.normal()).collect();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let grid = GridSpec {
            lambda: vec![1e-3, 0.09, 1.0, 10.0, 100.0],
            ..Default::default()
        };
        let eval = |c: &Candidate| {
            let w = sxy / (sxx + c.lambda.unwrap());
            let m = xv.iter().zip(&yv).map(|(a, b)| (w * a - b).powi(2)).sum::<f64>() / 30.0;
            Ok((m, w))
        };
        let r = grid_search_cv(&grid.candidates(), eval).unwrap();
        for c in grid.candidates() {
            assert!(r.mse <= eval(&c).unwrap().0);
        }
    }
}
