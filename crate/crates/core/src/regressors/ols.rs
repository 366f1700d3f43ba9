use crate::numerics::{cholesky_psd, mean, JitterPolicy, Matrix, Points};
use crate::regressors::{check_xy, Predictor};
use crate::{Error, Result};

const RIDGE: f64 = 1e-8;

/// Least squares with an unpenalized intercept and a `1e-8` ridge on the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedOls {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

pub fn ols_fit(x: &Points, y: &[f64]) -> Result<FittedOls> {
    check_xy(x, y)?;
    if y.is_empty() {
        return Err(Error::EmptyData("no rows for least squares".into()));
    }
    let (n, d) = (x.nrows(), x.dim());
    let y_mean = mean(y);
    if d == 0 {
        return Ok(FittedOls {
            weights: Vec::new(),
            intercept: y_mean,
        });
    }
    let x_mean: Vec<f64> = (0..d).map(|j| x.rows().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let xc = Matrix::from_fn(n, d, |i, j| x.get(i, j) - x_mean[j]);
    let yc = Matrix::from_iterator(n, 1, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc);
    for j in 0..d {
        gram[(j, j)] += RIDGE;
    }
    let rhs = xc.tr_mul(&yc);
    let w = cholesky_psd(&gram, JitterPolicy::default())?.solve(&rhs)?;
    let weights: Vec<f64> = w.column(0).iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(FittedOls { weights, intercept })
}

impl Predictor for FittedOls {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        if x.dim() != self.weights.len() && !x.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "predicting on dimension {}, trained on {}",
                x.dim(),
                self.weights.len()
            )));
        }
        Ok(x
            .rows()
            .map(|r| self.intercept + r.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
}
