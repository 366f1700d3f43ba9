use crate::cme::DualFunction;
use crate::kernels::{gram, gram_sym, Kernel, KernelSpec};
use crate::numerics::{mean, regularized_factor, Matrix, Points};
use crate::regressors::{check_xy, Predictor};
use crate::{Error, Result};

/// `f̂(x) = offset + αᵀ k_anchors(x)` with `α = (K + λI)⁻¹ (y − offset)`.
#[derive(Debug, Clone)]
pub struct FittedKrr {
    anchors: Points,
    alpha: Vec<f64>,
    kernel: KernelSpec,
    lambda: f64,
    offset: f64,
}

pub fn krr_fit(x: &Points, y: &[f64], kernel: KernelSpec, lambda: f64) -> Result<FittedKrr> {
    check_xy(x, y)?;
    let k = gram_sym(&kernel, x)?;
    krr_from_gram(&k, x, y, kernel, lambda, 0.0)
}

/// KRR on `y − ȳ`, adding `ȳ` back at prediction.
pub fn krr_fit_centered(
    x: &Points,
    y: &[f64],
    kernel: KernelSpec,
    lambda: f64,
) -> Result<FittedKrr> {
    check_xy(x, y)?;
    if y.is_empty() {
        return Err(Error::EmptyData("no training targets".into()));
    }
    let k = gram_sym(&kernel, x)?;
    krr_from_gram(&k, x, y, kernel, lambda, mean(y))
}

/// Fit from a precomputed Gram `K = k(x, x)`, subtracting `offset` from the
/// targets first.
pub fn krr_from_gram(
    k: &Matrix,
    x: &Points,
    y: &[f64],
    kernel: KernelSpec,
    lambda: f64,
    offset: f64,
) -> Result<FittedKrr> {
    check_xy(x, y)?;
    if k.nrows() != x.nrows() || k.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch("Gram does not match the training set".into()));
    }
    let factor = regularized_factor(k, lambda)?;
    let centered: Vec<f64> = y.iter().map(|v| v - offset).collect();
    let alpha = factor.solve_vec(&centered)?;
    Ok(FittedKrr {
        anchors: x.clone(),
        alpha,
        kernel,
        lambda,
        offset,
    })
}

impl FittedKrr {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn anchors(&self) -> &Points {
        &self.anchors
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The RKHS part of the fit, without the offset.
    pub fn dual(&self) -> DualFunction {
        DualFunction {
            coef: self.alpha.clone(),
            points: self.anchors.clone(),
            kernel: self.kernel,
        }
    }

    /// Predictions from a precomputed cross Gram `k(points, anchors)`.
    pub fn predict_from_cross(&self, cross: &Matrix) -> Vec<f64> {
        (0..cross.nrows())
            .map(|i| {
                self.offset
                    + cross
                        .row(i)
                        .iter()
                        .zip(&self.alpha)
                        .map(|(k, a)| k * a)
                        .sum::<f64>()
            })
            .collect()
    }
}

impl Predictor for FittedKrr {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        if self.kernel.input_dim().is_some_and(|d| d != x.dim()) || x.dim() != self.anchors.dim() {
            return Err(Error::DimensionMismatch(format!(
                "predicting on dimension {}, trained on {}",
                x.dim(),
                self.anchors.dim()
            )));
        }
        Ok(self.predict_from_cross(&gram(&self.kernel, x, &self.anchors)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ColliderKernel, GaussianKernel};
    use crate::numerics::RngStream;

    fn data(seed: u64, n: usize) -> (Points, Vec<f64>) {
        let mut rng = RngStream::new(seed, 0);
        let x = Points::new(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        let y = x.rows().map(|r| r[0].sin() + 0.3 * r[1] + 0.1 * rng.normal()).collect();
        (x, y)
    }

    fn gauss(theta: f64) -> KernelSpec {
        GaussianKernel::new(theta).unwrap().into()
    }

    // Gaussian elimination with partial pivoting, independent of the Cholesky path.
    fn eliminate(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn zero_targets_give_zero_function() {
        let (x, _) = data(1, 15);
        let m = krr_fit(&x, &[0.0; 15], gauss(1.0), 0.1).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let (x, y) = data(2, 20);
        let m = krr_fit(&x, &y, gauss(1.0), 1e9).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = ynorm * 1.0 * 20.0 / 1e9;
        assert!(m.predict(&x).unwrap().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn matches_elimination_oracle() {
        let (x, y) = data(3, 10);
        let k = ColliderKernel::new(0.8, 1.5, 1, 1).unwrap();
        let lambda = 0.05;
        let m = krr_fit(&x, &y, k.into(), lambda).unwrap();
        let a: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                (0..10)
                    .map(|j| k.eval(x.row(i), x.row(j)) + if i == j { lambda } else { 0.0 })
                    .collect()
            })
            .collect();
        let alpha = eliminate(a.clone(), y.clone());
        for (p, q) in m.alpha().iter().zip(&alpha) {
            assert!((p - q).abs() < 1e-8 * (1.0 + q.abs()));
        }
        let resid: f64 = (0..10)
            .map(|i| {
                let r: f64 = (0..10).map(|j| a[i][j] * m.alpha()[j]).sum::<f64>() - y[i];
                r * r
            })
            .sum();
        let ynorm: f64 = y.iter().map(|v| v * v).sum();
        assert!(resid.sqrt() <= 1e-8 * ynorm.sqrt());
    }

    #[test]
    fn training_error_monotone_in_lambda() {
        let (x, y) = data(4, 30);
        let mut last = f64::INFINITY;
        for lambda in [1.0, 0.3, 0.1, 0.03, 0.01, 1e-3] {
            let m = krr_fit(&x, &y, gauss(1.0), lambda).unwrap();
            let p = m.predict(&x).unwrap();
            let mse: f64 = p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 30.0;
            assert!(mse <= last + 1e-12);
            last = mse;
        }
    }

    #[test]
    fn centering_adds_mean_back() {
        let (x, y) = data(5, 12);
        let shifted: Vec<f64> = y.iter().map(|v| v + 10.0).collect();
        let a = krr_fit_centered(&x, &y, gauss(1.0), 0.1).unwrap();
        let b = krr_fit_centered(&x, &shifted, gauss(1.0), 0.1).unwrap();
        for (p, q) in a.predict(&x).unwrap().iter().zip(b.predict(&x).unwrap()) {
            assert!((p + 10.0 - q).abs() < 1e-10);
        }
        assert!(a.predict(&Points::zeros(1, 3)).is_err());
    }
}
