//! Conditional mean embeddings `μ̂_{X|Z=z}` estimated by kernel ridge
//! regression of `k_X` on `Z`, with weights `a(z) = (L + γI)⁻¹ ℓ_anchors(z)`.

use serde::{Deserialize, Serialize};

use crate::kernels::{gram_sym, gram_unchecked, GaussianKernel, Kernel, KernelSpec, PreparedPoints};
use crate::numerics::{regularized_factor, Matrix, Points, PsdFactorization};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmeMode {
    /// `μ̂(x) = k_anchors(x)ᵀ a(z)` for any kernel on the full covariate.
    Generic,
    /// `μ̂(x) = [r⁺_anchors(x1)ᵀ a(z)] · ℓ(z, xc)` for a collider kernel.
    #[default]
    Factored,
}

/// `f = Σᵢ αᵢ k(pᵢ, ·)`.
#[derive(Debug, Clone)]
pub struct DualFunction {
    pub coef: Vec<f64>,
    pub points: Points,
    pub kernel: KernelSpec,
}

impl DualFunction {
    pub fn new(coef: Vec<f64>, points: Points, kernel: KernelSpec) -> Result<Self> {
        if coef.len() != points.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} points",
                coef.len(),
                points.nrows()
            )));
        }
        Ok(DualFunction { coef, points, kernel })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.points
            .rows()
            .zip(&self.coef)
            .map(|(p, c)| c * self.kernel.eval(p, x))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct CmeFit {
    anchors_x: Points,
    anchors_z: Points,
    ell: GaussianKernel,
    gamma: f64,
    factor: PsdFactorization,
    mode: CmeMode,
    kernel: KernelSpec,
    d1: usize,
}

/// Fits the embedding of `k` over `x` conditional on `z`.
///
/// Anchors need no labels, so unlabeled covariates can be included freely.
pub fn fit_cme(
    x: &Points,
    z: &Points,
    ell: GaussianKernel,
    gamma: f64,
    kernel: KernelSpec,
    mode: CmeMode,
) -> Result<CmeFit> {
    if x.is_empty() {
        return Err(Error::EmptyData("no anchors for the conditional mean embedding".into()));
    }
    if x.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows but {} conditioning rows",
            x.nrows(),
            z.nrows()
        )));
    }
    if z.dim() > x.dim() {
        return Err(Error::DimensionMismatch("conditioning wider than covariate".into()));
    }
    crate::kernels::check_dims(&kernel, x)?;
    let d1 = x.dim() - z.dim();
    if mode == CmeMode::Factored {
        match kernel {
            KernelSpec::Collider(k) if k.d1 == d1 && k.ell == ell => {}
            _ => {
                return Err(Error::KernelMismatch(
                    "factored mode needs a collider kernel sharing ℓ and the column split".into(),
                ))
            }
        }
    }
    let l = gram_sym(&ell, z)?;
    let factor = regularized_factor(&l, gamma)?;
    Ok(CmeFit {
        anchors_x: x.clone(),
        anchors_z: z.clone(),
        ell,
        gamma,
        factor,
        mode,
        kernel,
        d1,
    })
}

impl CmeFit {
    pub fn anchors_x(&self) -> &Points {
        &self.anchors_x
    }

    pub fn anchors_z(&self) -> &Points {
        &self.anchors_z
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors_x.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn ell(&self) -> GaussianKernel {
        self.ell
    }

    pub fn mode(&self) -> CmeMode {
        self.mode
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    /// Number of leading non-conditioning columns.
    pub fn d1(&self) -> usize {
        self.d1
    }

    /// Jitter added on top of `γ` when factorizing `L + γI`.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.anchors_z.dim() {
            return Err(Error::DimensionMismatch(format!(
                "conditioning value of dimension {}, expected {}",
                z.len(),
                self.anchors_z.dim()
            )));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.anchors_x.dim() {
            return Err(Error::DimensionMismatch(format!(
                "covariate of dimension {}, expected {}",
                x.len(),
                self.anchors_x.dim()
            )));
        }
        Ok(())
    }

    /// `a(z) = (L + γI)⁻¹ ℓ_anchors(z)`.
    pub fn weights(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_z(z)?;
        let rhs: Vec<f64> = self.anchors_z.rows().map(|a| self.ell.eval(a, z)).collect();
        self.factor.solve_vec(&rhs)
    }

    /// Weights for a batch of conditioning values, one column per row of `zs`.
    pub fn weights_matrix(&self, zs: &Points) -> Result<Matrix> {
        if zs.dim() != self.anchors_z.dim() && !zs.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "conditioning points of dimension {}, expected {}",
                zs.dim(),
                self.anchors_z.dim()
            )));
        }
        self.factor.solve(&gram_unchecked(&self.ell, &self.anchors_z, zs))
    }

    /// `(L + γI)⁻¹ v`.
    pub fn solve_anchor_system(&self, v: &Matrix) -> Result<Matrix> {
        self.factor.solve(v)
    }

    /// `μ̂_{X|Z=z}(x)`.
    pub fn embed_eval(&self, z: &[f64], x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let a = self.weights(z)?;
        Ok(match (self.mode, self.kernel) {
            (CmeMode::Factored, KernelSpec::Collider(k)) => {
                let d1 = self.d1;
                let s: f64 = self
                    .anchors_x
                    .rows()
                    .zip(&a)
                    .map(|(p, w)| w * k.r_plus(&p[..d1], &x[..d1]))
                    .sum();
                s * self.ell.eval(z, &x[d1..])
            }
            _ => self
                .anchors_x
                .rows()
                .zip(&a)
                .map(|(p, w)| w * self.kernel.eval(p, x))
                .sum(),
        })
    }

    /// `⟨f, μ̂_{X|Z=z}⟩` for `f` in the same RKHS.
    pub fn inner(&self, f: &DualFunction, z: &[f64]) -> Result<f64> {
        if f.kernel != self.kernel {
            return Err(Error::KernelMismatch(
                "function and embedding live in different RKHSs".into(),
            ));
        }
        if !f.points.is_empty() {
            self.check_x(f.points.row(0))?;
        }
        let a = self.weights(z)?;
        let mut total = 0.0;
        match (self.mode, self.kernel) {
            (CmeMode::Factored, KernelSpec::Collider(k)) => {
                let d1 = self.d1;
                for (p, c) in f.points.rows().zip(&f.coef) {
                    let r: f64 = self
                        .anchors_x
                        .rows()
                        .zip(&a)
                        .map(|(q, w)| w * k.r_plus(&p[..d1], &q[..d1]))
                        .sum();
                    total += c * self.ell.eval(&p[d1..], z) * r;
                }
            }
            _ => {
                for (p, c) in f.points.rows().zip(&f.coef) {
                    let s: f64 = self
                        .anchors_x
                        .rows()
                        .zip(&a)
                        .map(|(q, w)| w * self.kernel.eval(p, q))
                        .sum();
                    total += c * s;
                }
            }
        }
        Ok(total)
    }

    /// Precomputes the weights of `points` (conditioning taken from their
    /// trailing columns) and their cross block with the anchors.
    pub fn prepare(&self, points: &Points) -> Result<PreparedPoints> {
        if points.dim() != self.anchors_x.dim() && !points.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "points of dimension {}, expected {}",
                points.dim(),
                self.anchors_x.dim()
            )));
        }
        let dim = self.anchors_x.dim();
        let weights = self.weights_matrix(&points.columns(self.d1, dim.max(self.d1)))?;
        let anchor_cross = self.anchor_cross(points);
        Ok(PreparedPoints {
            points: points.clone(),
            weights,
            anchor_cross,
        })
    }

    /// The same embedding with the `x1` lengthscale of a factored collider
    /// kernel replaced. The anchor system depends only on `ℓ` and `γ`, so its
    /// factorization is reused.
    pub fn with_first_lengthscale(&self, theta1: f64) -> Result<CmeFit> {
        match (self.mode, self.kernel) {
            (CmeMode::Factored, KernelSpec::Collider(k)) => {
                let mut k = k;
                k.r = GaussianKernel::new(theta1)?;
                Ok(CmeFit {
                    kernel: KernelSpec::Collider(k),
                    ..self.clone()
                })
            }
            _ => Err(Error::KernelMismatch(
                "lengthscale swap needs a factored collider embedding".into(),
            )),
        }
    }

    /// Re-prepares points for this fit, reusing their weights. Valid when
    /// `prepared` came from a fit sharing the anchors, `ℓ` and `γ`.
    pub fn reprepare(&self, prepared: &PreparedPoints) -> Result<PreparedPoints> {
        let points = &prepared.points;
        if prepared.weights.nrows() != self.n_anchors() || points.dim() != self.anchors_x.dim() {
            return Err(Error::DimensionMismatch("prepared points belong to another fit".into()));
        }
        Ok(PreparedPoints {
            points: points.clone(),
            weights: prepared.weights.clone(),
            anchor_cross: self.anchor_cross(points),
        })
    }

    fn anchor_cross(&self, points: &Points) -> Matrix {
        match (self.mode, self.kernel) {
            (CmeMode::Factored, KernelSpec::Collider(k)) => gram_unchecked(
                &RPlus(k.r),
                &self.anchors_x.columns(0, self.d1),
                &points.columns(0, self.d1),
            ),
            _ => gram_unchecked(&self.kernel, &self.anchors_x, points),
        }
    }

    /// Gram of the anchors under `k` (generic) or `r⁺` (factored).
    pub(crate) fn anchor_block(&self) -> Matrix {
        match (self.mode, self.kernel) {
            (CmeMode::Factored, KernelSpec::Collider(k)) => {
                let a1 = self.anchors_x.columns(0, self.d1);
                gram_sym(&RPlus(k.r), &a1).expect("unconstrained kernel")
            }
            _ => gram_sym(&self.kernel, &self.anchors_x).expect("dimension checked at fit"),
        }
    }
}

/// `r + 1` as a kernel on the `x1` block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RPlus(pub GaussianKernel);

impl Kernel for RPlus {
    fn input_dim(&self) -> Option<usize> {
        None
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.0.eval(a, b) + 1.0
    }

    fn sup_diag(&self) -> f64 {
        2.0
    }
}
