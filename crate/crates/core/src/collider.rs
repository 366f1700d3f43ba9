//! Projection of regressors onto functions with zero conditional expectation
//! given the conditioning columns.
//!
//! Three estimators are provided: the two-stage projection of an arbitrary
//! fitted regressor, closed-form projected kernel ridge regression (P-KRR),
//! and kernel ridge regression directly in the projected RKHS (HP-KRR). The
//! general structure first regresses `y` on `x3` and projects the residual.
//!
//! Every estimator centers `y` by its training mean and adds it back at
//! prediction.

use crate::cme::{fit_cme, CmeFit, CmeMode};
use crate::kernels::{gram, gram_sym, ColliderKernel, KernelSpec, PreparedPoints, ProjectedKernel};
use crate::numerics::{cholesky_psd, mean, JitterPolicy, Matrix, Points};
use crate::regressors::{check_xy, krr_from_gram, FittedKrr, FittedModel, Predictor, RegressorSpec};
use crate::{Error, Result};

/// `offset + base(x) − stage2(xc)`.
#[derive(Debug, Clone)]
pub struct ProjectedRegressor {
    offset: f64,
    base: FittedModel,
    stage2: FittedModel,
    d1: usize,
}

impl ProjectedRegressor {
    pub fn base(&self) -> &FittedModel {
        &self.base
    }

    pub fn stage2(&self) -> &FittedModel {
        &self.stage2
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

fn anchors(x: &Points, unlabeled: &Points) -> Result<Points> {
    if unlabeled.is_empty() {
        Ok(x.clone())
    } else {
        x.vstack(unlabeled)
    }
}

fn require_labeled(x: &Points, y: &[f64]) -> Result<()> {
    check_xy(x, y)?;
    if y.is_empty() {
        return Err(Error::EmptyData("no labeled rows".into()));
    }
    Ok(())
}

/// Fits `base_spec` on the labeled rows, then regresses the conditioning
/// columns (trailing `dim − d1`) of labeled ∪ unlabeled rows onto the base
/// predictions with `stage2_spec`. Labels are not used in stage 2.
pub fn project_regressor(
    base_spec: &RegressorSpec,
    stage2_spec: &RegressorSpec,
    x: &Points,
    y: &[f64],
    unlabeled: &Points,
    d1: usize,
    center: bool,
) -> Result<ProjectedRegressor> {
    require_labeled(x, y)?;
    let offset = if center { mean(y) } else { 0.0 };
    let yc: Vec<f64> = y.iter().map(|v| v - offset).collect();
    let base = base_spec.fit(x, &yc)?;
    project_fitted(base, stage2_spec, x, unlabeled, d1, offset)
}

/// Stage 2 only, for a base already fitted on targets shifted by `offset`.
pub fn project_fitted(
    base: FittedModel,
    stage2_spec: &RegressorSpec,
    x: &Points,
    unlabeled: &Points,
    d1: usize,
    offset: f64,
) -> Result<ProjectedRegressor> {
    if d1 > x.dim() {
        return Err(Error::DimensionMismatch(format!("split {d1} beyond dimension {}", x.dim())));
    }
    let anchors = anchors(x, unlabeled)?;
    let targets = base.predict(&anchors)?;
    let stage2 = stage2_spec.fit(&anchors.columns(d1, anchors.dim()), &targets)?;
    Ok(ProjectedRegressor {
        offset,
        base,
        stage2,
        d1,
    })
}

impl Predictor for ProjectedRegressor {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        let b = self.base.predict(x)?;
        let s = self.stage2.predict(&x.columns(self.d1.min(x.dim()), x.dim()))?;
        Ok(b.iter().zip(&s).map(|(b, s)| self.offset + b - s).collect())
    }
}

/// Closed-form projected KRR: `f̂(x) − ⟨f̂, μ̂_{X|Xc=xc}⟩`.
#[derive(Debug, Clone)]
pub struct PkrrFit {
    krr: FittedKrr,
    cme: CmeFit,
    // generic mode: (L + γI)⁻¹ f̂(anchors), so the correction is ℓ_anchors(xc)ᵀ u
    u: Option<Vec<f64>>,
}

pub fn pkrr_fit(
    x: &Points,
    y: &[f64],
    unlabeled: &Points,
    kernel: ColliderKernel,
    lambda: f64,
    gamma: f64,
    mode: CmeMode,
) -> Result<PkrrFit> {
    require_labeled(x, y)?;
    let spec = KernelSpec::Collider(kernel);
    let k = gram_sym(&spec, x)?;
    let krr = krr_from_gram(&k, x, y, spec, lambda, mean(y))?;
    let anchors = anchors(x, unlabeled)?;
    let cme = fit_cme(&anchors, &anchors.columns(kernel.d1, anchors.dim()), kernel.ell, gamma, spec, mode)?;
    pkrr_from_parts(krr, cme)
}

/// Assembles P-KRR from a fitted KRR and a CME over the same kernel.
pub fn pkrr_from_parts(krr: FittedKrr, cme: CmeFit) -> Result<PkrrFit> {
    if krr.kernel() != cme.kernel() {
        return Err(Error::KernelMismatch("KRR and CME kernels differ".into()));
    }
    let u = match cme.mode() {
        CmeMode::Generic => {
            let cross = gram(&cme.kernel(), cme.anchors_x(), krr.anchors())?;
            let v = cross * Matrix::from_column_slice(krr.alpha().len(), 1, krr.alpha());
            Some(cme_solve(&cme, &v)?)
        }
        CmeMode::Factored => None,
    };
    Ok(PkrrFit { krr, cme, u })
}

fn cme_solve(cme: &CmeFit, v: &Matrix) -> Result<Vec<f64>> {
    let w = cme.solve_anchor_system(v)?;
    Ok(w.column(0).iter().copied().collect())
}

impl PkrrFit {
    pub fn krr(&self) -> &FittedKrr {
        &self.krr
    }

    pub fn cme(&self) -> &CmeFit {
        &self.cme
    }

    /// `⟨f̂, μ̂_{X|Xc=xc}⟩` for each row.
    pub fn correction(&self, x: &Points) -> Result<Vec<f64>> {
        let d1 = self.cme.d1();
        let zc = x.columns(d1.min(x.dim()), x.dim());
        match (&self.u, self.krr.kernel()) {
            (Some(u), _) => {
                let l = gram(&self.cme.ell(), self.cme.anchors_z(), &zc)?;
                Ok((0..x.nrows())
                    .map(|j| l.column(j).iter().zip(u).map(|(a, b)| a * b).sum())
                    .collect())
            }
            (None, KernelSpec::Collider(k)) => {
                let w = self.cme.weights_matrix(&zc)?;
                let train = self.krr.anchors();
                let r_cross = gram(
                    &crate::cme::RPlus(k.r),
                    &train.columns(0, d1),
                    &self.cme.anchors_x().columns(0, d1),
                )?;
                let m = r_cross * w;
                let alpha = self.krr.alpha();
                let train_c = train.columns(d1, train.dim());
                Ok((0..x.nrows())
                    .map(|j| {
                        let zj = zc.row(j);
                        (0..train.nrows())
                            .map(|i| alpha[i] * k.ell.eval(train_c.row(i), zj) * m[(i, j)])
                            .sum()
                    })
                    .collect())
            }
            (None, KernelSpec::Gaussian(_)) => unreachable!("factored mode requires a collider kernel"),
        }
    }
}

impl Predictor for PkrrFit {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        let f = self.krr.predict(x)?;
        let c = self.correction(x)?;
        Ok(f.iter().zip(&c).map(|(a, b)| a - b).collect())
    }
}

/// KRR in the projected RKHS: `β = (K̂_P + λI)⁻¹ (y − ȳ)`.
#[derive(Debug, Clone)]
pub struct HpKrrFit {
    kernel: ProjectedKernel,
    train: PreparedPoints,
    beta: Vec<f64>,
    offset: f64,
    lambda: f64,
    jitter: f64,
}

pub fn hpkrr_fit(
    x: &Points,
    y: &[f64],
    unlabeled: &Points,
    kernel: ColliderKernel,
    lambda: f64,
    gamma: f64,
) -> Result<HpKrrFit> {
    hpkrr_fit_mode(x, y, unlabeled, kernel, lambda, gamma, CmeMode::Factored)
}

pub fn hpkrr_fit_mode(
    x: &Points,
    y: &[f64],
    unlabeled: &Points,
    kernel: ColliderKernel,
    lambda: f64,
    gamma: f64,
    mode: CmeMode,
) -> Result<HpKrrFit> {
    require_labeled(x, y)?;
    let spec = KernelSpec::Collider(kernel);
    crate::kernels::check_dims(&spec, x)?;
    let anchors = anchors(x, unlabeled)?;
    let cme = fit_cme(&anchors, &anchors.columns(kernel.d1, anchors.dim()), kernel.ell, gamma, spec, mode)?;
    let pk = ProjectedKernel::new(cme);
    let train = pk.prepare(x)?;
    let g = pk.gram_prepared(&train, &train);
    hpkrr_from_gram(pk, train, &g, y, lambda)
}

/// Solves the projected ridge system from a precomputed `K̂_P` on the
/// training rows.
pub fn hpkrr_from_gram(
    kernel: ProjectedKernel,
    train: PreparedPoints,
    gram: &Matrix,
    y: &[f64],
    lambda: f64,
) -> Result<HpKrrFit> {
    require_labeled(train.points(), y)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("regularizer must be positive, got {lambda}")));
    }
    let n = y.len();
    let mut sys = (gram + gram.transpose()) * 0.5;
    for i in 0..n {
        sys[(i, i)] += lambda;
    }
    let factor = cholesky_psd(&sys, JitterPolicy::default())?;
    let offset = mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - offset).collect();
    let beta = factor.solve_vec(&yc)?;
    Ok(HpKrrFit {
        kernel,
        train,
        beta,
        offset,
        lambda,
        jitter: factor.jitter(),
    })
}

impl HpKrrFit {
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Jitter added to `K̂_P + λI` beyond `λ`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn projected_kernel(&self) -> &ProjectedKernel {
        &self.kernel
    }

    /// Predictions for points already prepared against the fit's CME.
    pub fn predict_prepared(&self, p: &PreparedPoints) -> Vec<f64> {
        let g = self.kernel.gram_prepared(p, &self.train);
        (0..g.nrows())
            .map(|i| self.offset + g.row(i).iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

impl Predictor for HpKrrFit {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        Ok(self.predict_prepared(&self.kernel.prepare(x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneralMethod {
    TwoStage {
        base: RegressorSpec,
        stage2: RegressorSpec,
    },
    Pkrr {
        mode: CmeMode,
    },
    HpKrr,
}

#[derive(Debug, Clone)]
pub enum ProjectedModel {
    TwoStage(ProjectedRegressor),
    Pkrr(PkrrFit),
    HpKrr(HpKrrFit),
}

impl Predictor for ProjectedModel {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        match self {
            ProjectedModel::TwoStage(m) => m.predict(x),
            ProjectedModel::Pkrr(m) => m.predict(x),
            ProjectedModel::HpKrr(m) => m.predict(x),
        }
    }
}

/// `f̂0(x3) + projected residual(x1, x2, x3)`.
#[derive(Debug, Clone)]
pub struct GeneralColliderFit {
    f0: FittedModel,
    residual: ProjectedModel,
    d3: usize,
}

impl GeneralColliderFit {
    /// Combines a first stage fitted on the trailing `d3` columns with a
    /// residual model over all columns.
    pub fn from_parts(f0: FittedModel, residual: ProjectedModel, d3: usize) -> Self {
        GeneralColliderFit { f0, residual, d3 }
    }

    pub fn f0(&self) -> &FittedModel {
        &self.f0
    }

    pub fn residual(&self) -> &ProjectedModel {
        &self.residual
    }

    pub fn predict_f0(&self, x: &Points) -> Result<Vec<f64>> {
        self.f0.predict(&x.columns(x.dim() - self.d3, x.dim()))
    }
}

/// Fits `f0_spec` on the trailing `d3` columns, then the chosen projection of
/// the residual `y − f̂0(x3)` with the conditioning variable `(x2, x3)`.
///
/// `kernel` must split as `d1` leading columns and `d2 + d3` conditioning
/// columns. With `d3 = 0` the first stage is the training mean.
pub fn general_fit(
    x: &Points,
    y: &[f64],
    unlabeled: &Points,
    d3: usize,
    f0_spec: &RegressorSpec,
    method: &GeneralMethod,
    kernel: ColliderKernel,
    lambda: f64,
    gamma: f64,
) -> Result<GeneralColliderFit> {
    require_labeled(x, y)?;
    if kernel.dim() != x.dim() || kernel.dc < d3 {
        return Err(Error::DimensionMismatch(format!(
            "kernel over {}+{} columns for points of dimension {} with d3 = {d3}",
            kernel.d1,
            kernel.dc,
            x.dim()
        )));
    }
    let x3 = x.columns(x.dim() - d3, x.dim());
    let f0 = if d3 == 0 {
        RegressorSpec::Mean.fit(&x3, y)?
    } else {
        f0_spec.fit(&x3, y)?
    };
    let fitted = f0.predict(&x3)?;
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let residual = match method {
        GeneralMethod::TwoStage { base, stage2 } => ProjectedModel::TwoStage(project_regressor(
            base, stage2, x, &resid, unlabeled, kernel.d1, true,
        )?),
        GeneralMethod::Pkrr { mode } => {
            ProjectedModel::Pkrr(pkrr_fit(x, &resid, unlabeled, kernel, lambda, gamma, *mode)?)
        }
        GeneralMethod::HpKrr => {
            ProjectedModel::HpKrr(hpkrr_fit(x, &resid, unlabeled, kernel, lambda, gamma)?)
        }
    };
    Ok(GeneralColliderFit { f0, residual, d3 })
}

impl Predictor for GeneralColliderFit {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        let a = self.predict_f0(x)?;
        let b = self.residual.predict(x)?;
        Ok(a.iter().zip(&b).map(|(a, b)| a + b).collect())
    }
}
