//! Gaussian factor kernels, the collider kernel `(r + 1)·ℓ` and the projected
//! kernel induced by a fitted conditional mean embedding.
//!
//! Points are laid out as `[x1 | xc]` where `xc` holds the conditioning
//! columns (`x2`, or `x2` followed by `x3` in the general case).

use serde::{Deserialize, Serialize};

use crate::cme::{CmeFit, CmeMode};
use crate::numerics::{sq_dist, Matrix, Points};
use crate::{Error, Result};

const TILE: usize = 256;

pub trait Kernel: Send + Sync {
    /// Required input dimension, if the kernel fixes one.
    fn input_dim(&self) -> Option<usize>;

    fn eval(&self, a: &[f64], b: &[f64]) -> f64;

    /// Largest value of `k(x, x)`.
    fn sup_diag(&self) -> f64;
}

/// `exp(−‖u − u′‖² / θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    theta: f64,
}

impl GaussianKernel {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive, got {theta}"
            )));
        }
        Ok(GaussianKernel { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) / self.theta).exp()
    }
}

impl Kernel for GaussianKernel {
    fn input_dim(&self) -> Option<usize> {
        None
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        GaussianKernel::eval(self, a, b)
    }

    fn sup_diag(&self) -> f64 {
        1.0
    }
}

/// `k((x1, xc), (x1′, xc′)) = (r(x1, x1′) + 1) · ℓ(xc, xc′)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColliderKernel {
    pub r: GaussianKernel,
    pub ell: GaussianKernel,
    pub d1: usize,
    pub dc: usize,
}

impl ColliderKernel {
    pub fn new(theta1: f64, theta2: f64, d1: usize, dc: usize) -> Result<Self> {
        Ok(ColliderKernel {
            r: GaussianKernel::new(theta1)?,
            ell: GaussianKernel::new(theta2)?,
            d1,
            dc,
        })
    }

    pub fn dim(&self) -> usize {
        self.d1 + self.dc
    }

    #[inline]
    pub fn r_plus(&self, a1: &[f64], b1: &[f64]) -> f64 {
        self.r.eval(a1, b1) + 1.0
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d1 = self.d1;
        self.r_plus(&a[..d1], &b[..d1]) * self.ell.eval(&a[d1..], &b[d1..])
    }
}

impl Kernel for ColliderKernel {
    fn input_dim(&self) -> Option<usize> {
        Some(self.dim())
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        ColliderKernel::eval(self, a, b)
    }

    fn sup_diag(&self) -> f64 {
        2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian(GaussianKernel),
    Collider(ColliderKernel),
}

impl Kernel for KernelSpec {
    fn input_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Gaussian(_) => None,
            KernelSpec::Collider(k) => Some(k.dim()),
        }
    }

    #[inline]
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Gaussian(k) => k.eval(a, b),
            KernelSpec::Collider(k) => k.eval(a, b),
        }
    }

    fn sup_diag(&self) -> f64 {
        match self {
            KernelSpec::Gaussian(_) => 1.0,
            KernelSpec::Collider(_) => 2.0,
        }
    }
}

impl From<GaussianKernel> for KernelSpec {
    fn from(k: GaussianKernel) -> Self {
        KernelSpec::Gaussian(k)
    }
}

impl From<ColliderKernel> for KernelSpec {
    fn from(k: ColliderKernel) -> Self {
        KernelSpec::Collider(k)
    }
}

pub(crate) fn check_dims<K: Kernel + ?Sized>(k: &K, pts: &Points) -> Result<()> {
    match k.input_dim() {
        Some(d) if d != pts.dim() && !pts.is_empty() => Err(Error::DimensionMismatch(format!(
            "kernel expects dimension {d}, points have {}",
            pts.dim()
        ))),
        _ => Ok(()),
    }
}

pub fn kernel_eval<K: Kernel + ?Sized>(k: &K, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || k.input_dim().is_some_and(|d| d != a.len()) {
        return Err(Error::DimensionMismatch(format!(
            "kernel evaluated on dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(k.eval(a, b))
}

/// `G[i, j] = k(a_i, b_j)`, assembled in column tiles.
pub fn gram<K: Kernel + ?Sized>(k: &K, a: &Points, b: &Points) -> Result<Matrix> {
    check_dims(k, a)?;
    check_dims(k, b)?;
    if !a.is_empty() && !b.is_empty() && a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gram between dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(gram_unchecked(k, a, b))
}

pub(crate) fn gram_unchecked<K: Kernel + ?Sized>(k: &K, a: &Points, b: &Points) -> Matrix {
    let (n, m) = (a.nrows(), b.nrows());
    let mut g = Matrix::zeros(n, m);
    for start in (0..m).step_by(TILE) {
        let end = (start + TILE).min(m);
        for j in start..end {
            let bj = b.row(j);
            let mut col = g.column_mut(j);
            for i in 0..n {
                col[i] = k.eval(a.row(i), bj);
            }
        }
    }
    g
}

/// Symmetric Gram of a set with itself; evaluates each pair once.
pub fn gram_sym<K: Kernel + ?Sized>(k: &K, a: &Points) -> Result<Matrix> {
    check_dims(k, a)?;
    let n = a.nrows();
    let mut g = Matrix::zeros(n, n);
    for j in 0..n {
        let aj = a.row(j);
        for i in 0..=j {
            let v = k.eval(a.row(i), aj);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Sign of the `⟨μ̂_x, μ̂_x′⟩` term.
///
/// `Plus` is the inner-product expansion and yields a valid kernel. `Minus`
/// exists only to demonstrate that the alternative sign is not PSD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossTermSign {
    #[default]
    Plus,
    Minus,
}

impl CrossTermSign {
    fn factor(self) -> f64 {
        match self {
            CrossTermSign::Plus => 1.0,
            CrossTermSign::Minus => -1.0,
        }
    }
}

/// Points prepared against a CME fit: the CME weights `a(xc)` and the
/// anchor cross block, both as `n_anchor × n` matrices.
#[derive(Debug, Clone)]
pub struct PreparedPoints {
    pub(crate) points: Points,
    pub(crate) weights: Matrix,
    pub(crate) anchor_cross: Matrix,
}

impl PreparedPoints {
    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

/// `k̂_P(x, x′) = ⟨k_x − μ̂_{xc}, k_x′ − μ̂_{xc′}⟩`.
///
/// In factored mode every term shares the factor `ℓ(xc, xc′)`; in generic mode
/// the full kernel `k` is used in place of `ℓ·r⁺`.
#[derive(Debug, Clone)]
pub struct ProjectedKernel {
    cme: CmeFit,
    sign: CrossTermSign,
    // K_aa (generic) or R⁺_aa (factored) over the anchors
    anchor_gram: Matrix,
}

impl ProjectedKernel {
    pub fn new(cme: CmeFit) -> Self {
        Self::with_sign(cme, CrossTermSign::Plus)
    }

    pub fn with_sign(cme: CmeFit, sign: CrossTermSign) -> Self {
        let anchor_gram = cme.anchor_block();
        ProjectedKernel {
            cme,
            sign,
            anchor_gram,
        }
    }

    /// Assembles a projected kernel from an anchor block computed elsewhere,
    /// which must equal the one [`ProjectedKernel::new`] would compute.
    pub(crate) fn from_anchor_gram(cme: CmeFit, anchor_gram: Matrix) -> Self {
        debug_assert_eq!(anchor_gram.nrows(), cme.n_anchors());
        ProjectedKernel {
            cme,
            sign: CrossTermSign::Plus,
            anchor_gram,
        }
    }

    pub fn cme(&self) -> &CmeFit {
        &self.cme
    }

    pub fn sign(&self) -> CrossTermSign {
        self.sign
    }

    pub fn prepare(&self, points: &Points) -> Result<PreparedPoints> {
        self.cme.prepare(points)
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        let a = Points::new(1, x.len(), x.to_vec())?;
        let b = Points::new(1, xp.len(), xp.to_vec())?;
        Ok(self.gram(&a, &b)?[(0, 0)])
    }

    pub fn gram(&self, a: &Points, b: &Points) -> Result<Matrix> {
        let pa = self.cme.prepare(a)?;
        let pb = self.cme.prepare(b)?;
        Ok(self.gram_prepared(&pa, &pb))
    }

    pub fn gram_prepared(&self, pa: &PreparedPoints, pb: &PreparedPoints) -> Matrix {
        let kernel = self.cme.kernel();
        let s = self.sign.factor();
        // W_Aᵀ (G_aa W_B), computed right to left
        let t = &self.anchor_gram * &pb.weights;
        let mut g = pa.weights.tr_mul(&t) * s;
        g -= pa.weights.tr_mul(&pb.anchor_cross);
        g -= pa.anchor_cross.tr_mul(&pb.weights);
        let (a, b) = (&pa.points, &pb.points);
        match (self.cme.mode(), kernel) {
            (CmeMode::Factored, KernelSpec::Collider(k)) => {
                let d1 = k.d1;
                for j in 0..b.nrows() {
                    let bj = b.row(j);
                    for i in 0..a.nrows() {
                        let ai = a.row(i);
                        let l = k.ell.eval(&ai[d1..], &bj[d1..]);
                        g[(i, j)] = l * (g[(i, j)] + k.r_plus(&ai[..d1], &bj[..d1]));
                    }
                }
            }
            _ => {
                for j in 0..b.nrows() {
                    let bj = b.row(j);
                    for i in 0..a.nrows() {
                        g[(i, j)] += kernel.eval(a.row(i), bj);
                    }
                }
            }
        }
        g
    }
}

/// Projected kernel for the general structure, where the conditioning variable
/// is `(x2, x3)` and points are laid out as `[x1 | x2 | x3]`.
pub fn general_projected_kernel_eval(
    pk: &ProjectedKernel,
    d1: usize,
    d2: usize,
    d3: usize,
    x: &[f64],
    xp: &[f64],
) -> Result<f64> {
    let d = d1 + d2 + d3;
    if x.len() != d || xp.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "expected points of dimension {d}, got {} and {}",
            x.len(),
            xp.len()
        )));
    }
    if pk.cme().kernel().input_dim() != Some(d) || pk.cme().d1() != d1 {
        return Err(Error::KernelMismatch(format!(
            "fit does not condition on the trailing {} columns",
            d2 + d3
        )));
    }
    pk.eval(x, xp)
}
