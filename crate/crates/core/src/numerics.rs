//! Dense linear algebra, seeded random streams and Gaussian utilities.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// A set of points stored row-major: `n` rows of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {n} rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points { n, dim, data })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Points {
            n,
            dim,
            data: vec![0.0; n * dim],
        }
    }

    /// Empty set of the given dimension.
    pub fn empty(dim: usize) -> Self {
        Points::zeros(0, dim)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Points {
            n: rows.len(),
            dim,
            data,
        })
    }

    /// One-dimensional points from a slice of scalars.
    pub fn from_column(values: &[f64]) -> Self {
        Points {
            n: values.len(),
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
        Points {
            n: m.nrows(),
            dim: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.n, self.dim, &self.data)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if self.n == 0 && self.data.is_empty() && self.dim == 0 {
            self.dim = row.len();
        }
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} pushed onto dimension {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        self.n += 1;
        Ok(())
    }

    /// Columns `start..end` of every row.
    pub fn columns(&self, start: usize, end: usize) -> Points {
        assert!(start <= end && end <= self.dim, "column range out of bounds");
        let dim = end - start;
        let mut data = Vec::with_capacity(self.n * dim);
        for r in self.rows() {
            data.extend_from_slice(&r[start..end]);
        }
        Points { n: self.n, dim, data }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points {
            n: idx.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn head(&self, n: usize) -> Points {
        let n = n.min(self.n);
        Points {
            n,
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Points) -> Result<Points> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack dimension {} onto {}",
                other.dim, self.dim
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Points {
            n: self.n + other.n,
            dim: self.dim,
            data,
        })
    }

    /// Concatenates the columns of several point sets with equal row counts.
    pub fn hstack(parts: &[&Points]) -> Result<Points> {
        let n = parts.first().map_or(0, |p| p.n);
        if parts.iter().any(|p| p.n != n) {
            return Err(Error::DimensionMismatch("hstack of unequal row counts".into()));
        }
        let dim = parts.iter().map(|p| p.dim).sum();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Points { n, dim, data })
    }
}

/// Jitter schedule for factorizing matrices that are PSD only up to rounding
/// or estimation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    /// First jitter tried after the unjittered attempt fails; `None` means
    /// `1e-10 · trace / n`.
    pub initial: Option<f64>,
    pub max_escalations: u32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial: None,
            max_escalations: 6,
        }
    }
}

/// Lower Cholesky factor of `A + jitter·I`.
#[derive(Debug, Clone)]
pub struct PsdFactorization {
    factor: Matrix,
    jitter: f64,
}

impl PsdFactorization {
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Solves `(A + jitter·I) X = B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} rows, factor is {}×{}",
                b.nrows(),
                self.dim(),
                self.dim()
            )));
        }
        let mut x = b.clone();
        forward_substitute(&self.factor, &mut x);
        backward_substitute_transposed(&self.factor, &mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_column_slice(b.len(), 1, b);
        Ok(self.solve(&m)?.column(0).iter().copied().collect())
    }
}

// Solves L X = B in place (L lower triangular), column-oriented.
fn forward_substitute(l: &Matrix, x: &mut Matrix) {
    let n = l.nrows();
    for col in 0..x.ncols() {
        let mut c = x.column_mut(col);
        for k in 0..n {
            let d = l[(k, k)];
            let v = if d == 0.0 { 0.0 } else { c[k] / d };
            c[k] = v;
            if v != 0.0 {
                let lk = l.column(k);
                for i in k + 1..n {
                    c[i] -= lk[i] * v;
                }
            }
        }
    }
}

// Solves Lᵀ X = B in place.
fn backward_substitute_transposed(l: &Matrix, x: &mut Matrix) {
    let n = l.nrows();
    for col in 0..x.ncols() {
        let mut c = x.column_mut(col);
        for i in (0..n).rev() {
            let li = l.column(i);
            let mut s = c[i];
            for k in i + 1..n {
                s -= li[k] * c[k];
            }
            let d = l[(i, i)];
            c[i] = if d == 0.0 { 0.0 } else { s / d };
        }
    }
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax();
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > 1e-8 * scale {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

// Row-oriented lower Cholesky, so the inner products run over contiguous
// memory. None on a non-positive pivot.
fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.nrows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            let dot: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
            if i == j {
                let d = a[(i, i)] + jitter - dot;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[(i, j)] - dot) / l[j * n + j];
            }
        }
    }
    Some(Matrix::from_row_slice(n, n, &l))
}

/// Cholesky factorization with jitter escalation.
///
/// Tries the matrix as is, then adds `initial` jitter and multiplies it by ten
/// up to `max_escalations` times. The all-zero matrix factors exactly as zero.
pub fn cholesky_psd(a: &Matrix, policy: JitterPolicy) -> Result<PsdFactorization> {
    check_symmetric(a)?;
    let n = a.nrows();
    if a.iter().all(|&v| v == 0.0) {
        return Ok(PsdFactorization {
            factor: Matrix::zeros(n, n),
            jitter: 0.0,
        });
    }
    if let Some(factor) = try_cholesky(a, 0.0) {
        return Ok(PsdFactorization { factor, jitter: 0.0 });
    }
    let trace_scale = (a.trace().abs() / n.max(1) as f64).max(f64::MIN_POSITIVE);
    let mut jitter = policy.initial.unwrap_or(1e-10 * trace_scale);
    for _ in 0..=policy.max_escalations {
        if let Some(factor) = try_cholesky(a, jitter) {
            return Ok(PsdFactorization { factor, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotFactorizable {
        escalations: policy.max_escalations,
        jitter: jitter / 10.0,
    })
}

/// `(K + λI)⁻¹ B` through a Cholesky factorization of `K + λI`.
pub fn solve_regularized(k: &Matrix, lambda: f64, b: &Matrix) -> Result<Matrix> {
    regularized_factor(k, lambda)?.solve(b)
}

/// Factorization of `K + λI`, shared by every ridge-type solve.
pub fn regularized_factor(k: &Matrix, lambda: f64) -> Result<PsdFactorization> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("regularizer must be positive, got {lambda}")));
    }
    let mut reg = k.clone();
    for i in 0..reg.nrows().min(reg.ncols()) {
        reg[(i, i)] += lambda;
    }
    cholesky_psd(&reg, JitterPolicy::default())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Matrix) -> Result<f64> {
    check_symmetric(a)?;
    if a.nrows() == 0 {
        return Err(Error::EmptyData("eigenvalue of an empty matrix".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Deterministic random stream addressed by `(seed, stream)`.
///
/// Backed by ChaCha8 with the stream identifier mapped onto the cipher's
/// stream word, so distinct streams never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Position in the stream, in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Another stream with the same seed.
    pub fn sibling(&self, stream: u64) -> RngStream {
        RngStream::new(self.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Draws `count` rows of `mean + L z`, `L` the Cholesky factor of `cov`.
pub fn sample_gaussian(
    rng: &mut RngStream,
    mean: &[f64],
    cov: &Matrix,
    count: usize,
) -> Result<Points> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "mean of length {d} with {}×{} covariance",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = cholesky_psd(cov, JitterPolicy::default())?;
    let l = chol.factor();
    let mut out = Points::zeros(count, d);
    let mut z = vec![0.0; d];
    for i in 0..count {
        z.iter_mut().for_each(|v| *v = rng.normal());
        let row = out.row_mut(i);
        for r in 0..d {
            let mut s = mean[r];
            for c in 0..=r {
                s += l[(r, c)] * z[c];
            }
            row[r] = s;
        }
    }
    Ok(out)
}

/// Conditioning of a zero-mean Gaussian on a fixed set of coordinates.
///
/// Precomputes `Σ_uo Σ_oo⁻¹` and the factor of the conditional covariance so
/// repeated conditioning on new observed values is cheap.
#[derive(Debug, Clone)]
pub struct GaussianConditioner {
    observed: Vec<usize>,
    unobserved: Vec<usize>,
    gain: Matrix,
    cond_cov: Matrix,
    cond_factor: PsdFactorization,
}

impl GaussianConditioner {
    pub fn new(sigma: &Matrix, observed: &[usize]) -> Result<Self> {
        check_symmetric(sigma)?;
        let d = sigma.nrows();
        let mut is_obs = vec![false; d];
        for &o in observed {
            if o >= d {
                return Err(Error::DimensionMismatch(format!("observed index {o} ≥ {d}")));
            }
            if is_obs[o] {
                return Err(Error::InvalidParameter(format!("observed index {o} repeated")));
            }
            is_obs[o] = true;
        }
        let unobserved: Vec<usize> = (0..d).filter(|&i| !is_obs[i]).collect();
        let s_oo = sigma.select_rows(observed).select_columns(observed);
        let s_uo = sigma.select_rows(&unobserved).select_columns(observed);
        let s_uu = sigma.select_rows(&unobserved).select_columns(&unobserved);
        let (gain, cond_cov) = if observed.is_empty() {
            (Matrix::zeros(unobserved.len(), 0), s_uu)
        } else {
            let f = cholesky_psd(&s_oo, JitterPolicy::default())?;
            // Σ_oo⁻¹ Σ_ou, transposed
            let gain = f.solve(&s_uo.transpose())?.transpose();
            let cond = &s_uu - &gain * s_uo.transpose();
            let cond = (&cond + cond.transpose()) * 0.5;
            (gain, cond)
        };
        let cond_factor = cholesky_psd(&cond_cov, JitterPolicy::default())?;
        Ok(GaussianConditioner {
            observed: observed.to_vec(),
            unobserved,
            gain,
            cond_cov,
            cond_factor,
        })
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn unobserved(&self) -> &[usize] {
        &self.unobserved
    }

    pub fn mean(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.observed.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} observed values for {} observed coordinates",
                values.len(),
                self.observed.len()
            )));
        }
        Ok((0..self.unobserved.len())
            .map(|i| (0..values.len()).map(|j| self.gain[(i, j)] * values[j]).sum())
            .collect())
    }

    pub fn covariance(&self) -> &Matrix {
        &self.cond_cov
    }

    /// Draws the unobserved coordinates given the observed values, appending
    /// into `out` (length = number of unobserved coordinates).
    pub fn sample_into(&self, rng: &mut RngStream, mean: &[f64], out: &mut [f64], z: &mut [f64]) {
        let l = self.cond_factor.factor();
        let d = mean.len();
        z[..d].iter_mut().for_each(|v| *v = rng.normal());
        for r in 0..d {
            let mut s = mean[r];
            for c in 0..=r {
                s += l[(r, c)] * z[c];
            }
            out[r] = s;
        }
    }
}

/// Mean and covariance of the unobserved coordinates of `N(0, Σ)` given
/// `x_observed = values`.
pub fn conditional_gaussian(
    sigma: &Matrix,
    observed: &[usize],
    values: &[f64],
) -> Result<(Vec<f64>, Matrix)> {
    let c = GaussianConditioner::new(sigma, observed)?;
    let mean = c.mean(values)?;
    Ok((mean, c.cond_cov))
}

/// Median of the pairwise squared Euclidean distances, the scale used to
/// anchor Gaussian lengthscale grids. Falls back to 1 for degenerate sets.
pub fn median_sq_distance(x: &Points) -> f64 {
    let mut d = Vec::with_capacity(x.nrows() * x.nrows().saturating_sub(1) / 2);
    for i in 0..x.nrows() {
        for j in 0..i {
            d.push(sq_dist(x.row(i), x.row(j)));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation (denominator `n − 1`); zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
