//! Synthetic collider data with retained latents, and the latent-conditioned
//! oracle for conditional expectations given the conditioning variable.
//!
//! Three generators are available:
//!
//! - `Simple`: `(Z1, Z2, Y) ~ N(0, Σ)` with `Y ⟂ Z2`, then `X1 = g1(Z1) + ε`
//!   and `X2 = g2(Z2)`.
//! - `General`: parents `X3` of `Y`, with `Y ⟂ X2 | X3` and the collider `X1`.
//! - `Gated`: `Y, X2 ~ N(0, 1)` independent and `X1 = Y·1{X2 > 0}`, where
//!   `E[Y | X1, X2] = X1·1{X2 > 0}` is known exactly.
//!
//! Each split is drawn from its own random stream, one row at a time, so a
//! larger split extends a smaller one with the same seed.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::numerics::{cholesky_psd, GaussianConditioner, JitterPolicy, Matrix, Points, RngStream};
use crate::regressors::Predictor;
use crate::{Error, Result};

pub const STREAM_SIGMA: u64 = 0;
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_SEMI: u64 = 2;
pub const STREAM_VALIDATION: u64 = 3;
pub const STREAM_TEST: u64 = 4;
pub const STREAM_ORACLE_TEST: u64 = 5;
/// First stream available to Monte-Carlo oracle draws.
pub const STREAM_ORACLE_DRAWS: u64 = 10;

/// `u + 0.1 cos(2πu²)`.
pub fn g1(u: f64) -> f64 {
    u + 0.1 * (TAU * u * u).cos()
}

/// `u + 0.1 sin(2πu²)`.
pub fn g2(u: f64) -> f64 {
    u + 0.1 * (TAU * u * u).sin()
}

pub fn g1_vec(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&v| g1(v)).collect()
}

pub fn g2_vec(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&v| g2(v)).collect()
}

/// Coordinatewise maps applied to the latent Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maps {
    #[default]
    Nonlinear,
    Identity,
}

impl Maps {
    fn first(self, u: f64) -> f64 {
        match self {
            Maps::Nonlinear => g1(u),
            Maps::Identity => u,
        }
    }

    fn second(self, u: f64) -> f64 {
        match self {
            Maps::Nonlinear => g2(u),
            Maps::Identity => u,
        }
    }
}

/// Column layout `[x1 | x2 | x3]` of every generated covariate matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.d1 + self.d2 + self.d3
    }

    /// Width of the conditioning block `(x2, x3)`.
    pub fn dc(&self) -> usize {
        self.d2 + self.d3
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for (prefix, d) in [("x1", self.d1), ("x2", self.d2), ("x3", self.d3)] {
            names.extend((0..d).map(|i| format!("{prefix}_{i}")));
        }
        names
    }
}

/// Joint covariance of `(Z1, Z2, Y)` with `Cov(Y, Z2) = 0` and unit variances.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSpec {
    pub d1: usize,
    pub d2: usize,
    pub sigma: Matrix,
}

impl SigmaSpec {
    pub fn dim(&self) -> usize {
        self.d1 + self.d2 + 1
    }

    pub fn y_index(&self) -> usize {
        self.d1 + self.d2
    }

    /// `Var(Y | Z1, Z2)`, a lower bound on `Var(Y | X)` for this generator.
    pub fn residual_variance(&self) -> Result<f64> {
        let obs: Vec<usize> = (0..self.y_index()).collect();
        let c = GaussianConditioner::new(&self.sigma, &obs)?;
        Ok(c.covariance()[(0, 0)])
    }
}

/// Draws a 4 × (d1 + d2 + 1) matrix of unit columns, makes every X2 column
/// orthogonal to the Y column, and returns the unit-diagonal rescaling of
/// `MᵀM + 0.01 I`.
pub fn make_sigma(d1: usize, d2: usize, rng: &mut RngStream) -> Result<SigmaSpec> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "covariance needs d1, d2 ≥ 1, got {d1}, {d2}"
        )));
    }
    let d = d1 + d2 + 1;
    let mut m = Matrix::from_fn(4, d, |_, _| rng.normal());
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let my = m.column(d - 1).clone_owned();
    for i in d1..d1 + d2 {
        let proj = m.column(i).dot(&my);
        let mut col = m.column_mut(i);
        col -= &my * proj;
    }
    let mut sigma = m.tr_mul(&m);
    for i in 0..d {
        sigma[(i, i)] += 0.01;
    }
    let scale: Vec<f64> = (0..d).map(|i| sigma[(i, i)].sqrt()).collect();
    let sigma = Matrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            sigma[(i, j)] / (scale[i] * scale[j])
        }
    });
    Ok(SigmaSpec { d1, d2, sigma })
}

/// Coefficients of the general generator:
///
/// `X3 ~ N(0, I)`, `Y = βᵀX3 + ν_Y`, `X2 = g2(A X3 + ν2)`,
/// `X1 = g1(b_y Y 1 + B2 X2 + B3 X3) + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralCoefficients {
    pub beta: Vec<f64>,
    pub a: Matrix,
    pub b_y: f64,
    pub b2: Matrix,
    pub b3: Matrix,
    pub noise_y: f64,
    pub noise_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralScales {
    pub beta: f64,
    pub a: f64,
    pub b_y: f64,
    pub b2: f64,
    pub b3: f64,
    pub noise_y: f64,
    pub noise_2: f64,
}

impl Default for GeneralScales {
    fn default() -> Self {
        GeneralScales {
            beta: 1.0,
            a: 1.0,
            b_y: 1.0,
            b2: 1.0,
            b3: 0.5,
            noise_y: 0.5,
            noise_2: 0.5,
        }
    }
}

/// Entries `N(0, scale² / fan_in)`.
pub fn make_general_coefficients(
    layout: Layout,
    scales: &GeneralScales,
    rng: &mut RngStream,
) -> Result<GeneralCoefficients> {
    let Layout { d1, d2, d3 } = layout;
    if d1 == 0 || d2 == 0 || d3 == 0 {
        return Err(Error::InvalidParameter(format!(
            "general generator needs d1, d2, d3 ≥ 1, got {d1}, {d2}, {d3}"
        )));
    }
    let s3 = (d3 as f64).sqrt();
    let s2 = (d2 as f64).sqrt();
    let beta = (0..d3).map(|_| scales.beta * rng.normal() / s3).collect();
    let a = Matrix::from_fn(d2, d3, |_, _| scales.a * rng.normal() / s3);
    let b2 = Matrix::from_fn(d1, d2, |_, _| scales.b2 * rng.normal() / s2);
    let b3 = Matrix::from_fn(d1, d3, |_, _| scales.b3 * rng.normal() / s3);
    Ok(GeneralCoefficients {
        beta,
        a,
        b_y: scales.b_y,
        b2,
        b3,
        noise_y: scales.noise_y,
        noise_2: scales.noise_2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorModel {
    Simple(SigmaSpec),
    General(GeneralCoefficients),
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub semi: usize,
    pub validation: usize,
    pub test: usize,
    pub oracle_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 50,
            semi: 100,
            validation: 100,
            test: 1000,
            oracle_test: 500,
        }
    }
}

/// One split. `y` is absent for unlabeled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Points,
    pub y: Option<Vec<f64>>,
    pub latents: Points,
}

impl Split {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn targets(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::EmptyData("split has no targets".into()))
    }

    pub fn head(&self, n: usize) -> Split {
        Split {
            x: self.x.head(n),
            y: self.y.as_ref().map(|y| y[..n.min(y.len())].to_vec()),
            latents: self.latents.head(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub layout: Layout,
    pub model: GeneratorModel,
    pub sigma_noise: f64,
    pub maps: Maps,
    pub seed: u64,
    pub train: Split,
    pub semi: Split,
    pub validation: Split,
    pub test: Split,
    pub oracle_test: Split,
}

impl SimDataset {
    /// Names of the retained latent columns.
    pub fn latent_names(&self) -> Vec<String> {
        let Layout { d1, d2, d3 } = self.layout;
        let mut v = Vec::new();
        let mut push = |p: &str, d: usize| v.extend((0..d).map(|i| format!("{p}_{i}")));
        match self.model {
            GeneratorModel::Simple(_) => {
                push("z1", d1);
                push("z2", d2);
                push("y", 1);
                push("eps", d1);
            }
            GeneratorModel::General(_) => {
                push("u2", d2);
                push("x3", d3);
                push("y", 1);
                push("eps", d1);
            }
            GeneratorModel::Gated => {
                push("x2", 1);
                push("y", 1);
            }
        }
        v
    }

    pub fn splits(&self) -> [(&'static str, &Split); 5] {
        [
            ("train", &self.train),
            ("semi", &self.semi),
            ("validation", &self.validation),
            ("test", &self.test),
            ("oracle_test", &self.oracle_test),
        ]
    }

    /// Lower bound on `Var(Y | X)` implied by the generator.
    pub fn noise_floor(&self) -> Result<f64> {
        match &self.model {
            GeneratorModel::Simple(s) => s.residual_variance(),
            GeneratorModel::General(c) => Ok(c.noise_y * c.noise_y),
            GeneratorModel::Gated => Ok(0.0),
        }
    }
}

// Draws one row: (covariates, target, latents).
type RowSampler<'a> = dyn FnMut(&mut RngStream) -> (Vec<f64>, f64, Vec<f64>) + 'a;

fn draw_split(
    n: usize,
    seed: u64,
    stream: u64,
    labeled: bool,
    dim: usize,
    latent_dim: usize,
    sampler: &mut RowSampler<'_>,
) -> Split {
    let mut rng = RngStream::new(seed, stream);
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    let mut lat = Vec::with_capacity(n * latent_dim);
    for _ in 0..n {
        let (xr, yr, lr) = sampler(&mut rng);
        x.extend(xr);
        y.push(yr);
        lat.extend(lr);
    }
    Split {
        x: Points::new(n, dim, x).expect("sampler row width"),
        y: labeled.then_some(y),
        latents: Points::new(n, latent_dim, lat).expect("sampler latent width"),
    }
}

fn draw_all(
    seed: u64,
    sizes: &SplitSizes,
    dim: usize,
    latent_dim: usize,
    sampler: &mut RowSampler<'_>,
) -> [Split; 5] {
    [
        (sizes.train, STREAM_TRAIN, true),
        (sizes.semi, STREAM_SEMI, false),
        (sizes.validation, STREAM_VALIDATION, true),
        (sizes.test, STREAM_TEST, true),
        (sizes.oracle_test, STREAM_ORACLE_TEST, true),
    ]
    .map(|(n, s, l)| draw_split(n, seed, s, l, dim, latent_dim, sampler))
}

fn check_noise(sigma_noise: f64) -> Result<()> {
    if !(sigma_noise >= 0.0) || !sigma_noise.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise scale must be non-negative, got {sigma_noise}"
        )));
    }
    Ok(())
}

/// Simulates every split from a fixed covariance.
pub fn simulate(
    spec: &SigmaSpec,
    sigma_noise: f64,
    sizes: &SplitSizes,
    seed: u64,
    maps: Maps,
) -> Result<SimDataset> {
    check_noise(sigma_noise)?;
    let (d1, d2) = (spec.d1, spec.d2);
    let d = spec.dim();
    let chol = cholesky_psd(&spec.sigma, JitterPolicy::default())?;
    let l = chol.factor().clone();
    let mut z = vec![0.0; d];
    let mut sampler = |rng: &mut RngStream| {
        z.iter_mut().for_each(|v| *v = rng.normal());
        let latent_gauss: Vec<f64> = (0..d)
            .map(|r| (0..=r).map(|c| l[(r, c)] * z[c]).sum())
            .collect();
        let eps: Vec<f64> = (0..d1).map(|_| sigma_noise * rng.normal()).collect();
        let mut x = Vec::with_capacity(d1 + d2);
        x.extend((0..d1).map(|i| maps.first(latent_gauss[i]) + eps[i]));
        x.extend((d1..d1 + d2).map(|i| maps.second(latent_gauss[i])));
        let y = latent_gauss[d - 1];
        let mut latents = latent_gauss;
        latents.extend(eps);
        (x, y, latents)
    };
    let [train, semi, validation, test, oracle_test] =
        draw_all(seed, sizes, d1 + d2, d + d1, &mut sampler);
    Ok(SimDataset {
        layout: Layout { d1, d2, d3: 0 },
        model: GeneratorModel::Simple(spec.clone()),
        sigma_noise,
        maps,
        seed,
        train,
        semi,
        validation,
        test,
        oracle_test,
    })
}

/// Covariance from stream 0 of `seed`, then [`simulate`].
pub fn simulate_seeded(
    d1: usize,
    d2: usize,
    sigma_noise: f64,
    sizes: &SplitSizes,
    seed: u64,
) -> Result<SimDataset> {
    let spec = make_sigma(d1, d2, &mut RngStream::new(seed, STREAM_SIGMA))?;
    simulate(&spec, sigma_noise, sizes, seed, Maps::Nonlinear)
}

fn general_x1(c: &GeneralCoefficients, y: f64, x2: &[f64], x3: &[f64], maps: Maps) -> Vec<f64> {
    (0..c.b2.nrows())
        .map(|i| {
            let mut s = c.b_y * y;
            s += (0..x2.len()).map(|j| c.b2[(i, j)] * x2[j]).sum::<f64>();
            s += (0..x3.len()).map(|j| c.b3[(i, j)] * x3[j]).sum::<f64>();
            maps.first(s)
        })
        .collect()
}

/// Simulates the general structure with coefficients drawn from stream 0.
pub fn simulate_general(
    layout: Layout,
    scales: &GeneralScales,
    sigma_noise: f64,
    sizes: &SplitSizes,
    seed: u64,
) -> Result<SimDataset> {
    let coef = make_general_coefficients(layout, scales, &mut RngStream::new(seed, STREAM_SIGMA))?;
    simulate_general_with(layout, coef, sigma_noise, sizes, seed, Maps::Nonlinear)
}

pub fn simulate_general_with(
    layout: Layout,
    coef: GeneralCoefficients,
    sigma_noise: f64,
    sizes: &SplitSizes,
    seed: u64,
    maps: Maps,
) -> Result<SimDataset> {
    check_noise(sigma_noise)?;
    let Layout { d1, d2, d3 } = layout;
    if coef.beta.len() != d3 || coef.a.shape() != (d2, d3) || coef.b2.shape() != (d1, d2) {
        return Err(Error::DimensionMismatch("coefficients do not match the layout".into()));
    }
    let c = &coef;
    let mut sampler = |rng: &mut RngStream| {
        let x3: Vec<f64> = (0..d3).map(|_| rng.normal()).collect();
        let y = c.beta.iter().zip(&x3).map(|(b, v)| b * v).sum::<f64>() + c.noise_y * rng.normal();
        let u2: Vec<f64> = (0..d2)
            .map(|i| (0..d3).map(|j| c.a[(i, j)] * x3[j]).sum::<f64>() + c.noise_2 * rng.normal())
            .collect();
        let x2: Vec<f64> = u2.iter().map(|&u| maps.second(u)).collect();
        let eps: Vec<f64> = (0..d1).map(|_| sigma_noise * rng.normal()).collect();
        let x1: Vec<f64> = general_x1(c, y, &x2, &x3, maps)
            .iter()
            .zip(&eps)
            .map(|(a, e)| a + e)
            .collect();
        let mut x = x1;
        x.extend(&x2);
        x.extend(&x3);
        let mut latents = u2;
        latents.extend(&x3);
        latents.push(y);
        latents.extend(eps);
        (x, y, latents)
    };
    let [train, semi, validation, test, oracle_test] =
        draw_all(seed, sizes, layout.dim(), d2 + d3 + 1 + d1, &mut sampler);
    Ok(SimDataset {
        layout,
        model: GeneratorModel::General(coef.clone()),
        sigma_noise,
        maps,
        seed,
        train,
        semi,
        validation,
        test,
        oracle_test,
    })
}

/// `Y, X2 ~ N(0, 1)` independent and `X1 = Y·1{X2 > 0}`.
pub fn simulate_gated(sizes: &SplitSizes, seed: u64) -> SimDataset {
    let mut sampler = |rng: &mut RngStream| {
        let y = rng.normal();
        let x2 = rng.normal();
        let x1 = if x2 > 0.0 { y } else { 0.0 };
        (vec![x1, x2], y, vec![x2, y])
    };
    let [train, semi, validation, test, oracle_test] = draw_all(seed, sizes, 2, 2, &mut sampler);
    SimDataset {
        layout: Layout { d1: 1, d2: 1, d3: 0 },
        model: GeneratorModel::Gated,
        sigma_noise: 0.0,
        maps: Maps::Identity,
        seed,
        train,
        semi,
        validation,
        test,
        oracle_test,
    }
}

/// The regression function of the gated generator, `x1·1{x2 > 0}`.
pub fn gated_optimal(x: &[f64]) -> f64 {
    if x[1] > 0.0 {
        x[0]
    } else {
        0.0
    }
}

/// Fresh draws of `X` with the conditioning latents of a row held fixed.
///
/// The simple generator conditions on the latent `Z2` rather than on
/// `X2 = g2(Z2)`; the general one on the pre-map `A X3 + ν2` and `X3`.
#[derive(Debug, Clone)]
pub struct Oracle {
    model: GeneratorModel,
    layout: Layout,
    sigma_noise: f64,
    maps: Maps,
    conditioner: Option<GaussianConditioner>,
}

impl Oracle {
    pub fn new(ds: &SimDataset) -> Result<Self> {
        let conditioner = match &ds.model {
            GeneratorModel::Simple(s) => {
                let obs: Vec<usize> = (s.d1..s.d1 + s.d2).collect();
                Some(GaussianConditioner::new(&s.sigma, &obs)?)
            }
            _ => None,
        };
        Ok(Oracle {
            model: ds.model.clone(),
            layout: ds.layout,
            sigma_noise: ds.sigma_noise,
            maps: ds.maps,
            conditioner,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// `m` draws of `X` given the conditioning part of `latent`, appended to `out`.
    pub fn draws_into(&self, latent: &[f64], m: usize, rng: &mut RngStream, out: &mut Vec<f64>) {
        let Layout { d1, d2, d3 } = self.layout;
        match &self.model {
            GeneratorModel::Simple(_) => {
                let c = self.conditioner.as_ref().expect("simple oracle has a conditioner");
                let z2 = &latent[d1..d1 + d2];
                let mean = c.mean(z2).expect("conditioning width");
                let x2: Vec<f64> = z2.iter().map(|&u| self.maps.second(u)).collect();
                let mut fresh = vec![0.0; d1 + 1];
                let mut scratch = vec![0.0; d1 + 1];
                for _ in 0..m {
                    c.sample_into(rng, &mean, &mut fresh, &mut scratch);
                    // unobserved order is (z1, y); only z1 reaches X
                    for &z in &fresh[..d1] {
                        let e = self.sigma_noise * rng.normal();
                        out.push(self.maps.first(z) + e);
                    }
                    out.extend(&x2);
                }
            }
            GeneratorModel::General(c) => {
                let u2 = &latent[..d2];
                let x3 = &latent[d2..d2 + d3];
                let x2: Vec<f64> = u2.iter().map(|&u| self.maps.second(u)).collect();
                let base = c.beta.iter().zip(x3).map(|(b, v)| b * v).sum::<f64>();
                for _ in 0..m {
                    let y = base + c.noise_y * rng.normal();
                    for v in general_x1(c, y, &x2, x3, self.maps) {
                        out.push(v + self.sigma_noise * rng.normal());
                    }
                    out.extend(&x2);
                    out.extend(x3);
                }
            }
            GeneratorModel::Gated => {
                let x2 = latent[0];
                for _ in 0..m {
                    let y = rng.normal();
                    out.push(if x2 > 0.0 { y } else { 0.0 });
                    out.push(x2);
                }
            }
        }
    }

    pub fn draws(&self, latent: &[f64], m: usize, rng: &mut RngStream) -> Points {
        let mut out = Vec::with_capacity(m * self.layout.dim());
        self.draws_into(latent, m, rng, &mut out);
        Points::new(m, self.layout.dim(), out).expect("oracle row width")
    }
}

/// Monte-Carlo `E[h(X) | conditioning latents of oracle-test row]`.
pub fn oracle_conditional_expectation<P: Predictor + ?Sized>(
    h: &P,
    ds: &SimDataset,
    row: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter("oracle needs at least one draw".into()));
    }
    if row >= ds.oracle_test.len() {
        return Err(Error::MissingLatents);
    }
    let oracle = Oracle::new(ds)?;
    let draws = oracle.draws(ds.oracle_test.latents.row(row), m, rng);
    let v = h.predict(&draws)?;
    Ok(v.iter().sum::<f64>() / m as f64)
}
