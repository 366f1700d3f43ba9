//! Estimator-level checks on simulated data: the two code paths of projected
//! KRR and positive semi-definiteness of projected Gram matrices.

use collider_core::cme::{fit_cme, CmeMode};
use collider_core::collider::{pkrr_fit, project_regressor};
use collider_core::datagen::{simulate_general, simulate_seeded, GeneralScales, Layout, SimDataset, SplitSizes};
use collider_core::kernels::{ColliderKernel, CrossTermSign, GaussianKernel, KernelSpec, ProjectedKernel};
use collider_core::numerics::{median_sq_distance, min_eigenvalue, RngStream};
use collider_core::regressors::{Predictor, RegressorSpec};
use collider_core::Points;

pub fn small_sizes() -> SplitSizes {
    SplitSizes {
        train: 50,
        semi: 100,
        validation: 10,
        test: 100,
        oracle_test: 10,
    }
}

pub fn anchors(ds: &SimDataset) -> Points {
    ds.train.x.vstack(&ds.semi.x).unwrap()
}

/// Collider kernel at `scale` times the median heuristic of each block.
pub fn heuristic_kernel(ds: &SimDataset, scale: f64) -> ColliderKernel {
    let a = anchors(ds);
    let d1 = ds.layout.d1;
    let t1 = scale * median_sq_distance(&a.columns(0, d1));
    let t2 = scale * median_sq_distance(&a.columns(d1, a.dim()));
    ColliderKernel::new(t1, t2, d1, a.dim() - d1).unwrap()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
}

/// Two-stage projection with a KRR base and a kernel-ridge second stage
/// against closed-form projected KRR, on 100 random test points of each of
/// 20 datasets. Returns the worst relative gap.
pub fn cross_path_identity() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let ds = simulate_seeded(3, 3, 0.1, &small_sizes(), 100 + seed).map_err(|e| e.to_string())?;
        let mut rng = RngStream::new(seed, 40);
        let k = heuristic_kernel(&ds, 0.5 + 2.0 * rng.uniform());
        let lambda = 10f64.powf(-3.0 + 2.0 * rng.uniform());
        let gamma = 10f64.powf(-3.0 + 2.0 * rng.uniform());
        let y = ds.train.targets().unwrap();
        let base = RegressorSpec::Krr { kernel: k.into(), lambda, center: false };
        let stage2 = RegressorSpec::Krr { kernel: k.ell.into(), lambda: gamma, center: false };
        let two = project_regressor(&base, &stage2, &ds.train.x, y, &ds.semi.x, 3, true).map_err(|e| e.to_string())?;
        let closed = pkrr_fit(&ds.train.x, y, &ds.semi.x, k, lambda, gamma, CmeMode::Generic).map_err(|e| e.to_string())?;
        // random points spread over the covariate range
        let test = Points::new(100, 6, (0..600).map(|_| 1.5 * rng.normal()).collect()).unwrap();
        let a = two.predict(&test).map_err(|e| e.to_string())?;
        let b = closed.predict(&test).map_err(|e| e.to_string())?;
        worst = worst.max(max_rel(&a, &b));
    }
    if worst > 1e-8 {
        return Err(format!("two-stage and closed-form projected KRR differ by {worst:.2e}"));
    }
    Ok(worst)
}

/// Worst `min eigenvalue / (trace / n)` of a projected Gram over 40 points.
fn gram_ratio(ds: &SimDataset, mode: CmeMode, sign: CrossTermSign, gamma: f64) -> Result<f64, String> {
    let a = anchors(ds);
    let k = heuristic_kernel(ds, 1.0);
    let d1 = ds.layout.d1;
    let cme = fit_cme(&a, &a.columns(d1, a.dim()), k.ell, gamma, KernelSpec::Collider(k), mode).map_err(|e| e.to_string())?;
    let pts = ds.test.x.head(40);
    let g = ProjectedKernel::with_sign(cme, sign).gram(&pts, &pts).map_err(|e| e.to_string())?;
    let sym = (&g + g.transpose()) * 0.5;
    let scale = g.trace().abs() / 40.0;
    Ok(min_eigenvalue(&sym).map_err(|e| e.to_string())? / scale)
}

pub struct PsdReport {
    /// Most negative normalized eigenvalue of the valid kernels.
    pub worst_plus: f64,
    /// Datasets on which the minus-sign variant breaks the threshold.
    pub minus_failures: usize,
    pub datasets: usize,
}

/// Projected Grams of the simple (both modes) and general structures over 20
/// datasets each, with the minus-sign variant alongside.
pub fn projected_psd() -> Result<PsdReport, String> {
    let mut worst_plus = f64::INFINITY;
    let mut minus_failures = 0;
    let sizes = small_sizes();
    for seed in 0..20u64 {
        let gamma = [1e-4, 1e-3, 1e-2, 1e-1][seed as usize % 4];
        let simple = simulate_seeded(3, 3, 0.1, &sizes, 200 + seed).map_err(|e| e.to_string())?;
        let layout = Layout { d1: 2, d2: 2, d3: 2 };
        let general = simulate_general(layout, &GeneralScales::default(), 0.1, &sizes, 300 + seed).map_err(|e| e.to_string())?;
        for mode in [CmeMode::Factored, CmeMode::Generic] {
            worst_plus = worst_plus.min(gram_ratio(&simple, mode, CrossTermSign::Plus, gamma)?);
        }
        worst_plus = worst_plus.min(gram_ratio(&general, CmeMode::Factored, CrossTermSign::Plus, gamma)?);
        if gram_ratio(&simple, CmeMode::Factored, CrossTermSign::Minus, gamma)? < -1e-6 {
            minus_failures += 1;
        }
    }
    Ok(PsdReport { worst_plus, minus_failures, datasets: 20 })
}

/// `E[X1 | X2 = x2]` on the gated generator from a CME over 5000 anchors,
/// at points where the truth is 0. Returns the largest absolute estimate.
pub fn gated_embedding_error(n: usize) -> Result<f64, String> {
    use collider_core::datagen::simulate_gated;
    let sizes = SplitSizes { train: n, semi: 0, validation: 0, test: 0, oracle_test: 0 };
    let ds = simulate_gated(&sizes, 5);
    let x = &ds.train.x;
    let z = x.columns(1, 2);
    let ell = GaussianKernel::new(0.1).unwrap();
    let k = ColliderKernel::new(1.0, 0.1, 1, 1).unwrap();
    let cme = fit_cme(x, &z, ell, 1e-3, KernelSpec::Collider(k), CmeMode::Factored).map_err(|e| e.to_string())?;
    let x1 = x.column(0);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let x2 = -2.0 + 0.1 * i as f64 + 0.05;
        let w = cme.weights(&[x2]).map_err(|e| e.to_string())?;
        let est: f64 = w.iter().zip(&x1).map(|(a, b)| a * b).sum();
        worst = worst.max(est.abs());
    }
    Ok(worst)
}
