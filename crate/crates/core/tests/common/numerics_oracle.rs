//! Independent dense oracles: Gaussian elimination, inertia bisection for
//! eigenvalues, pseudo-inverse least squares, sign enumeration and rejection
//! sampling.

use collider_core::harness::{ranks, wilcoxon_signed_rank};
use collider_core::kernels::{kernel_eval, GaussianKernel, KernelSpec};
use collider_core::numerics::{conditional_gaussian, min_eigenvalue, solve_regularized, RngStream};
use collider_core::regressors::{krr_fit, ols_fit, Predictor};
use collider_core::{Matrix, Points};

pub fn random_points(rng: &mut RngStream, n: usize, d: usize) -> Points {
    Points::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            for c in 0..b[r].len() {
                b[r][c] -= f * b[col][c];
            }
        }
    }
    let m = b[0].len();
    let mut x = vec![vec![0.0; m]; n];
    for r in (0..n).rev() {
        for c in 0..m {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k][c]).sum();
            x[r][c] = (b[r][c] - s) / a[r][r];
        }
    }
    x
}

// Eigenvalues of a symmetric matrix below `t`, by Sylvester's law of inertia:
// the number of negative pivots of an unpivoted LDLᵀ of A − tI.
fn count_below(a: &[Vec<f64>], t: f64) -> usize {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] -= t;
    }
    let mut neg = 0;
    for k in 0..n {
        let mut p = m[k][k];
        if p == 0.0 {
            p = 1e-300;
        }
        if p < 0.0 {
            neg += 1;
        }
        for i in k + 1..n {
            let f = m[i][k] / p;
            for j in k + 1..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    neg
}

/// Smallest eigenvalue by bisection on the inertia count, bracketed by the
/// Gershgorin discs.
pub fn bisect_min_eigenvalue(a: &[Vec<f64>]) -> f64 {
    let radius = a
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let (mut lo, mut hi) = (-radius - 1.0, radius + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(a, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Wilcoxon p-value by enumerating every sign assignment of the ranks.
pub fn wilcoxon_enumeration(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let r = ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w: f64 = r.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let n = d.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..1 << n {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        le += (s <= w + 1e-9) as u64;
        ge += (s >= w - 1e-9) as u64;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
}

fn random_psd(rng: &mut RngStream, n: usize) -> Matrix {
    let b = Matrix::from_fn(n, n, |_, _| rng.normal());
    &b * b.transpose() / n as f64
}

pub fn check_solve_regularized(seed: u64) -> Result<f64, String> {
    let mut rng = RngStream::new(seed, 0);
    let k = random_psd(&mut rng, 30);
    let b = Matrix::from_fn(30, 3, |_, _| rng.normal());
    let x = solve_regularized(&k, 0.1, &b).map_err(|e| e.to_string())?;
    let mut reg = rows(&k);
    (0..30).for_each(|i| reg[i][i] += 0.1);
    let oracle = gauss_solve(&reg, &rows(&b));
    let got: Vec<f64> = rows(&x).concat();
    let err = max_rel(&got, &oracle.concat());
    // (K + λI)⁻¹(K + λI)v = v
    let v = Matrix::from_fn(30, 1, |_, _| rng.normal());
    let kv = &k * &v + &v * 0.1;
    let back = solve_regularized(&k, 0.1, &kv).map_err(|e| e.to_string())?;
    let err = err.max(max_rel(back.as_slice(), v.as_slice()));
    if err > 1e-8 {
        return Err(format!("solve_regularized off by {err:.2e}"));
    }
    Ok(err)
}

pub fn check_ols(seed: u64) -> Result<f64, String> {
    let mut rng = RngStream::new(seed, 1);
    let mut worst = 0.0f64;
    for (n, tol) in [(10usize, 1e-8), (50, 1e-6)] {
        let x = random_points(&mut rng, n, 3);
        let y: Vec<f64> = x
            .rows()
            .map(|r| 0.7 * r[0] - 1.2 * r[1] + 0.3 * r[2] + 0.4 + 0.5 * rng.normal())
            .collect();
        let fit = ols_fit(&x, &y).map_err(|e| e.to_string())?;
        let got = [fit.weights.clone(), vec![fit.intercept]].concat();
        let want = if n == 10 {
            // normal equations of the design [x | 1], ridge 1e-8 on the weights only
            let z: Vec<Vec<f64>> = x.rows().map(|r| [r.to_vec(), vec![1.0]].concat()).collect();
            let mut a = vec![vec![0.0; 4]; 4];
            let mut b = vec![vec![0.0]; 4];
            for (zi, yi) in z.iter().zip(&y) {
                for p in 0..4 {
                    b[p][0] += zi[p] * yi;
                    for q in 0..4 {
                        a[p][q] += zi[p] * zi[q];
                    }
                }
            }
            (0..3).for_each(|j| a[j][j] += 1e-8);
            gauss_solve(&a, &b).concat()
        } else {
            let z = Matrix::from_fn(n, 4, |i, j| if j < 3 { x.get(i, j) } else { 1.0 });
            let pinv = z.pseudo_inverse(1e-12).map_err(|e| e.to_string())?;
            (pinv * Matrix::from_column_slice(n, 1, &y)).as_slice().to_vec()
        };
        let err = max_rel(&got, &want);
        if err > tol {
            return Err(format!("OLS with n = {n} off by {err:.2e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn check_krr(seed: u64) -> Result<f64, String> {
    let mut rng = RngStream::new(seed, 2);
    let x = random_points(&mut rng, 10, 2);
    let y: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
    let t = random_points(&mut rng, 15, 2);
    let kernel = KernelSpec::Gaussian(GaussianKernel::new(1.3).unwrap());
    let lambda = 0.05;
    let fit = krr_fit(&x, &y, kernel, lambda).map_err(|e| e.to_string())?;
    let k = |a: &[f64], b: &[f64]| kernel_eval(&kernel, a, b).unwrap();
    let a: Vec<Vec<f64>> = (0..10)
        .map(|i| (0..10).map(|j| k(x.row(i), x.row(j)) + if i == j { lambda } else { 0.0 }).collect())
        .collect();
    let alpha = gauss_solve(&a, &y.iter().map(|v| vec![*v]).collect::<Vec<_>>()).concat();
    let want: Vec<f64> = t.rows().map(|r| (0..10).map(|i| alpha[i] * k(x.row(i), r)).sum()).collect();
    let got = fit.predict(&t).map_err(|e| e.to_string())?;
    let err = max_rel(&got, &want).max(max_rel(fit.alpha(), &alpha));
    if err > 1e-8 {
        return Err(format!("KRR off by {err:.2e}"));
    }
    Ok(err)
}

pub fn check_wilcoxon(seed: u64) -> Result<usize, String> {
    let mut rng = RngStream::new(seed, 3);
    let mut cases = 0;
    for n in 5..=12 {
        for _ in 0..10 {
            let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let p = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
            let want = wilcoxon_enumeration(&a, &b);
            if (p - want).abs() > 1e-12 {
                return Err(format!("Wilcoxon n = {n}: {p} vs enumeration {want}"));
            }
            cases += 1;
        }
    }
    Ok(cases)
}

pub fn check_min_eigenvalue(seed: u64) -> Result<f64, String> {
    let mut rng = RngStream::new(seed, 4);
    let b = Matrix::from_fn(15, 15, |_, _| rng.normal());
    let a = (&b + b.transpose()) * 0.5;
    let got = min_eigenvalue(&a).map_err(|e| e.to_string())?;
    let want = bisect_min_eigenvalue(&rows(&a));
    let err = (got - want).abs();
    if err > 1e-6 {
        return Err(format!("min eigenvalue {got} vs bisection {want}"));
    }
    Ok(err)
}

/// Conditional moments against rejection sampling: joint draws are kept when
/// every observed coordinate lies within ±0.05 of its value. Errors are
/// measured in units of the marginal scales.
pub fn check_conditional_gaussian(seed: u64) -> Result<f64, String> {
    let mut rng = RngStream::new(seed, 5);
    let b = Matrix::from_fn(5, 5, |_, _| rng.normal());
    let sigma = &b * b.transpose() / 5.0 + Matrix::identity(5, 5) * 0.1;
    let observed = [1usize, 3];
    let unobserved = [0usize, 2, 4];
    let values: Vec<f64> = observed.iter().map(|&i| 0.4 * sigma[(i, i)].sqrt()).collect();
    let (mean, cov) = conditional_gaussian(&sigma, &observed, &values).map_err(|e| e.to_string())?;

    let l = sigma.clone().cholesky().ok_or("Σ not positive definite")?.l();
    let target = 60_000;
    let mut kept: Vec<[f64; 3]> = Vec::with_capacity(target);
    let mut z = [0.0; 5];
    while kept.len() < target {
        z.iter_mut().for_each(|v| *v = rng.normal());
        let x: Vec<f64> = (0..5).map(|r| (0..=r).map(|c| l[(r, c)] * z[c]).sum()).collect();
        if observed.iter().zip(&values).all(|(&i, v)| (x[i] - v).abs() <= 0.05) {
            kept.push([x[0], x[2], x[4]]);
        }
    }
    let n = kept.len() as f64;
    let emp_mean: Vec<f64> = (0..3).map(|j| kept.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut worst = 0.0f64;
    for i in 0..3 {
        let si = sigma[(unobserved[i], unobserved[i])].sqrt();
        worst = worst.max((emp_mean[i] - mean[i]).abs() / si);
        for j in 0..3 {
            let sj = sigma[(unobserved[j], unobserved[j])].sqrt();
            let c = kept.iter().map(|r| (r[i] - emp_mean[i]) * (r[j] - emp_mean[j])).sum::<f64>() / (n - 1.0);
            worst = worst.max((c - cov[(i, j)]).abs() / (si * sj));
        }
    }
    if worst > 0.02 {
        return Err(format!("conditional moments off by {worst:.4} of the marginal scale"));
    }
    Ok(worst)
}

/// Runs every numerics oracle on several seeds.
pub fn numerics_suite() -> Result<String, String> {
    let mut worst = [0.0f64; 4];
    let mut wilcoxon = 0;
    for seed in 0..5 {
        worst[0] = worst[0].max(check_solve_regularized(seed)?);
        worst[1] = worst[1].max(check_ols(seed)?);
        worst[2] = worst[2].max(check_krr(seed)?);
        worst[3] = worst[3].max(check_min_eigenvalue(seed)?);
        wilcoxon += check_wilcoxon(seed)?;
    }
    let cg = check_conditional_gaussian(11)?;
    Ok(format!(
        "solve {:.1e}, ols {:.1e}, krr {:.1e}, eig {:.1e}, {wilcoxon} exact Wilcoxon cases, conditioning {cg:.4}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}
