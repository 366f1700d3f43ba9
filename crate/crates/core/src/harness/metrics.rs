use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Test-set metrics. `snr` is `var(predictions) / mse`, infinite for a
/// perfect fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub snr: f64,
    pub correlation: f64,
}

pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = targets.len();
    if n < 2 {
        return Err(Error::EmptyData("metrics need at least two points".into()));
    }
    let nf = n as f64;
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / nf;
    let pm = predictions.iter().sum::<f64>() / nf;
    let tm = targets.iter().sum::<f64>() / nf;
    let (mut spp, mut stt, mut spt) = (0.0, 0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        let (a, b) = (p - pm, t - tm);
        spp += a * a;
        stt += b * b;
        spt += a * b;
    }
    if stt == 0.0 {
        return Err(Error::ZeroVariance("targets"));
    }
    let correlation = if spp == 0.0 {
        0.0
    } else {
        (spt / (spp * stt).sqrt()).clamp(-1.0, 1.0)
    };
    let var_pred = spp / nf;
    let snr = if mse == 0.0 { f64::INFINITY } else { var_pred / mse };
    Ok(Metrics {
        mse,
        snr,
        correlation,
    })
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> f64 {
    let n = targets.len().max(1) as f64;
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Average ranks (ties share the mean rank), starting at 1.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    compute_metrics(&ra, &rb).ok().map(|m| m.correlation).filter(|_| {
        ra.iter().any(|&x| x != ra[0])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn perfect_fit() {
        let t = [1.0, 2.0, 4.0];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.correlation, 1.0);
        assert!(m.snr.is_infinite());
    }

    #[test]
    fn null_predictor() {
        let t = [1.0, -1.0, 1.0, -1.0];
        let m = compute_metrics(&[0.0; 4], &t).unwrap();
        assert_eq!(m.mse, 1.0);
        assert_eq!(m.snr, 0.0);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = RngStream::new(1, 0);
        let p: Vec<f64> = (0..100).map(|_| rng.normal()).collect();
        let t: Vec<f64> = p.iter().map(|v| v + 0.5 * rng.normal()).collect();
        let m = compute_metrics(&p, &t).unwrap();
        // reversed summation order, textbook formulas
        let n = 100.0;
        let mut sq = 0.0;
        let (mut sp, mut st, mut spp, mut stt, mut spt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in (0..100).rev() {
            sq += (p[i] - t[i]).powi(2);
            sp += p[i];
            st += t[i];
            spp += p[i] * p[i];
            stt += t[i] * t[i];
            spt += p[i] * t[i];
        }
        let mse = sq / n;
        let cov = spt / n - sp * st / (n * n);
        let vp = spp / n - sp * sp / (n * n);
        let vt = stt / n - st * st / (n * n);
        assert!((m.mse - mse).abs() < 1e-12);
        assert!((m.correlation - cov / (vp * vt).sqrt()).abs() < 1e-12);
        assert!((m.snr - vp / mse).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::ZeroVariance(_))));
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(compute_metrics(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rank_helpers() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 7.0, 5.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
