//! Per-seed model comparison: generate a dataset, tune every enabled model on
//! the validation split, score it on the test split, and estimate the gap to
//! the exact projection for the unprojected baselines.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GeneratorConfig, GeneratorKind};
use super::delta::{delta_mc, delta_mc_general, DeltaEstimate};
use super::grid::{grid_search_cv, GridSpec};
use super::metrics::{compute_metrics, mse, Metrics};
use super::wilcoxon::wilcoxon_signed_rank;
use crate::cme::{fit_cme, CmeFit, CmeMode, RPlus};
use crate::collider::{
    hpkrr_from_gram, pkrr_from_parts, project_fitted, GeneralColliderFit, ProjectedModel,
};
use crate::datagen::{
    make_general_coefficients, make_sigma, simulate, simulate_gated, simulate_general_with, Layout,
    SimDataset, STREAM_ORACLE_DRAWS, STREAM_SIGMA,
};
use crate::kernels::{gram, gram_sym, gram_unchecked, ColliderKernel, GaussianKernel, KernelSpec, PreparedPoints, ProjectedKernel};
use crate::numerics::{cholesky_psd, mean, median_sq_distance, std_dev, JitterPolicy, Matrix, Points, RngStream};
use crate::regressors::{forest_fit, krr_from_gram, FittedKrr, FittedModel, Predictor, RegressorSpec};
use crate::{Error, Result, VERSION};

/// One row per (seed, model). Δ rows carry only `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub model: String,
    pub metrics: Option<Metrics>,
    pub delta: Option<DeltaEstimate>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

impl SeedResult {
    fn new(seed: u64, model: &str) -> Self {
        SeedResult {
            seed,
            model: model.to_string(),
            metrics: None,
            delta: None,
            theta1: None,
            theta2: None,
            lambda: None,
            gamma: None,
            wall_ms: 0.0,
            error: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &SeedResult) -> bool {
        SeedResult { wall_ms: 0.0, ..self.clone() } == SeedResult { wall_ms: 0.0, ..other.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(v: &[f64]) -> Option<Stat> {
        (!v.is_empty()).then(|| Stat {
            mean: mean(v),
            std: std_dev(v),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mse: Option<Stat>,
    pub snr: Option<Stat>,
    pub correlation: Option<Stat>,
    pub delta_hat: Option<Stat>,
}

/// Two-tailed signed-rank p-values on test MSE over seeds where both models
/// succeeded. Row `i` holds the entries for columns `j < i`; `None` when the
/// test is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonTable {
    pub models: Vec<String>,
    pub p_values: Vec<Vec<Option<f64>>>,
}

impl WilcoxonTable {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.models.iter().position(|m| m == a)?;
        let j = self.models.iter().position(|m| m == b)?;
        match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.p_values[i][j],
            std::cmp::Ordering::Less => self.p_values[j][i],
            std::cmp::Ordering::Equal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub version: String,
    pub n_seeds: usize,
    pub models: Vec<ModelSummary>,
    pub wilcoxon_mse: WilcoxonTable,
    pub failed_seeds: Vec<u64>,
    pub failures: Vec<Failure>,
    pub config: Option<ExperimentConfig>,
}

impl Summary {
    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn mean_mse(&self, name: &str) -> Option<f64> {
        self.model(name)?.mse.map(|s| s.mean)
    }

    pub fn mean_delta(&self, name: &str) -> Option<f64> {
        self.model(name)?.delta_hat.map(|s| s.mean)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<SeedResult>,
    pub summary: Summary,
}

impl ExperimentOutput {
    /// True when every seed failed for every model.
    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| !r.is_ok())
    }
}

/// Aggregates rows into per-model statistics, in order of first appearance.
pub fn summarize(rows: &[SeedResult], name: &str, config: Option<&ExperimentConfig>) -> Summary {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.model) {
            order.push(r.model.clone());
        }
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let models: Vec<ModelSummary> = order
        .iter()
        .map(|m| {
            let mine: Vec<&SeedResult> = rows.iter().filter(|r| &r.model == m).collect();
            let ok: Vec<&&SeedResult> = mine.iter().filter(|r| r.is_ok()).collect();
            let pick = |f: &dyn Fn(&Metrics) -> f64| {
                Stat::of(&ok.iter().filter_map(|r| r.metrics.as_ref().map(f)).collect::<Vec<_>>())
            };
            ModelSummary {
                model: m.clone(),
                n_ok: ok.len(),
                n_failed: mine.len() - ok.len(),
                mse: pick(&|x| x.mse),
                snr: pick(&|x| x.snr),
                correlation: pick(&|x| x.correlation),
                delta_hat: Stat::of(&ok.iter().filter_map(|r| r.delta.map(|d| d.delta_hat)).collect::<Vec<_>>()),
            }
        })
        .collect();
    let scored: Vec<String> = models.iter().filter(|m| m.mse.is_some()).map(|m| m.model.clone()).collect();
    let by_seed: HashMap<(&str, u64), f64> = rows
        .iter()
        .filter_map(|r| r.metrics.map(|m| ((r.model.as_str(), r.seed), m.mse)))
        .collect();
    let p_values = (0..scored.len())
        .map(|i| {
            (0..i)
                .map(|j| {
                    let (a, b): (Vec<f64>, Vec<f64>) = seeds
                        .iter()
                        .filter_map(|&s| {
                            Some((*by_seed.get(&(scored[i].as_str(), s))?, *by_seed.get(&(scored[j].as_str(), s))?))
                        })
                        .unzip();
                    wilcoxon_signed_rank(&a, &b).ok()
                })
                .collect()
        })
        .collect();
    let failures: Vec<Failure> = rows
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| Failure {
                seed: r.seed,
                model: r.model.clone(),
                error: e.clone(),
            })
        })
        .collect();
    let mut failed_seeds: Vec<u64> = failures.iter().map(|f| f.seed).collect();
    failed_seeds.sort_unstable();
    failed_seeds.dedup();
    Summary {
        name: name.to_string(),
        version: VERSION.to_string(),
        n_seeds: seeds.len(),
        models,
        wilcoxon_mse: WilcoxonTable {
            models: scored,
            p_values,
        },
        failed_seeds,
        failures,
        config: config.cloned(),
    }
}

/// Simulates the dataset of one seed.
pub fn generate_dataset(g: &GeneratorConfig, seed: u64) -> Result<SimDataset> {
    match g.kind {
        GeneratorKind::Simple => {
            let spec = make_sigma(g.d1, g.d2, &mut RngStream::new(seed, STREAM_SIGMA))?;
            simulate(&spec, g.sigma, &g.sizes, seed, g.maps)
        }
        GeneratorKind::General => {
            let layout = g.layout();
            let coef = make_general_coefficients(layout, &g.scales, &mut RngStream::new(seed, STREAM_SIGMA))?;
            simulate_general_with(layout, coef, g.sigma, &g.sizes, seed, g.maps)
        }
        GeneratorKind::Gated => Ok(simulate_gated(&g.sizes, seed)),
    }
}

/// Runs every seed (in parallel) and aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let jobs = cfg
        .jobs
        .unwrap_or_else(|| seeds.len().min(std::thread::available_parallelism().map_or(1, |n| n.get())))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("jobs: {e}")))?;
    let per_seed: Vec<Vec<SeedResult>> = pool.install(|| seeds.par_iter().map(|&s| run_seed(cfg, s)).collect());
    let rows: Vec<SeedResult> = per_seed.into_iter().flatten().collect();
    let summary = summarize(&rows, &cfg.name, Some(cfg));
    Ok(ExperimentOutput { rows, summary })
}

/// All rows for one seed; failures are recorded in the rows, never returned.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Vec<SeedResult> {
    let mut names: Vec<String> = cfg.models.enabled.clone();
    if cfg.oracle.delta {
        for (base, row) in [("krr", "delta-krr"), ("rf", "delta-rf")] {
            if names.iter().any(|n| n == base) {
                names.push(row.to_string());
            }
        }
    }
    let mut runner = match SeedRunner::new(cfg, seed) {
        Ok(r) => r,
        Err(e) => {
            return names
                .iter()
                .map(|n| SeedResult {
                    error: Some(format!("dataset: {e}")),
                    ..SeedResult::new(seed, n)
                })
                .collect()
        }
    };
    names.iter().map(|n| runner.run(n)).collect()
}

/// Validation-tuned KRR with its kernel.
#[derive(Clone)]
struct TunedKrr {
    fit: FittedKrr,
    kernel: ColliderKernel,
}

#[derive(Clone)]
struct TunedForest {
    fit: FittedModel,
}

struct SeedRunner<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    ds: SimDataset,
    layout: Layout,
    x_tr: Points,
    y_tr: Vec<f64>,
    x_val: Points,
    y_val: Vec<f64>,
    x_te: Points,
    y_te: Vec<f64>,
    anchors: Points,
    unlabeled: Points,
    med1: f64,
    med2: f64,
    // first stage, general generator only
    f0: Option<Result<(FittedModel, Vec<f64>, Vec<f64>)>>,
    krr: Option<Result<TunedKrr>>,
    krr_resid: Option<Result<TunedKrr>>,
    rf: Option<Result<TunedForest>>,
    rf_resid: Option<Result<TunedForest>>,
}

fn shared<T: Clone>(slot: &Option<Result<T>>) -> Result<T> {
    match slot.as_ref().expect("slot filled before use") {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::InvalidParameter(format!("tuning failed: {e}"))),
    }
}

impl<'a> SeedRunner<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64) -> Result<Self> {
        let ds = generate_dataset(&cfg.generator, seed)?;
        let layout = ds.layout;
        let x_tr = ds.train.x.clone();
        let y_tr = ds.train.targets()?.to_vec();
        let unlabeled = ds.semi.x.clone();
        let anchors = if unlabeled.is_empty() { x_tr.clone() } else { x_tr.vstack(&unlabeled)? };
        let dim = layout.dim();
        let med1 = median_sq_distance(&anchors.columns(0, layout.d1));
        let med2 = median_sq_distance(&anchors.columns(layout.d1, dim));
        Ok(SeedRunner {
            cfg,
            seed,
            layout,
            x_tr,
            y_tr,
            x_val: ds.validation.x.clone(),
            y_val: ds.validation.targets()?.to_vec(),
            x_te: ds.test.x.clone(),
            y_te: ds.test.targets()?.to_vec(),
            anchors,
            unlabeled,
            med1,
            med2,
            ds,
            f0: None,
            krr: None,
            krr_resid: None,
            rf: None,
            rf_resid: None,
        })
    }

    fn general(&self) -> bool {
        self.cfg.generator.kind == GeneratorKind::General
    }

    fn run(&mut self, name: &str) -> SeedResult {
        let start = Instant::now();
        let mut row = SeedResult::new(self.seed, name);
        match self.run_model(name, &mut row) {
            Ok(()) => {}
            Err(e) => {
                row.metrics = None;
                row.error = Some(e.to_string());
            }
        }
        row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        row
    }

    fn score<P: Predictor + ?Sized>(&self, model: &P, row: &mut SeedResult) -> Result<()> {
        let pred = model.predict(&self.x_te)?;
        row.metrics = Some(compute_metrics(&pred, &self.y_te)?);
        Ok(())
    }

    fn record_kernel(row: &mut SeedResult, k: &ColliderKernel, lambda: f64) {
        row.theta1 = Some(k.r.theta());
        row.theta2 = Some(k.ell.theta());
        row.lambda = Some(lambda);
    }

    fn run_model(&mut self, name: &str, row: &mut SeedResult) -> Result<()> {
        let d1 = self.layout.d1;
        let mode = self.cfg.models.cme_mode;
        match name {
            "krr" => {
                let t = self.tuned_krr(false)?;
                Self::record_kernel(row, &t.kernel, t.fit.lambda());
                self.score(&t.fit, row)
            }
            "rf" => {
                let t = self.tuned_rf(false)?;
                self.score(&t.fit, row)
            }
            "p-rf" | "general-p-rf" => {
                let resid = name != "p-rf";
                let t = self.tuned_rf(resid)?;
                let (targets, _) = self.targets(resid)?;
                let p = project_fitted(t.fit, &RegressorSpec::Ols, &self.x_tr, &self.unlabeled, d1, mean(&targets))?;
                if resid {
                    let f0 = self.first_stage()?.0;
                    self.score(&GeneralColliderFit::from_parts(f0, ProjectedModel::TwoStage(p), self.layout.d3), row)
                } else {
                    self.score(&p, row)
                }
            }
            "p-krr" | "general-p-krr" => {
                let resid = name != "p-krr";
                let t = self.tuned_krr(resid)?;
                let (_, val) = self.targets(resid)?;
                let k = t.kernel;
                let candidates = GridSpec {
                    gamma: self.cfg.models.gamma.clone(),
                    ..Default::default()
                }
                .candidates();
                let best = grid_search_cv(&candidates, |c| {
                    let cme = self.fit_cme(k, c.gamma.unwrap(), mode)?;
                    let p = pkrr_from_parts(t.fit.clone(), cme)?;
                    let pred = p.predict(&self.x_val)?;
                    Ok((mse(&pred, &val), p))
                })?;
                Self::record_kernel(row, &k, t.fit.lambda());
                row.gamma = best.best.gamma;
                if resid {
                    let f0 = self.first_stage()?.0;
                    let m = GeneralColliderFit::from_parts(f0, ProjectedModel::Pkrr(best.fitted), self.layout.d3);
                    self.score(&m, row)
                } else {
                    self.score(&best.fitted, row)
                }
            }
            "hp-krr" | "general-hp-krr" => {
                let resid = name != "hp-krr";
                let (fit, k, gamma) = self.tune_hpkrr(resid)?;
                Self::record_kernel(row, &k, fit.lambda());
                row.gamma = Some(gamma);
                if resid {
                    let f0 = self.first_stage()?.0;
                    let m = GeneralColliderFit::from_parts(f0, ProjectedModel::HpKrr(fit), self.layout.d3);
                    self.score(&m, row)
                } else {
                    self.score(&fit, row)
                }
            }
            "delta-krr" | "delta-rf" => {
                let (h, stream): (Box<dyn Predictor>, u64) = if name == "delta-krr" {
                    let t = self.tuned_krr(false)?;
                    Self::record_kernel(row, &t.kernel, t.fit.lambda());
                    (Box::new(t.fit), STREAM_ORACLE_DRAWS)
                } else {
                    (Box::new(self.tuned_rf(false)?.fit), STREAM_ORACLE_DRAWS + 1)
                };
                let mut rng = RngStream::new(self.seed, stream);
                let (m, n) = (self.cfg.oracle.m, self.cfg.oracle.n_test);
                row.delta = Some(if self.general() {
                    let f0 = FirstStage {
                        model: self.first_stage()?.0,
                        d3: self.layout.d3,
                    };
                    delta_mc_general(&h, &f0, &self.ds, m, n, &mut rng)?
                } else {
                    delta_mc(&h, &self.ds, m, n, &mut rng)?
                });
                Ok(())
            }
            other => Err(Error::Config(format!("models.enabled: unknown model {other:?}"))),
        }
    }

    /// Training and validation targets: raw, or residuals of the first stage.
    fn targets(&mut self, resid: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        if resid {
            let (_, tr, val) = self.first_stage()?;
            Ok((tr, val))
        } else {
            Ok((self.y_tr.clone(), self.y_val.clone()))
        }
    }

    fn first_stage(&mut self) -> Result<(FittedModel, Vec<f64>, Vec<f64>)> {
        if self.f0.is_none() {
            self.f0 = Some(self.tune_first_stage());
        }
        shared(&self.f0)
    }

    fn tune_first_stage(&self) -> Result<(FittedModel, Vec<f64>, Vec<f64>)> {
        let dim = self.layout.dim();
        let lo = dim - self.layout.d3;
        let x3 = self.x_tr.columns(lo, dim);
        let x3_val = self.x_val.columns(lo, dim);
        let med3 = median_sq_distance(&self.anchors.columns(lo, dim));
        let grid = GridSpec {
            theta3: self.cfg.models.theta3.iter().map(|t| t * med3).collect(),
            lambda: self.cfg.models.lambda0.clone(),
            ..Default::default()
        };
        let offset = mean(&self.y_tr);
        let mut cache: Option<(u64, Matrix, Matrix)> = None;
        let best = grid_search_cv(&grid.candidates(), |c| {
            let theta = c.theta3.unwrap();
            let spec = KernelSpec::Gaussian(GaussianKernel::new(theta)?);
            if cache.as_ref().map(|c| c.0) != Some(theta.to_bits()) {
                cache = Some((theta.to_bits(), gram_sym(&spec, &x3)?, gram(&spec, &x3_val, &x3)?));
            }
            let (_, k, kv) = cache.as_ref().unwrap();
            let fit = krr_from_gram(k, &x3, &self.y_tr, spec, c.lambda.unwrap(), offset)?;
            Ok((mse(&fit.predict_from_cross(kv), &self.y_val), fit))
        })?;
        let f0 = FittedModel::Krr(best.fitted);
        let tr = f0.predict(&x3)?;
        let val = f0.predict(&x3_val)?;
        let r_tr = self.y_tr.iter().zip(&tr).map(|(a, b)| a - b).collect();
        let r_val = self.y_val.iter().zip(&val).map(|(a, b)| a - b).collect();
        Ok((f0, r_tr, r_val))
    }

    fn kernel_grid(&self) -> (Vec<f64>, Vec<f64>) {
        let t = &self.cfg.models.theta;
        (t.iter().map(|v| v * self.med1).collect(), t.iter().map(|v| v * self.med2).collect())
    }

    fn collider(&self, theta1: f64, theta2: f64) -> Result<ColliderKernel> {
        ColliderKernel::new(theta1, theta2, self.layout.d1, self.layout.dim() - self.layout.d1)
    }

    fn tuned_krr(&mut self, resid: bool) -> Result<TunedKrr> {
        // without a first stage the residual model is the plain one
        let resid = resid && self.general();
        if resid {
            if self.krr_resid.is_none() {
                let (tr, val) = self.targets(true)?;
                self.krr_resid = Some(self.tune_krr(&tr, &val));
            }
            shared(&self.krr_resid)
        } else {
            if self.krr.is_none() {
                let (tr, val) = (self.y_tr.clone(), self.y_val.clone());
                self.krr = Some(self.tune_krr(&tr, &val));
            }
            shared(&self.krr)
        }
    }

    fn tune_krr(&self, t_tr: &[f64], t_val: &[f64]) -> Result<TunedKrr> {
        let (theta1, theta2) = self.kernel_grid();
        let grid = GridSpec {
            theta1,
            theta2,
            lambda: self.cfg.models.lambda.clone(),
            ..Default::default()
        };
        let offset = mean(t_tr);
        let mut cache: Option<((u64, u64), Matrix, Matrix)> = None;
        let best = grid_search_cv(&grid.candidates(), |c| {
            let k = self.collider(c.theta1.unwrap(), c.theta2.unwrap())?;
            let key = (k.r.theta().to_bits(), k.ell.theta().to_bits());
            if cache.as_ref().map(|c| c.0) != Some(key) {
                let spec = KernelSpec::Collider(k);
                cache = Some((key, gram_sym(&spec, &self.x_tr)?, gram(&spec, &self.x_val, &self.x_tr)?));
            }
            let (_, g, gv) = cache.as_ref().unwrap();
            let fit = krr_from_gram(g, &self.x_tr, t_tr, k.into(), c.lambda.unwrap(), offset)?;
            Ok((mse(&fit.predict_from_cross(gv), t_val), TunedKrr { fit, kernel: k }))
        })?;
        Ok(best.fitted)
    }

    fn fit_cme(&self, k: ColliderKernel, gamma: f64, mode: CmeMode) -> Result<CmeFit> {
        let dim = self.layout.dim();
        fit_cme(&self.anchors, &self.anchors.columns(self.layout.d1, dim), k.ell, gamma, k.into(), mode)
    }

    fn tune_hpkrr(&mut self, resid: bool) -> Result<(crate::collider::HpKrrFit, ColliderKernel, f64)> {
        let resid = resid && self.general();
        let (t_tr, t_val) = self.targets(resid)?;
        let mode = self.cfg.models.cme_mode;
        let (theta1, theta2) = self.kernel_grid();
        let grid = GridSpec {
            theta1,
            theta2,
            gamma: self.cfg.models.gamma.clone(),
            lambda: self.cfg.models.lambda.clone(),
            ..Default::default()
        };
        let offset = mean(&t_tr);
        let yc: Vec<f64> = t_tr.iter().map(|v| v - offset).collect();
        // CME weights depend only on (θ2, γ) and, in factored mode, the r⁺
        // blocks only on θ1
        let mut weights: HashMap<(u64, u64), (CmeFit, PreparedPoints, PreparedPoints)> = HashMap::new();
        let mut blocks: HashMap<u64, [Matrix; 3]> = HashMap::new();
        let mut grams: Option<((u64, u64, u64), Matrix, Matrix)> = None;
        let best = grid_search_cv(&grid.candidates(), |c| {
            let (t1, t2, g) = (c.theta1.unwrap(), c.theta2.unwrap(), c.gamma.unwrap());
            let k = self.collider(t1, t2)?;
            let key = (t1.to_bits(), t2.to_bits(), g.to_bits());
            if grams.as_ref().map(|v| v.0) != Some(key) {
                let (pk, ptr, pval) = if mode == CmeMode::Factored {
                    let (cme0, ptr0, pval0) = match weights.entry((t2.to_bits(), g.to_bits())) {
                        Entry::Occupied(e) => e.into_mut(),
                        Entry::Vacant(e) => {
                            let cme = self.fit_cme(k, g, mode)?;
                            let ptr = cme.prepare(&self.x_tr)?;
                            let pval = cme.prepare(&self.x_val)?;
                            e.insert((cme, ptr, pval))
                        }
                    };
                    let [raa, rtr, rval] = match blocks.entry(t1.to_bits()) {
                        Entry::Occupied(e) => e.into_mut(),
                        Entry::Vacant(e) => e.insert(self.r_blocks(k.r)),
                    };
                    let pk = ProjectedKernel::from_anchor_gram(cme0.with_first_lengthscale(t1)?, raa.clone());
                    let ptr = PreparedPoints {
                        points: ptr0.points.clone(),
                        weights: ptr0.weights.clone(),
                        anchor_cross: rtr.clone(),
                    };
                    let pval = PreparedPoints {
                        points: pval0.points.clone(),
                        weights: pval0.weights.clone(),
                        anchor_cross: rval.clone(),
                    };
                    (pk, ptr, pval)
                } else {
                    let pk = ProjectedKernel::new(self.fit_cme(k, g, mode)?);
                    let ptr = pk.prepare(&self.x_tr)?;
                    let pval = pk.prepare(&self.x_val)?;
                    (pk, ptr, pval)
                };
                let gt = pk.gram_prepared(&ptr, &ptr);
                let gv = pk.gram_prepared(&pval, &ptr);
                grams = Some((key, gt, gv));
            }
            let (_, gt, gv) = grams.as_ref().unwrap();
            let pred = ridge_predict(gt, gv, &yc, c.lambda.unwrap(), offset)?;
            Ok((mse(&pred, &t_val), ()))
        })?;
        let c = best.best;
        let k = self.collider(c.theta1.unwrap(), c.theta2.unwrap())?;
        let gamma = c.gamma.unwrap();
        let pk = ProjectedKernel::new(self.fit_cme(k, gamma, mode)?);
        let ptr = pk.prepare(&self.x_tr)?;
        let gt = pk.gram_prepared(&ptr, &ptr);
        let fit = hpkrr_from_gram(pk, ptr, &gt, &t_tr, c.lambda.unwrap())?;
        Ok((fit, k, gamma))
    }

    // r⁺ over anchors × anchors, anchors × train and anchors × validation
    fn r_blocks(&self, r: GaussianKernel) -> [Matrix; 3] {
        let d1 = self.layout.d1;
        let a1 = self.anchors.columns(0, d1);
        let rp = RPlus(r);
        [
            gram_unchecked(&rp, &a1, &a1),
            gram_unchecked(&rp, &a1, &self.x_tr.columns(0, d1)),
            gram_unchecked(&rp, &a1, &self.x_val.columns(0, d1)),
        ]
    }

    fn tuned_rf(&mut self, resid: bool) -> Result<TunedForest> {
        let resid = resid && self.general();
        if resid {
            if self.rf_resid.is_none() {
                let (tr, val) = self.targets(true)?;
                self.rf_resid = Some(self.tune_rf(&tr, &val));
            }
            shared(&self.rf_resid)
        } else {
            if self.rf.is_none() {
                let (tr, val) = (self.y_tr.clone(), self.y_val.clone());
                self.rf = Some(self.tune_rf(&tr, &val));
            }
            shared(&self.rf)
        }
    }

    fn tune_rf(&self, t_tr: &[f64], t_val: &[f64]) -> Result<TunedForest> {
        let grid = GridSpec {
            forest: self.cfg.models.forest.params(),
            ..Default::default()
        };
        let best = grid_search_cv(&grid.candidates(), |c| {
            let fit = forest_fit(&self.x_tr, t_tr, c.forest.as_ref().unwrap(), self.seed)?;
            let pred = fit.predict(&self.x_val)?;
            Ok((mse(&pred, t_val), fit))
        })?;
        Ok(TunedForest {
            fit: FittedModel::Forest(best.fitted),
        })
    }
}

/// `offset + G_val (G + λI)⁻¹ yc`, the validation predictions of a ridge fit
/// on a precomputed Gram.
fn ridge_predict(g: &Matrix, gv: &Matrix, yc: &[f64], lambda: f64, offset: f64) -> Result<Vec<f64>> {
    let n = yc.len();
    let mut sys = (g + g.transpose()) * 0.5;
    for i in 0..n {
        sys[(i, i)] += lambda;
    }
    let beta = cholesky_psd(&sys, JitterPolicy::default())?.solve_vec(yc)?;
    Ok((0..gv.nrows())
        .map(|i| offset + gv.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// A first-stage model on the trailing `d3` columns, applied to full rows.
struct FirstStage {
    model: FittedModel,
    d3: usize,
}

impl Predictor for FirstStage {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        self.model.predict(&x.columns(x.dim() - self.d3, x.dim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    NTrain,
    NSemi,
    D2,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::NTrain => "n_train",
            AblationAxis::NSemi => "n_semi",
            AblationAxis::D2 => "d2",
        }
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_train" => Ok(AblationAxis::NTrain),
            "n_semi" => Ok(AblationAxis::NSemi),
            "d2" => Ok(AblationAxis::D2),
            other => Err(Error::Config(format!("axis: unknown axis {other:?} (expected n_train, n_semi or d2)"))),
        }
    }
}

/// The configuration with one axis set to `value`.
pub fn ablation_config(cfg: &ExperimentConfig, axis: AblationAxis, value: usize) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        AblationAxis::NTrain => c.generator.sizes.train = value,
        AblationAxis::NSemi => c.generator.sizes.semi = value,
        AblationAxis::D2 => {
            if c.generator.kind == GeneratorKind::Gated {
                return Err(Error::Config("axis: the gated generator has a fixed d2".into()));
            }
            c.generator.d2 = value;
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn run_ablation(
    cfg: &ExperimentConfig,
    axis: AblationAxis,
    values: &[usize],
) -> Result<Vec<(usize, ExperimentOutput)>> {
    if values.is_empty() {
        return Err(Error::Config("values: must not be empty".into()));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| ablation_config(cfg, axis, v))
        .collect::<Result<_>>()?;
    values
        .iter()
        .zip(&configs)
        .map(|(&v, c)| Ok((v, run_experiment(c)?)))
        .collect()
}

/// One line of the long-format ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub axis_value: usize,
    pub model: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

pub fn long_format(results: &[(usize, ExperimentOutput)]) -> Vec<LongRow> {
    let mut out = Vec::new();
    for (v, r) in results {
        for m in &r.summary.models {
            for (metric, stat) in [
                ("mse", m.mse),
                ("snr", m.snr),
                ("correlation", m.correlation),
                ("delta_hat", m.delta_hat),
            ] {
                if let Some(s) = stat {
                    out.push(LongRow {
                        axis_value: *v,
                        model: m.model.clone(),
                        metric: metric.to_string(),
                        mean: s.mean,
                        std: s.std,
                    });
                }
            }
        }
    }
    out
}
