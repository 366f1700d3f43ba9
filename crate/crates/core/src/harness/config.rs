//! Experiment configuration, read from and written to TOML.
//!
//! ```toml
//! name = "default"
//!
//! [generator]
//! kind = "simple"        # simple | general | gated
//! d1 = 3
//! d2 = 3
//! d3 = 0                 # parents of y; general only, and then ≥ 1
//! sigma = 0.1            # noise on x1
//! seeds = 100            # a count (0..n) or an explicit list
//!
//! [generator.sizes]
//! train = 50
//! semi = 100
//! validation = 100
//! test = 1000
//! oracle_test = 500
//!
//! [models]
//! enabled = ["rf", "p-rf", "krr", "p-krr", "hp-krr"]
//! theta = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]   # multiples of the median heuristic
//! lambda = [...]
//! gamma = [...]
//!
//! [models.forest]
//! max_depth = ["none", 4, 8]
//!
//! [oracle]
//! m = 200
//! n_test = 500
//!
//! [output]
//! dir = "results"
//! ```

use serde::{Deserialize, Serialize};

use crate::cme::CmeMode;
use crate::datagen::{GeneralScales, Layout, Maps, SplitSizes};
use crate::regressors::ForestParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Simple,
    General,
    Gated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub sigma: f64,
    pub maps: Maps,
    pub seeds: Seeds,
    pub sizes: SplitSizes,
    pub scales: GeneralScales,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Simple,
            d1: 3,
            d2: 3,
            d3: 0,
            sigma: 0.1,
            maps: Maps::Nonlinear,
            seeds: Seeds::Count(100),
            sizes: SplitSizes::default(),
            scales: GeneralScales::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn layout(&self) -> Layout {
        match self.kind {
            GeneratorKind::Gated => Layout { d1: 1, d2: 1, d3: 0 },
            GeneratorKind::Simple => Layout {
                d1: self.d1,
                d2: self.d2,
                d3: 0,
            },
            GeneratorKind::General => Layout {
                d1: self.d1,
                d2: self.d2,
                d3: self.d3,
            },
        }
    }
}

/// A forest depth limit, written as an integer or `"none"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaxDepth {
    Limit(usize),
    Keyword(DepthKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKeyword {
    None,
}

impl MaxDepth {
    pub fn get(self) -> Option<usize> {
        match self {
            MaxDepth::Limit(d) => Some(d),
            MaxDepth::Keyword(DepthKeyword::None) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<MaxDepth>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for ForestGrid {
    fn default() -> Self {
        ForestGrid {
            n_estimators: vec![100],
            max_depth: vec![
                MaxDepth::Keyword(DepthKeyword::None),
                MaxDepth::Limit(4),
                MaxDepth::Limit(8),
            ],
            min_samples_split: vec![2, 5],
            min_samples_leaf: vec![1, 3],
        }
    }
}

impl ForestGrid {
    pub fn params(&self) -> Vec<ForestParams> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &d in &self.max_depth {
                for &min_samples_split in &self.min_samples_split {
                    for &min_samples_leaf in &self.min_samples_leaf {
                        out.push(ForestParams {
                            n_estimators,
                            max_depth: d.get(),
                            min_samples_split,
                            min_samples_leaf,
                            bootstrap: true,
                        });
                    }
                }
            }
        }
        out
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

pub const SIMPLE_MODELS: [&str; 5] = ["rf", "p-rf", "krr", "p-krr", "hp-krr"];
pub const GENERAL_MODELS: [&str; 5] = ["rf", "krr", "general-p-rf", "general-p-krr", "general-hp-krr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub enabled: Vec<String>,
    pub cme_mode: CmeMode,
    /// Lengthscale multipliers applied to the median heuristic of each block.
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    /// First-stage grids for the general generator.
    pub theta3: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub forest: ForestGrid,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            enabled: SIMPLE_MODELS.iter().map(|s| s.to_string()).collect(),
            cme_mode: CmeMode::Factored,
            theta: vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
            lambda: log_grid(1e-4, 1.0, 7),
            gamma: log_grid(1e-4, 1.0, 7),
            theta3: vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
            lambda0: log_grid(1e-4, 1.0, 7),
            forest: ForestGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Inner draws per outer point.
    pub m: usize,
    /// Outer points, taken from the oracle-test split.
    pub n_test: usize,
    pub delta: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            m: 200,
            n_test: 500,
            delta: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "results".into(),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Worker threads; unset means one per seed up to the available cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub generator: GeneratorConfig,
    pub models: ModelsConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            jobs: None,
            generator: GeneratorConfig::default(),
            models: ModelsConfig::default(),
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(config_err(field, "must not be empty"));
    }
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(config_err(field, format!("values must be positive, got {bad}")));
    }
    Ok(())
}

fn nonempty_counts(field: &str, v: &[usize]) -> Result<()> {
    if v.is_empty() {
        return Err(config_err(field, "must not be empty"));
    }
    if v.contains(&0) {
        return Err(config_err(field, "values must be positive"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.generator.seeds.resolve()
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        if offset != 0 {
            let seeds = self.seeds().into_iter().map(|s| s + offset).collect();
            self.generator.seeds = Seeds::List(seeds);
        }
        self
    }

    pub fn allowed_models(&self) -> &'static [&'static str] {
        match self.generator.kind {
            GeneratorKind::General => &GENERAL_MODELS,
            _ => &SIMPLE_MODELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        if self.seeds().is_empty() {
            return Err(config_err("generator.seeds", "must not be empty"));
        }
        let mut seen = self.seeds();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("generator.seeds", "duplicate seed"));
        }
        if !(g.sigma >= 0.0) || !g.sigma.is_finite() {
            return Err(config_err("generator.sigma", "must be non-negative"));
        }
        match g.kind {
            GeneratorKind::Simple => {
                if g.d1 == 0 || g.d2 == 0 {
                    return Err(config_err("generator.d1", "d1 and d2 must be positive"));
                }
                if g.d3 != 0 {
                    return Err(config_err("generator.d3", "only the general generator has parents of y"));
                }
            }
            GeneratorKind::General => {
                if g.d1 == 0 || g.d2 == 0 {
                    return Err(config_err("generator.d1", "d1 and d2 must be positive"));
                }
                if g.d3 == 0 {
                    return Err(config_err("generator.d3", "the general generator needs d3 ≥ 1"));
                }
            }
            GeneratorKind::Gated => {}
        }
        let s = &g.sizes;
        for (field, n, min) in [
            ("generator.sizes.train", s.train, 2),
            ("generator.sizes.validation", s.validation, 2),
            ("generator.sizes.test", s.test, 2),
        ] {
            if n < min {
                return Err(config_err(field, format!("must be at least {min}")));
            }
        }
        let m = &self.models;
        if m.enabled.is_empty() {
            return Err(config_err("models.enabled", "must not be empty"));
        }
        let allowed = self.allowed_models();
        for (i, name) in m.enabled.iter().enumerate() {
            if !allowed.contains(&name.as_str()) {
                return Err(config_err(
                    "models.enabled",
                    format!("unknown model {name:?} for this generator (expected one of {})", allowed.join(", ")),
                ));
            }
            if m.enabled[..i].contains(name) {
                return Err(config_err("models.enabled", format!("{name:?} listed twice")));
            }
        }
        positive("models.theta", &m.theta)?;
        positive("models.lambda", &m.lambda)?;
        positive("models.gamma", &m.gamma)?;
        if g.kind == GeneratorKind::General {
            positive("models.theta3", &m.theta3)?;
            positive("models.lambda0", &m.lambda0)?;
        }
        nonempty_counts("models.forest.n_estimators", &m.forest.n_estimators)?;
        nonempty_counts("models.forest.min_samples_split", &m.forest.min_samples_split)?;
        nonempty_counts("models.forest.min_samples_leaf", &m.forest.min_samples_leaf)?;
        if m.forest.max_depth.is_empty() {
            return Err(config_err("models.forest.max_depth", "must not be empty"));
        }
        if m.forest.max_depth.contains(&MaxDepth::Limit(0)) {
            return Err(config_err("models.forest.max_depth", "depth limits must be positive"));
        }
        if self.oracle.delta {
            if self.oracle.m == 0 {
                return Err(config_err("oracle.m", "must be positive"));
            }
            if self.oracle.n_test == 0 || self.oracle.n_test > s.oracle_test {
                return Err(config_err(
                    "oracle.n_test",
                    format!("must be between 1 and generator.sizes.oracle_test ({})", s.oracle_test),
                ));
            }
        }
        if self.jobs == Some(0) {
            return Err(config_err("jobs", "must be positive"));
        }
        if self.output.dir.is_empty() {
            return Err(config_err("output.dir", "must not be empty"));
        }
        Ok(())
    }
}
