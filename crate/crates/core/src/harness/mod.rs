//! Evaluation: metrics, Monte-Carlo gap estimates, the kernel-ridge lower
//! bound, validation grid search, signed-rank tests and the experiment runner.

mod bound;
pub mod config;
mod delta;
mod experiment;
mod grid;
pub mod io;
mod metrics;
mod wilcoxon;

pub use bound::{theorem_bound, BoundEstimate};
pub use config::ExperimentConfig;
pub use delta::{delta_mc, delta_mc_general, DeltaEstimate};
pub use experiment::{
    ablation_config, generate_dataset, long_format, run_ablation, run_experiment, run_seed, summarize,
    AblationAxis, ExperimentOutput, Failure, LongRow, ModelSummary, SeedResult, Stat, Summary, WilcoxonTable,
};
pub use grid::{grid_search_cv, regularization_order, select_best, Candidate, GridResult, GridSpec};
pub use metrics::{compute_metrics, mse, ranks, spearman, Metrics};
pub use wilcoxon::{wilcoxon_signed_rank, EXACT_LIMIT};
