use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use collider_core::harness::config::OutputFormat;
use collider_core::harness::io::{
    read_results_csv, write_dataset, write_long_csv, write_results_csv, write_summary_json, DATASET_FILES,
};
use collider_core::harness::{
    generate_dataset, long_format, run_ablation, run_experiment, summarize, AblationAxis, ExperimentConfig,
    ExperimentOutput, Summary,
};
use collider_core::Error;

const DEFAULT_CONFIG: &str = include_str!("../default.toml");

#[derive(Parser)]
#[command(name = "collider", version, about = "Collider regression experiments")]
struct Cli {
    /// Added to every configured seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Worker threads (default: one per seed, capped at the available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Output directory (default: $COLLIDER_OUT, then the config's output.dir).
    #[arg(long, global = true, env = "COLLIDER_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML experiment config; the built-in default when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one simulated dataset: five split CSVs, a latent sidecar and metadata.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Seed to simulate (default: the first configured seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the experiment and write results.csv and summary.json.
    Run {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Run the experiment once per value of one axis.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        /// n_train, n_semi or d2.
        #[arg(long)]
        axis: String,
        /// Comma-separated non-negative integers.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Re-summarize existing results CSVs into report.json.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Print the built-in default config.
    Defaults,
}

enum Failure {
    Config(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => Failure::Config(msg),
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => Failure::Io(msg),
            _ => Failure::Numerical(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(cli: &Cli, arg: &ConfigArg) -> Result<ExperimentConfig, Failure> {
    let text = match &arg.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text)?.with_seed_offset(cli.seed_offset);
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| PathBuf::from(&c.output.dir)))
        .unwrap_or_else(|| PathBuf::from("results"))
}

// Fails before any work when an output exists and --overwrite is off.
fn prepare_outputs(dir: &Path, names: &[String], overwrite: bool) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    if !overwrite {
        for n in names {
            let p = dir.join(n);
            if p.exists() {
                return Err(Failure::Io(format!("{} exists (pass --overwrite to replace it)", p.display())));
            }
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate { config, seed } => {
            let cfg = load_config(cli, config)?;
            let seed = seed.map_or_else(|| cfg.seeds()[0], |s| s + cli.seed_offset);
            let dir = out_dir(cli, Some(&cfg));
            let names: Vec<String> = DATASET_FILES.iter().map(|s| s.to_string()).collect();
            prepare_outputs(&dir, &names, cli.overwrite)?;
            let ds = generate_dataset(&cfg.generator, seed)?;
            let files = write_dataset(&dir, &ds, cli.overwrite)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Run { config } => {
            let cfg = load_config(cli, config)?;
            let dir = out_dir(cli, Some(&cfg));
            prepare_outputs(&dir, &output_names(&cfg, ""), cli.overwrite)?;
            let out = run_experiment(&cfg)?;
            write_outputs(&dir, &cfg, &out, "", cli.overwrite)?;
            print_summary(&out.summary);
            if out.all_failed() {
                return Err(Failure::Numerical("every seed failed".into()));
            }
            Ok(())
        }
        Command::Ablate { config, axis, values } => {
            let cfg = load_config(cli, config)?;
            let axis: AblationAxis = axis.parse()?;
            let dir = out_dir(cli, Some(&cfg));
            let mut names = vec!["ablation.csv".to_string()];
            for v in values {
                names.extend(output_names(&cfg, &suffix(axis, *v)));
            }
            prepare_outputs(&dir, &names, cli.overwrite)?;
            let results = run_ablation(&cfg, axis, values)?;
            for (v, out) in &results {
                println!("{} = {v}", axis.name());
                write_outputs(&dir, &cfg, out, &suffix(axis, *v), cli.overwrite)?;
                print_summary(&out.summary);
            }
            write_long_csv(&dir.join("ablation.csv"), &long_format(&results), axis.name(), cli.overwrite)?;
            if results.iter().all(|(_, o)| o.all_failed()) {
                return Err(Failure::Numerical("every seed failed".into()));
            }
            Ok(())
        }
        Command::Report { results } => {
            let mut rows = Vec::new();
            for p in results {
                rows.extend(read_results_csv(p)?);
            }
            let summary = summarize(&rows, "report", None);
            let dir = out_dir(cli, None);
            prepare_outputs(&dir, &["report.json".to_string()], cli.overwrite)?;
            write_summary_json(&dir.join("report.json"), &summary, cli.overwrite)?;
            print_summary(&summary);
            Ok(())
        }
        Command::Defaults => {
            print!("{DEFAULT_CONFIG}");
            Ok(())
        }
    }
}

fn suffix(axis: AblationAxis, v: usize) -> String {
    format!("_{}_{v}", axis.name())
}

fn output_names(cfg: &ExperimentConfig, suffix: &str) -> Vec<String> {
    cfg.output
        .formats
        .iter()
        .map(|f| match f {
            OutputFormat::Csv => format!("results{suffix}.csv"),
            OutputFormat::Json => format!("summary{suffix}.json"),
        })
        .collect()
}

fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &ExperimentOutput,
    suffix: &str,
    overwrite: bool,
) -> Result<(), Failure> {
    for f in &cfg.output.formats {
        match f {
            OutputFormat::Csv => write_results_csv(&dir.join(format!("results{suffix}.csv")), &out.rows, overwrite)?,
            OutputFormat::Json => {
                write_summary_json(&dir.join(format!("summary{suffix}.json")), &out.summary, overwrite)?
            }
        }
    }
    Ok(())
}

fn cell(s: Option<collider_core::harness::Stat>) -> String {
    s.map_or_else(|| "-".into(), |s| format!("{:.4} ± {:.4}", s.mean, s.std))
}

fn print_summary(s: &Summary) {
    println!(
        "{:<16} {:>4} {:>22} {:>22} {:>22} {:>22}",
        "model", "n", "mse", "snr", "correlation", "delta_hat"
    );
    for m in &s.models {
        println!(
            "{:<16} {:>4} {:>22} {:>22} {:>22} {:>22}",
            m.model,
            m.n_ok,
            cell(m.mse),
            cell(m.snr),
            cell(m.correlation),
            cell(m.delta_hat)
        );
    }
    if !s.failed_seeds.is_empty() {
        println!("failed seeds: {:?}", s.failed_seeds);
    }
}
