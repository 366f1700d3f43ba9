//! CSV and JSON writers for datasets, per-seed results and summaries.
//!
//! Floats are written in Rust's shortest round-trip form, so identical runs
//! produce identical bytes.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::experiment::{LongRow, SeedResult, Summary};
use super::metrics::Metrics;
use super::delta::DeltaEstimate;
use crate::datagen::{GeneratorModel, SimDataset};
use crate::numerics::Matrix;
use crate::{Error, Result, VERSION};

pub const RESULTS_HEADER: [&str; 11] = [
    "seed", "model", "mse", "snr", "correlation", "delta_hat", "theta1", "theta2", "lambda", "gamma", "wall_ms",
];

pub const DATASET_FILES: [&str; 7] = [
    "train.csv",
    "semi.csv",
    "validation.csv",
    "test.csv",
    "oracle_test.csv",
    "latents.csv",
    "dataset.json",
];

/// Creates `path`, refusing to replace an existing file unless `overwrite`.
pub fn create_file(path: &Path, overwrite: bool) -> Result<BufWriter<File>> {
    let mut opts = OpenOptions::new();
    opts.write(true);
    if overwrite {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    Ok(BufWriter::new(opts.open(path)?))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Writes successful rows; failures are reported in the summary instead.
pub fn write_results_csv(path: &Path, rows: &[SeedResult], overwrite: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path, overwrite)?);
    w.write_record(RESULTS_HEADER)?;
    for r in rows.iter().filter(|r| r.is_ok()) {
        w.write_record([
            r.seed.to_string(),
            r.model.clone(),
            opt(r.metrics.map(|m| m.mse)),
            opt(r.metrics.map(|m| m.snr)),
            opt(r.metrics.map(|m| m.correlation)),
            opt(r.delta.map(|d| d.delta_hat)),
            opt(r.theta1),
            opt(r.theta2),
            opt(r.lambda),
            opt(r.gamma),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(field: &str, col: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("{col}: not a number: {field:?}")))
}

/// Reads a results CSV back. Δ standard errors are not stored and come back
/// as NaN.
pub fn read_results_csv(path: &Path) -> Result<Vec<SeedResult>> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| parse_opt(&rec[i], RESULTS_HEADER[i]);
        let seed = rec[0]
            .parse()
            .map_err(|_| Error::Config(format!("seed: not an integer: {:?}", &rec[0])))?;
        let metrics = match (get(2)?, get(3)?, get(4)?) {
            (Some(mse), Some(snr), Some(correlation)) => Some(Metrics { mse, snr, correlation }),
            _ => None,
        };
        rows.push(SeedResult {
            seed,
            model: rec[1].to_string(),
            metrics,
            delta: get(5)?.map(|d| DeltaEstimate {
                delta_hat: d,
                standard_error: f64::NAN,
                m: 0,
                n_test: 0,
            }),
            theta1: get(6)?,
            theta2: get(7)?,
            lambda: get(8)?,
            gamma: get(9)?,
            wall_ms: get(10)?.unwrap_or(0.0),
            error: None,
        });
    }
    Ok(rows)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T, overwrite: bool) -> Result<()> {
    let mut w = create_file(path, overwrite)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(path: &Path, summary: &Summary, overwrite: bool) -> Result<()> {
    write_json(path, summary, overwrite)
}

pub fn write_long_csv(path: &Path, rows: &[LongRow], axis: &str, overwrite: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path, overwrite)?);
    w.write_record(["axis", "axis_value", "model", "metric", "mean", "std"])?;
    for r in rows {
        w.write_record([
            axis.to_string(),
            r.axis_value.to_string(),
            r.model.clone(),
            r.metric.clone(),
            num(r.mean),
            num(r.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn matrix_json(m: &Matrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Dataset metadata: layout, generator parameters, column names and sizes.
pub fn dataset_metadata(ds: &SimDataset) -> Value {
    let model = match &ds.model {
        GeneratorModel::Simple(s) => json!({ "kind": "simple", "sigma": matrix_json(&s.sigma) }),
        GeneratorModel::General(c) => json!({
            "kind": "general",
            "beta": c.beta,
            "a": matrix_json(&c.a),
            "b_y": c.b_y,
            "b2": matrix_json(&c.b2),
            "b3": matrix_json(&c.b3),
            "noise_y": c.noise_y,
            "noise_2": c.noise_2,
        }),
        GeneratorModel::Gated => json!({ "kind": "gated" }),
    };
    let sizes: serde_json::Map<String, Value> =
        ds.splits().iter().map(|(name, s)| (name.to_string(), json!(s.len()))).collect();
    json!({
        "version": VERSION,
        "seed": ds.seed,
        "layout": ds.layout,
        "columns": ds.layout.column_names(),
        "latents": ds.latent_names(),
        "sigma_noise": ds.sigma_noise,
        "maps": ds.maps,
        "noise_floor": ds.noise_floor().ok(),
        "sizes": sizes,
        "generator": model,
    })
}

/// Writes the five splits, the latent sidecar and the metadata into `dir`.
pub fn write_dataset(dir: &Path, ds: &SimDataset, overwrite: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let columns = ds.layout.column_names();
    let mut written = Vec::new();
    for (name, split) in ds.splits() {
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_writer(create_file(&path, overwrite)?);
        let mut header = columns.clone();
        if split.y.is_some() {
            header.push("y".into());
        }
        w.write_record(&header)?;
        for i in 0..split.len() {
            let mut rec: Vec<String> = split.x.row(i).iter().map(|v| num(*v)).collect();
            if let Some(y) = &split.y {
                rec.push(num(y[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        written.push(path);
    }
    let path = dir.join("latents.csv");
    let mut w = csv::Writer::from_writer(create_file(&path, overwrite)?);
    let mut header = vec!["split".to_string(), "row".to_string()];
    header.extend(ds.latent_names());
    w.write_record(&header)?;
    for (name, split) in ds.splits() {
        for i in 0..split.latents.nrows() {
            let mut rec = vec![name.to_string(), i.to_string()];
            rec.extend(split.latents.row(i).iter().map(|v| num(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    written.push(path);
    let path = dir.join("dataset.json");
    write_json(&path, &dataset_metadata(ds), overwrite)?;
    written.push(path);
    Ok(written)
}
