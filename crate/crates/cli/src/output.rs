//! Result files: metrics.json, report.csv, manifest.json and extras.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const METRICS_FORMAT: u32 = 1;

/// The metrics document shared by every command. Wall-clock quantities live
/// only under `timing`, so everything else is a function of config and data.
#[derive(Debug, Default)]
pub struct Metrics {
    pub metric: Option<String>,
    pub runs: Vec<Value>,
    pub summary: Value,
    pub timing: Value,
}

impl Metrics {
    pub fn to_value(&self, command: &str) -> Value {
        json!({
            "command": command,
            "format": METRICS_FORMAT,
            "metric": self.metric,
            "runs": self.runs,
            "summary": if self.summary.is_null() { json!({}) } else { self.summary.clone() },
            "timing": if self.timing.is_null() { json!({}) } else { self.timing.clone() },
        })
    }
}

/// A CSV table held in memory until the command succeeds.
#[derive(Debug, Default)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Report {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Failed(format!("writing CSV: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| CliError::Failed(format!("writing CSV: {e}")))
    }
}

/// Everything a command produces, written in one go at the end.
#[derive(Debug, Default)]
pub struct Outputs {
    pub metrics: Metrics,
    pub report: Report,
    /// Extra files relative to the output directory.
    pub files: Vec<(PathBuf, Vec<u8>)>,
    /// Inputs whose hashes go into the manifest.
    pub inputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

/// Files of a data source: a bundle directory expands to its three files.
pub fn expand_inputs(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for f in ["bundle.json", "primary.csv", "secondary.csv"] {
                out.push(p.join(f));
            }
        } else {
            out.push(p.clone());
        }
    }
    out
}

pub fn manifest(command: &str, argv: &[String], config: &ExperimentConfig, inputs: &[PathBuf]) -> Result<Value, CliError> {
    let files = expand_inputs(inputs)
        .iter()
        .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": hash_file(p)? })))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "argv": argv,
        "config": config,
        "seeds": config.seeds,
        "inputs": files,
        "parallel": leal_core::par::Exec::default().is_parallel(),
        "threads": leal_core::par::threads(),
    }))
}

pub fn write_dir(dir: &Path, command: &str, argv: &[String], config: &ExperimentConfig, out: &Outputs) -> Result<(), CliError> {
    let manifest = manifest(command, argv, config, &out.inputs)?;
    let io = |what: &Path| {
        let what = what.display().to_string();
        move |e| CliError::io(what, e)
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let write = |rel: &Path, bytes: &[u8]| -> Result<(), CliError> {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, bytes).map_err(io(&path))
    };
    for (rel, bytes) in &out.files {
        write(rel, bytes)?;
    }
    write(Path::new("report.csv"), &out.report.to_bytes()?)?;
    write(Path::new("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    write(
        Path::new("metrics.json"),
        &serde_json::to_vec_pretty(&out.metrics.to_value(command))?,
    )?;
    Ok(())
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
