//! Grid search over K, C and depth with one run per grid point and seed.

use std::fs;
use std::path::Path;
use std::time::Instant;

use leal_core::analysis::metric_name;
use leal_core::par::{self, Exec};
use leal_core::training::{train_leal, LealConfig};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{mean_std, Outputs, Report};
use crate::source::{bundle_for, input_paths};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridPoint {
    pub k: usize,
    pub clusters: usize,
    pub depth: usize,
}

impl GridPoint {
    fn id(self) -> String {
        format!("k{}-c{}-d{}", self.k, self.clusters, self.depth)
    }
}

pub fn grid(c: &ExperimentConfig) -> Vec<GridPoint> {
    let s = &c.sweep;
    let mut points = Vec::new();
    for &k in &s.k {
        for &clusters in &s.clusters {
            for &depth in &s.depth {
                points.push(GridPoint { k, clusters, depth });
            }
        }
    }
    points
}

fn run_one(bundle: &leal_core::data::DatasetBundle, cfg: &LealConfig, point: GridPoint) -> Value {
    let base = json!({ "k": point.k, "clusters": point.clusters, "depth": point.depth, "seed": cfg.seed });
    let mut v = match train_leal(bundle, cfg) {
        Ok(run) => {
            let r = run.report;
            json!({
                "status": "ok",
                "test_metric": r.test_metric,
                "test_loss": r.test_loss,
                "best_epoch": r.best_epoch,
                "best_val_loss": r.best_val_loss,
                "epochs": r.epochs.len(),
                "train_losses": r.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>(),
            })
        }
        Err(e) => json!({ "status": "failed", "error": e.to_string() }),
    };
    for (key, val) in base.as_object().expect("object") {
        v[key] = val.clone();
    }
    v
}

fn read_finished(path: &Path) -> Option<Value> {
    let v: Value = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
    (v["status"] == "ok").then_some(v)
}

/// Runs every (grid point, seed) pair on the worker pool. Each run writes
/// `runs/<point>/seed<s>/result.json` as soon as it finishes; with `resume`
/// finished runs are read back instead of retrained. A run that fails is
/// recorded and the sweep goes on.
pub fn sweep(c: &ExperimentConfig, dir: &Path) -> Result<Outputs, CliError> {
    c.require_data()?;
    let points = grid(c);
    let bundles = c
        .seeds
        .iter()
        .map(|&s| bundle_for(&c.data, s))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(GridPoint, usize)> = points
        .iter()
        .flat_map(|&p| (0..c.seeds.len()).map(move |s| (p, s)))
        .collect();

    let results = par::map_range(Exec::default(), jobs.len(), |j| -> Result<(Value, Option<f64>), CliError> {
        let (point, s) = jobs[j];
        let seed = c.seeds[s];
        let run_dir = dir.join("runs").join(point.id()).join(format!("seed{seed}"));
        let result_path = run_dir.join("result.json");
        if c.sweep.resume {
            if let Some(v) = read_finished(&result_path) {
                return Ok((v, None));
            }
        }
        let cfg = LealConfig {
            k: point.k,
            clusters: point.clusters,
            depth: point.depth,
            seed,
            ..c.leal.clone()
        };
        let start = Instant::now();
        let v = run_one(&bundles[s], &cfg, point);
        let seconds = start.elapsed().as_secs_f64();
        fs::create_dir_all(&run_dir).map_err(|e| CliError::io(run_dir.display().to_string(), e))?;
        fs::write(&result_path, serde_json::to_vec_pretty(&v)?)
            .map_err(|e| CliError::io(result_path.display().to_string(), e))?;
        Ok((v, Some(seconds)))
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut out = Outputs {
        inputs: input_paths(&c.data),
        ..Default::default()
    };
    let mut report = Report::new(&[
        "k", "clusters", "depth", "runs", "failed", "metric_mean", "metric_std", "status",
    ]);
    let mut summary = Vec::new();
    for &point in &points {
        let runs: Vec<&Value> = jobs
            .iter()
            .zip(&results)
            .filter(|((p, _), _)| *p == point)
            .map(|(_, (v, _))| v)
            .collect();
        let ok: Vec<&Value> = runs.iter().copied().filter(|v| v["status"] == "ok").collect();
        let metrics: Vec<f64> = ok.iter().filter_map(|v| v["test_metric"].as_f64()).collect();
        let (mean, std) = mean_std(&metrics);
        // Distinct seeds must give distinct training trajectories.
        let identical = ok.len() > 1 && ok.iter().all(|v| v["train_losses"] == ok[0]["train_losses"]);
        let status = if ok.is_empty() {
            "failed"
        } else if identical {
            "identical-seeds"
        } else if ok.len() < runs.len() {
            "partial"
        } else {
            "ok"
        };
        let failed = runs.len() - ok.len();
        report.push(vec![
            point.k.to_string(),
            point.clusters.to_string(),
            point.depth.to_string(),
            runs.len().to_string(),
            failed.to_string(),
            if metrics.is_empty() { String::new() } else { mean.to_string() },
            if metrics.is_empty() { String::new() } else { std.to_string() },
            status.into(),
        ]);
        summary.push(json!({
            "k": point.k,
            "clusters": point.clusters,
            "depth": point.depth,
            "runs": runs.len(),
            "failed": failed,
            "metric_mean": mean,
            "metric_std": std,
            "status": status,
        }));
    }
    let timing: serde_json::Map<String, Value> = jobs
        .iter()
        .zip(&results)
        .map(|((p, s), (_, secs))| (format!("{}-seed{}", p.id(), c.seeds[*s]), json!(secs)))
        .collect();
    out.metrics.metric = Some(metric_name(bundles[0].task()).into());
    out.metrics.runs = results.into_iter().map(|(v, _)| v).collect();
    out.metrics.summary = json!({ "points": summary, "seeds": c.seeds });
    out.metrics.timing = timing.into();
    out.report = report;
    Ok(out)
}
