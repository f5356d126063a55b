//! One function per subcommand. Each computes everything first and returns
//! the files to write, so a failure leaves no partial output behind.

use std::time::Instant;

use leal_core::analysis::{
    discretize, full_model_gradient_check, information_fraction, metric_name, motivation_experiment,
    normalization_invariants, sampler_marginals, score_approximation, timing_scaling, verify_alignment_theorem,
    ApproximationSettings, MotivationTask, TheoremInstance, Toy, ToyShape,
};
use leal_core::analysis::{ablation_ground_truth, default_target};
use leal_core::data::{ColumnKind, DatasetBundle, Table};
use leal_core::nn::Task;
use leal_core::training::{train_leal, train_solo_mlp, Checkpoint, LealConfig, TrainReport};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ModelKind, SplitPart, TheoryCheck};
use crate::error::CliError;
use crate::output::{mean_std, Outputs, Report};
use crate::source::{bundle_for, input_paths};

/// Threshold under which an information fraction counts as functional
/// dependence in the synth report.
const IF_DELTA: f64 = 0.1;

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn with_seed(c: &ExperimentConfig, seed: u64) -> LealConfig {
    LealConfig {
        seed,
        ..c.leal.clone()
    }
}

/// A report as JSON with the per-epoch wall-clock times moved out.
fn split_report(report: &TrainReport) -> Result<(Value, Vec<f64>), CliError> {
    let mut v = serde_json::to_value(report)?;
    let seconds = report.epochs.iter().map(|e| e.seconds).collect();
    if let Some(epochs) = v.get_mut("epochs").and_then(Value::as_array_mut) {
        for e in epochs {
            if let Some(obj) = e.as_object_mut() {
                obj.remove("seconds");
            }
        }
    }
    Ok((v, seconds))
}

fn first_seed(c: &ExperimentConfig) -> u64 {
    c.seeds[0]
}

/// Integer codes of a raw column for plug-in entropies.
fn coded_column(table: &Table, j: usize, bins: usize) -> Result<Vec<usize>, CliError> {
    let values = table.column_values(j);
    Ok(match &table.columns[j].kind {
        ColumnKind::Categorical { categories } => values
            .iter()
            .map(|v| categories.iter().position(|c| c == v).unwrap_or(0))
            .collect(),
        ColumnKind::Numeric => {
            let x: Vec<f64> = values.iter().map(|v| v.trim().parse().unwrap_or(0.0)).collect();
            discretize(&x, bins)?
        }
    })
}

fn information_summary(bundle: &DatasetBundle) -> Result<Value, CliError> {
    let Some(truth) = &bundle.ground_truth else {
        return Ok(json!({ "value": null, "reason": "no ground-truth alignment" }));
    };
    let bins = 4;
    let y: Vec<usize> = match bundle.task() {
        Task::Classification { .. } => bundle.labels.values.iter().map(|&v| v as usize).collect(),
        Task::Regression => discretize(&bundle.labels.values, bins)?,
    };
    let primary = (0..bundle.primary_table.m())
        .map(|j| coded_column(&bundle.primary_table, j, bins))
        .collect::<Result<Vec<_>, _>>()?;
    let aligned = bundle.secondary_table.permute_rows(truth);
    let secondary = (0..aligned.m())
        .map(|j| coded_column(&aligned, j, bins))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match information_fraction(&y, &primary, &secondary) {
        Ok(est) => json!({
            "value": est.value,
            "h_y_given_primary": est.h_y_given_primary,
            "h_y_given_both": est.h_y_given_both,
            "joint_support": est.joint_support,
            "support_warning": est.support_warning,
            "delta": IF_DELTA,
            "near_functional": est.near_functional(IF_DELTA),
            "bins": bins,
        }),
        Err(e) => json!({ "value": null, "reason": e.to_string() }),
    })
}

pub fn synth(c: &ExperimentConfig) -> Result<Outputs, CliError> {
    c.require_data()?;
    let seed = first_seed(c);
    let bundle = bundle_for(&c.data, seed)?;
    let mut out = Outputs {
        inputs: input_paths(&c.data),
        ..Default::default()
    };
    let manifest = bundle.manifest();
    for (name, bytes) in bundle.to_files()? {
        out.files.push((name.into(), bytes));
    }
    let mut report = Report::new(&["table", "column", "kind", "categories"]);
    for (table, cols) in [("primary", &manifest.primary_columns), ("secondary", &manifest.secondary_columns)] {
        for col in cols {
            let (kind, cats) = match &col.kind {
                ColumnKind::Numeric => ("numeric", String::new()),
                ColumnKind::Categorical { categories } => ("categorical", categories.len().to_string()),
            };
            report.push(vec![table.into(), col.name.clone(), kind.into(), cats]);
        }
    }
    out.report = report;
    out.metrics.runs.push(json!({
        "seed": seed,
        "name": manifest.name,
        "task": manifest.task,
        "primary_rows": manifest.primary_rows,
        "primary_columns": manifest.primary_columns.len(),
        "primary_encoded_width": manifest.primary_encoded_width,
        "secondary_rows": manifest.secondary_rows,
        "secondary_columns": manifest.secondary_columns.len(),
        "secondary_encoded_width": manifest.secondary_encoded_width,
        "split_sizes": manifest.split_sizes,
        "secondary_shuffled": manifest.secondary_shuffled,
        "information_fraction": information_summary(&bundle)?,
    }));
    out.metrics.summary = json!({ "bundles": 1 });
    Ok(out)
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Leal => "leal",
        ModelKind::Solo => "solo-mlp",
    }
}

pub fn train(c: &ExperimentConfig) -> Result<Outputs, CliError> {
    c.require_data()?;
    let mut out = Outputs {
        inputs: input_paths(&c.data),
        ..Default::default()
    };
    let mut report = Report::new(&[
        "model",
        "seed",
        "epoch",
        "train_loss",
        "train_batch_loss",
        "val_loss",
        "val_metric",
        "seconds",
    ]);
    let mut timing = serde_json::Map::new();
    let mut scores: Vec<(ModelKind, f64, f64, Option<f64>)> = Vec::new();
    let mut metric = None;
    for &seed in &c.seeds {
        let bundle = bundle_for(&c.data, seed)?;
        metric = Some(metric_name(bundle.task()).to_string());
        let cfg = with_seed(c, seed);
        for &kind in &c.train.models {
            let start = Instant::now();
            let (r, ckpt) = match kind {
                ModelKind::Leal => {
                    let run = train_leal(&bundle, &cfg)?;
                    let ckpt = Checkpoint::from_leal(&run, &bundle);
                    (run.report, ckpt)
                }
                ModelKind::Solo => {
                    let run = train_solo_mlp(&bundle, &cfg)?;
                    let ckpt = Checkpoint::from_solo(&run, &bundle);
                    (run.report, ckpt)
                }
            };
            let name = model_name(kind);
            out.files
                .push((format!("checkpoints/{name}-seed{seed}.json").into(), ckpt.to_json()?.into_bytes()));
            for e in &r.epochs {
                report.push(vec![
                    name.into(),
                    seed.to_string(),
                    e.epoch.to_string(),
                    f(e.train_loss),
                    f(e.train_batch_loss),
                    f(e.val_loss),
                    f(e.val_metric),
                    f(e.seconds),
                ]);
            }
            let (mut v, seconds) = split_report(&r)?;
            v["checkpoint"] = format!("checkpoints/{name}-seed{seed}.json").into();
            out.metrics.runs.push(v);
            timing.insert(
                format!("{name}-seed{seed}"),
                json!({
                    "epoch_seconds": seconds,
                    "mean_epoch_seconds": r.mean_epoch_seconds(),
                    "total_seconds": start.elapsed().as_secs_f64(),
                }),
            );
            scores.push((kind, r.test_metric, r.test_loss, r.mean_lambda_true));
        }
    }
    let mut summary = serde_json::Map::new();
    for &kind in &c.train.models {
        let metrics: Vec<f64> = scores.iter().filter(|s| s.0 == kind).map(|s| s.1).collect();
        let losses: Vec<f64> = scores.iter().filter(|s| s.0 == kind).map(|s| s.2).collect();
        let lambdas: Vec<f64> = scores.iter().filter(|s| s.0 == kind).filter_map(|s| s.3).collect();
        let (m, s) = mean_std(&metrics);
        let (lm, ls) = mean_std(&losses);
        summary.insert(
            model_name(kind).into(),
            json!({
                "runs": metrics.len(),
                "test_metric_mean": m,
                "test_metric_std": s,
                "test_loss_mean": lm,
                "test_loss_std": ls,
                "mean_lambda_true": if lambdas.is_empty() { Value::Null } else { mean_std(&lambdas).0.into() },
            }),
        );
    }
    out.metrics.metric = metric;
    out.metrics.summary = summary.into();
    out.metrics.timing = timing.into();
    out.report = report;
    Ok(out)
}

pub fn eval(c: &ExperimentConfig) -> Result<Outputs, CliError> {
    let path = c.eval.checkpoint.clone().ok_or_else(|| CliError::Config {
        path: "eval.checkpoint".into(),
        msg: "a checkpoint is required".into(),
    })?;
    c.require_data()?;
    let ckpt = Checkpoint::load(&path)?;
    let bundle = bundle_for(&c.data, first_seed(c))?;
    let rows: Vec<usize> = match c.eval.split {
        SplitPart::Train => bundle.split.train.clone(),
        SplitPart::Val => bundle.split.val.clone(),
        SplitPart::Test => bundle.split.test.clone(),
        SplitPart::All => (0..bundle.n_primary()).collect(),
    };
    let start = Instant::now();
    let ev = ckpt.evaluate(&bundle, &rows)?;
    let mut inputs = input_paths(&c.data);
    inputs.push(path.clone());
    let mut out = Outputs {
        inputs,
        ..Default::default()
    };
    let mut report = Report::new(&["row", "target", "prediction"]);
    for (&r, &p) in rows.iter().zip(&ev.predictions) {
        report.push(vec![r.to_string(), f(bundle.labels.values[r]), f(p)]);
    }
    out.report = report;
    out.metrics.metric = Some(metric_name(bundle.task()).into());
    out.metrics.runs.push(json!({
        "checkpoint": path.display().to_string(),
        "split": c.eval.split,
        "rows": rows.len(),
        "loss": ev.loss,
        "metric": ev.metric,
    }));
    out.metrics.summary = json!({ "loss": ev.loss, "metric": ev.metric });
    out.metrics.timing = json!({ "seconds": start.elapsed().as_secs_f64() });
    Ok(out)
}

pub fn ablate(c: &ExperimentConfig) -> Result<Outputs, CliError> {
    c.require_data()?;
    let mut out = Outputs {
        inputs: input_paths(&c.data),
        ..Default::default()
    };
    let mut report = Report::new(&["model", "k", "seed", "test_metric", "mean_lambda_true", "best_epoch", "epochs"]);
    let mut timing = serde_json::Map::new();
    let mut per_k: Vec<(usize, f64, f64)> = Vec::new();
    let mut solo = Vec::new();
    let mut metric = None;
    for &seed in &c.seeds {
        let bundle = bundle_for(&c.data, seed)?;
        metric = Some(metric_name(bundle.task()).to_string());
        let cfg = with_seed(c, seed);
        if c.ablate.solo_baseline {
            let start = Instant::now();
            let r = train_solo_mlp(&bundle, &cfg)?.report;
            report.push(vec![
                "solo-mlp".into(),
                String::new(),
                seed.to_string(),
                f(r.test_metric),
                String::new(),
                r.best_epoch.to_string(),
                r.epochs.len().to_string(),
            ]);
            out.metrics.runs.push(json!({
                "model": r.model,
                "seed": seed,
                "test_metric": r.test_metric,
                "test_loss": r.test_loss,
                "best_epoch": r.best_epoch,
                "epochs": r.epochs.len(),
            }));
            timing.insert(format!("solo-mlp-seed{seed}"), start.elapsed().as_secs_f64().into());
            solo.push(r.test_metric);
        }
        for &k in &c.ablate.k {
            let start = Instant::now();
            let r = ablation_ground_truth(&bundle, k, &cfg)?.report;
            let lambda = r.mean_lambda_true.unwrap_or(f64::NAN);
            report.push(vec![
                "ground-truth-ablation".into(),
                k.to_string(),
                seed.to_string(),
                f(r.test_metric),
                f(lambda),
                r.best_epoch.to_string(),
                r.epochs.len().to_string(),
            ]);
            out.metrics.runs.push(json!({
                "model": "ground-truth-ablation",
                "k": k,
                "seed": seed,
                "test_metric": r.test_metric,
                "test_loss": r.test_loss,
                "mean_lambda_true": lambda,
                "best_epoch": r.best_epoch,
                "epochs": r.epochs.len(),
            }));
            timing.insert(format!("ablation-k{k}-seed{seed}"), start.elapsed().as_secs_f64().into());
            per_k.push((k, r.test_metric, lambda));
        }
    }
    let points: Vec<Value> = c
        .ablate
        .k
        .iter()
        .map(|&k| {
            let acc: Vec<f64> = per_k.iter().filter(|p| p.0 == k).map(|p| p.1).collect();
            let lam: Vec<f64> = per_k.iter().filter(|p| p.0 == k).map(|p| p.2).collect();
            let (m, s) = mean_std(&acc);
            let (lm, ls) = mean_std(&lam);
            json!({
                "k": k,
                "test_metric_mean": m,
                "test_metric_std": s,
                "mean_lambda_true": lm,
                "mean_lambda_true_std": ls,
                "uniform_lambda": 1.0 / k as f64,
            })
        })
        .collect();
    let (sm, ss) = mean_std(&solo);
    out.metrics.summary = json!({
        "ablation": points,
        "solo": if solo.is_empty() { Value::Null } else { json!({ "test_metric_mean": sm, "test_metric_std": ss }) },
    });
    out.metrics.metric = metric;
    out.metrics.timing = timing.into();
    out.report = report;
    Ok(out)
}

pub fn theory(c: &ExperimentConfig) -> Result<Outputs, CliError> {
    let t = &c.theory;
    let mut out = Outputs::default();
    let mut report = Report::new(&["check", "seed", "quantity", "value"]);
    let mut summary = serde_json::Map::new();
    let mut timing = serde_json::Map::new();
    let mut checks = t.checks.clone();
    checks.sort_unstable();
    checks.dedup();
    for check in checks {
        let start = Instant::now();
        let mut row = |check: &str, seed: u64, q: &str, v: String| report.push(vec![check.into(), seed.to_string(), q.into(), v]);
        match check {
            TheoryCheck::Alignment => {
                let (mut holds, mut consistent) = (0, 0);
                let mut worst_gap = f64::INFINITY;
                for (i, &seed) in c.seeds.iter().enumerate() {
                    let sigma = t.sigmas[i % t.sigmas.len()];
                    let inst = TheoremInstance::random(
                        t.n,
                        t.primary_features,
                        t.secondary_features,
                        sigma,
                        t.normalization,
                        seed,
                    )?;
                    let r = verify_alignment_theorem(&inst, t.permutations, seed)?;
                    holds += r.holds as usize;
                    consistent += r.mc_consistent as usize;
                    worst_gap = worst_gap.min(r.mse_misaligned_closed_form - r.mse_aligned);
                    row("alignment", seed, "mse_aligned", f(r.mse_aligned));
                    row("alignment", seed, "mse_misaligned_closed_form", f(r.mse_misaligned_closed_form));
                    row("alignment", seed, "mse_misaligned_mc", f(r.mse_misaligned_mc));
                    row("alignment", seed, "mc_standard_error", f(r.mc_standard_error));
                    let mut v = serde_json::to_value(&r)?;
                    v["check"] = "alignment".into();
                    v["seed"] = seed.into();
                    v["sigma"] = sigma.into();
                    out.metrics.runs.push(v);
                }
                let n = c.seeds.len();
                summary.insert(
                    "alignment".into(),
                    json!({
                        "instances": n,
                        "holds": format!("{holds}/{n}"),
                        "holds_count": holds,
                        "mc_consistent": format!("{consistent}/{n}"),
                        "mc_consistent_count": consistent,
                        "min_closed_form_gap": worst_gap,
                        "normalization": t.normalization,
                        "permutations": t.permutations,
                    }),
                );
            }
            TheoryCheck::Motivation => {
                let mut margins = Vec::new();
                for &seed in &c.seeds {
                    let task = MotivationTask::generate(t.motivation_rows, seed)?;
                    let r = motivation_experiment(&task, seed)?;
                    let margin = (r.misaligned.converged_mse - r.aligned.converged_mse) / r.misaligned.converged_mse;
                    margins.push(margin);
                    row("motivation", seed, "aligned_mse", f(r.aligned.converged_mse));
                    row("motivation", seed, "misaligned_mse", f(r.misaligned.converged_mse));
                    out.files.push((format!("motivation/seed{seed}.csv").into(), r.csv.into_bytes()));
                    out.metrics.runs.push(json!({
                        "check": "motivation",
                        "seed": seed,
                        "aligned": r.aligned,
                        "misaligned": r.misaligned,
                        "relative_margin": margin,
                    }));
                }
                summary.insert(
                    "motivation".into(),
                    json!({
                        "seeds": c.seeds.len(),
                        "min_relative_margin": margins.iter().copied().fold(f64::INFINITY, f64::min),
                        "mean_relative_margin": mean_std(&margins).0,
                    }),
                );
            }
            TheoryCheck::Approximation => {
                let settings = ApproximationSettings {
                    steps: t.approximation_steps,
                    seed: first_seed(c),
                    ..ApproximationSettings::default()
                };
                let r = score_approximation(settings, default_target)?;
                let mut grid = Report::new(&["p", "s", "target", "fitted"]);
                for (i, p) in r.grid.iter().enumerate() {
                    for (j, s) in r.grid.iter().enumerate() {
                        grid.push(vec![f(*p), f(*s), f(r.target[i][j]), f(r.fitted[i][j])]);
                    }
                }
                out.files.push(("approximation.csv".into(), grid.to_bytes()?));
                row("approximation", settings.seed, "final_mse", f(r.final_mse));
                summary.insert(
                    "approximation".into(),
                    json!({
                        "final_mse": r.final_mse,
                        "threshold": settings.threshold,
                        "reached_at": r.reached_at,
                        "steps": r.steps,
                    }),
                );
                let mut v = serde_json::to_value(&r)?;
                v["check"] = "approximation".into();
                out.metrics.runs.push(v);
            }
            TheoryCheck::Gradients => {
                let seed = first_seed(c);
                let toy = Toy::new(ToyShape::default(), 1.0, seed)?;
                let r = full_model_gradient_check(&toy, t.gradient_k, t.gradient_eps, seed)?;
                row("gradients", seed, "max_rel_error", f(r.max_rel_error));
                summary.insert(
                    "gradients".into(),
                    json!({
                        "max_rel_error": r.max_rel_error,
                        "worst_param": r.worst_param,
                        "checked": r.checked,
                        "k": t.gradient_k,
                        "eps": t.gradient_eps,
                    }),
                );
                let mut v = serde_json::to_value(&r)?;
                v["check"] = "gradients".into();
                out.metrics.runs.push(v);
            }
            TheoryCheck::Invariants => {
                let seed = first_seed(c);
                let r = normalization_invariants(t.invariant_cases, seed)?;
                for (q, v) in [
                    ("lambda", r.lambda),
                    ("cluster_weights", r.cluster_weights),
                    ("in_cluster", r.in_cluster),
                    ("sampling", r.sampling),
                    ("softmax_shift", r.softmax_shift),
                ] {
                    row("invariants", seed, q, f(v));
                }
                summary.insert("invariants".into(), serde_json::to_value(&r)?);
            }
            TheoryCheck::Marginals => {
                let seed = first_seed(c);
                let r = sampler_marginals(t.marginal_vectors, t.marginal_length, t.marginal_draws, seed)?;
                row("marginals", seed, "max_z", f(r.max_z));
                row("marginals", seed, "outside_3se", r.outside_3se.to_string());
                summary.insert("marginals".into(), serde_json::to_value(&r)?);
            }
        }
        timing.insert(format!("{check:?}").to_lowercase(), start.elapsed().as_secs_f64().into());
    }
    out.metrics.summary = summary.into();
    out.metrics.timing = timing.into();
    out.report = report;
    Ok(out)
}

pub fn timing(c: &ExperimentConfig) -> Result<Outputs, CliError> {
    c.require_data()?;
    let seed = first_seed(c);
    let bundle = bundle_for(&c.data, seed)?;
    let r = timing_scaling(&bundle, &c.timing.k, &with_seed(c, seed), c.timing.epochs)?;
    let mut out = Outputs {
        inputs: input_paths(&c.data),
        ..Default::default()
    };
    let mut report = Report::new(&["k", "mean_seconds", "std_seconds", "epochs_measured"]);
    for p in &r.points {
        report.push(vec![p.k.to_string(), f(p.mean_seconds), f(p.std_seconds), p.epochs_measured.to_string()]);
        out.metrics.runs.push(json!({ "k": p.k, "epochs_measured": p.epochs_measured }));
    }
    out.metrics.summary = json!({
        "k": c.timing.k,
        "epochs": c.timing.epochs,
        "primary_rows": bundle.n_primary(),
    });
    out.metrics.timing = serde_json::to_value(&r)?;
    out.report = report;
    Ok(out)
}
