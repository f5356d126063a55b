use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leal_core::analysis::{verify_alignment_theorem, Normalization, TheoremInstance};
use leal_core::data::load_csv;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn leal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leal"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LEAL_THREADS")
        .output()
        .expect("binary runs")
}

fn breast() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/breast.csv")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON: {line}: {e}"))
}

fn entries(dir: &Path) -> usize {
    std::fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

const DATA: &[&str] = &["--generator", "separable", "--rows", "60", "--features", "4"];
const MODEL: &[&str] = &[
    "--latent",
    "8",
    "--heads",
    "2",
    "--ae-epochs",
    "2",
    "--max-epochs",
    "4",
    "--batch-size",
    "16",
    "--solo-hidden",
    "8",
];
const KC: &[&str] = &["--k", "3", "--clusters", "2"];

fn cat(parts: &[&[&str]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().map(|s| s.to_string())).collect()
}

fn run(args: &[String], cwd: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    leal(&refs, cwd)
}

#[test]
fn unknown_flag_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = leal(&["train", "--bogus", "1", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
    assert_eq!(entries(dir.path()), 0);
}

#[test]
fn unknown_config_key_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"leal": {"kk": 3}}"#).unwrap();
    let out = leal(&["train", "--config", "c.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["path"], "leal.kk");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invalid_values_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = leal(&["train", "--generator", "letter", "--heads", "3", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["path"], "leal.latent");

    let out = leal(&["eval", "--generator", "letter", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["path"], "eval.checkpoint");

    let out = leal(&["train", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["path"], "data");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_leal"))
        .args(["theory", "--seeds", "1", "--out", "o"])
        .current_dir(dir.path())
        .env("LEAL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["path"], "LEAL_THREADS");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn runtime_failure_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = leal(&["synth", "--input", "missing.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("missing.csv"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn theory_reports_every_instance_holding() {
    let dir = tempfile::tempdir().unwrap();
    let out = leal(&["theory", "--n", "200", "--seeds", "100", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("o/metrics.json"));
    assert_eq!(m["summary"]["alignment"]["holds"], "100/100");
    let runs = m["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 100);
    // The written numbers are those of the library verifier on the same instance.
    for (i, seed) in [(0usize, 0u64), (37, 37), (99, 99)] {
        let sigma = [0.0, 0.1][i % 2];
        let inst = TheoremInstance::random(200, 3, 3, sigma, Normalization::Centered, seed).unwrap();
        let r = verify_alignment_theorem(&inst, 200, seed).unwrap();
        assert_eq!(runs[i]["mse_aligned"].as_f64().unwrap(), r.mse_aligned);
        assert_eq!(runs[i]["mse_misaligned_mc"].as_f64().unwrap(), r.mse_misaligned_mc);
        assert_eq!(runs[i]["sigma"].as_f64().unwrap(), sigma);
    }
}

#[test]
fn synth_writes_disjoint_tables_and_hashes_its_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = breast();
    let out = leal(&["synth", "--input", input.to_str().unwrap(), "--seed", "1", "--out", "b"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b = dir.path().join("b");
    let primary = load_csv(&b.join("primary.csv"), None).unwrap();
    let secondary = load_csv(&b.join("secondary.csv"), None).unwrap();
    let source = load_csv(&input, None).unwrap();
    let p: Vec<&str> = primary.columns.iter().map(|c| c.name.as_str()).collect();
    let s: Vec<&str> = secondary.columns.iter().map(|c| c.name.as_str()).collect();
    assert!(p.iter().all(|name| !s.contains(name)));
    assert_eq!(p.len() + s.len(), source.m());
    assert_eq!(primary.n(), 286);
    assert_eq!(secondary.n(), 286);

    let manifest = read_json(&b.join("manifest.json"));
    let digest: String = Sha256::digest(std::fs::read(&input).unwrap())
        .iter()
        .map(|x| format!("{x:02x}"))
        .collect();
    assert_eq!(manifest["inputs"][0]["sha256"], digest.as_str());
    assert_eq!(manifest["config"]["seeds"][0], 1);
    let bundle = read_json(&b.join("bundle.json"));
    assert_eq!(bundle["seed"], 1);
    assert_eq!(bundle["secondary_shuffled"], true);
    let m = read_json(&b.join("metrics.json"));
    assert_eq!(m["runs"][0]["split_sizes"], serde_json::json!([200, 28, 58]));
}

#[test]
fn train_then_eval_agree_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(&cat(&[&["train"], DATA, MODEL, KC, &["--seeds", "0,1", "--out", "a"]]), dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = run(&cat(&[&["train"], DATA, MODEL, KC, &["--seeds", "0,1", "--out", "b"]]), dir.path());
    assert!(second.status.success());
    let mut a = read_json(&dir.path().join("a/metrics.json"));
    let mut b = read_json(&dir.path().join("b/metrics.json"));
    a.as_object_mut().unwrap().remove("timing");
    b.as_object_mut().unwrap().remove("timing");
    assert_eq!(a, b);
    assert_eq!(a["runs"].as_array().unwrap().len(), 4);
    assert!(a["runs"][0]["epochs"][0].get("seconds").is_none());

    for (i, model) in [(0, "leal"), (1, "solo-mlp")] {
        let ckpt = format!("a/checkpoints/{model}-seed0.json");
        let eval_out = format!("e-{model}");
        let out = run(
            &cat(&[&["eval", "--checkpoint", &ckpt, "--seed", "0", "--out", &eval_out], DATA]),
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let e = read_json(&dir.path().join(&eval_out).join("metrics.json"));
        assert_eq!(e["summary"]["metric"], a["runs"][i]["test_metric"], "{model}");
        assert_eq!(e["summary"]["loss"], a["runs"][i]["test_loss"], "{model}");
    }
    let report = std::fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    assert!(report.starts_with("model,seed,epoch,train_loss"));
}

#[test]
fn sweep_counts_runs_records_failures_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    // 60 rows leave 60 secondary records, so 100 clusters cannot be formed.
    let grid: &[&str] = &["--grid-k", "1,2", "--grid-clusters", "1,100", "--grid-depth", "1", "--seeds", "2", "--out", "s"];
    let args = cat(&[&["sweep"], DATA, MODEL, grid]);
    let out = run(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("s/metrics.json"));
    assert_eq!(m["runs"].as_array().unwrap().len(), 8);
    let points = m["summary"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    for p in points {
        let expected = if p["clusters"] == 100 { "failed" } else { "ok" };
        assert_eq!(p["status"], expected, "{p}");
    }
    let report = std::fs::read_to_string(dir.path().join("s/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);

    let resumed = run(&cat(&[&["sweep"], DATA, MODEL, grid, &["--resume"]]), dir.path());
    assert!(resumed.status.success());
    let r = read_json(&dir.path().join("s/metrics.json"));
    assert_eq!(r["runs"], m["runs"]);
    let timing = r["timing"].as_object().unwrap();
    let skipped = timing.iter().filter(|(k, v)| !k.contains("-c100-") && v.is_null()).count();
    assert_eq!(skipped, 4, "finished runs are read back, not retrained");
    let retried = timing.iter().filter(|(k, v)| k.contains("-c100-") && !v.is_null()).count();
    assert_eq!(retried, 4, "failed runs are retried");
}

#[test]
fn ablate_and_timing_emit_their_axes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cat(&[&["ablate"], DATA, MODEL, KC, &["--k-list", "1,3", "--out", "a"]]), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("a/metrics.json"));
    let points = m["summary"]["ablation"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[0]["mean_lambda_true"].as_f64().unwrap(), 1.0);
    assert!(m["summary"]["solo"]["test_metric_mean"].is_number());

    let out = run(&cat(&[&["timing"], DATA, MODEL, KC, &["--k-list", "1,2,4", "--epochs", "3", "--out", "t"]]), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("t/metrics.json"));
    assert_eq!(m["runs"].as_array().unwrap().len(), 3);
    assert_eq!(m["timing"]["points"].as_array().unwrap().len(), 3);
    assert!(m["timing"]["slope"].is_number());
}

#[test]
fn every_command_shares_the_metrics_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = leal(&["theory", "--checks", "invariants,marginals", "--invariant-cases", "20", "--marginal-draws", "1000", "--out", "t"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = leal(&["synth", "--generator", "letter", "--rows", "100", "--out", "s"], dir.path());
    assert!(out.status.success());
    for sub in ["t", "s"] {
        let m = read_json(&dir.path().join(sub).join("metrics.json"));
        let mut keys: Vec<&String> = m.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(keys, ["command", "format", "metric", "runs", "summary", "timing"]);
        assert!(dir.path().join(sub).join("report.csv").exists());
        assert!(dir.path().join(sub).join("manifest.json").exists());
    }
}
