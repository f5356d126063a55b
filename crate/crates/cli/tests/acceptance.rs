//! Acceptance gate: runs each criterion through the `leal` binary and prints
//! one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
//!
//! Numeric arguments select criteria, e.g. `cargo test --test acceptance -- 3 8`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn(&Path) -> Result<Outcome, String>;

fn leal(args: &[&str], cwd: &Path) -> Result<Value, String> {
    let out_dir = args
        .windows(2)
        .find(|w| w[0] == "--out")
        .map(|w| w[1])
        .ok_or("every call names its output directory")?;
    let out = Command::new(env!("CARGO_BIN_EXE_leal"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LEAL_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("leal {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    read_json(&cwd.join(out_dir).join("metrics.json"))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn num(v: &Value, what: &str) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("{what} missing from metrics"))
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let took = start.elapsed();
    (took < limit, format!("{:.1}s of {}s", took.as_secs_f64(), limit.as_secs()))
}

fn breast() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/breast.csv")
}

fn alignment_identity(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let m = leal(
        &["theory", "--checks", "alignment", "--n", "200", "--sigmas", "0,0.1", "--permutations", "200", "--seeds", "100", "--out", "c1"],
        dir,
    )?;
    let (fast, took) = within(start, Duration::from_secs(60));
    let s = &m["summary"]["alignment"];
    let holds = num(&s["holds_count"], "holds_count")? as usize;
    let consistent = num(&s["mc_consistent_count"], "mc_consistent_count")? as usize;
    Ok(Outcome {
        pass: holds == 100 && consistent == 100 && fast,
        detail: format!(
            "closed form holds {holds}/100, Monte Carlo consistent {consistent}/100, min gap {:e}, {took}",
            num(&s["min_closed_form_gap"], "min_closed_form_gap")?
        ),
    })
}

fn motivation_margin(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let m = leal(&["theory", "--checks", "motivation", "--motivation-rows", "5000", "--seeds", "5", "--out", "c2"], dir)?;
    let (fast, took) = within(start, Duration::from_secs(60));
    let margin = num(&m["summary"]["motivation"]["min_relative_margin"], "min_relative_margin")?;
    Ok(Outcome {
        pass: margin >= 0.2 && fast,
        detail: format!("smallest relative margin over 5 seeds {:.1}% (need 20%), {took}", 100.0 * margin),
    })
}

fn gradient_integrity(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let m = leal(&["theory", "--checks", "gradients", "--gradient-k", "2", "--out", "c3"], dir)?;
    let (fast, took) = within(start, Duration::from_secs(120));
    let g = &m["summary"]["gradients"];
    let err = num(&g["max_rel_error"], "max_rel_error")?;
    Ok(Outcome {
        pass: err < 1e-4 && fast,
        detail: format!(
            "max relative error {err:.2e} over {} parameters (worst {}), {took}",
            g["checked"], g["worst_param"]
        ),
    })
}

fn normalization(dir: &Path) -> Result<Outcome, String> {
    let m = leal(&["theory", "--checks", "invariants", "--invariant-cases", "1000", "--out", "c4"], dir)?;
    let s = &m["summary"]["invariants"];
    let sums = ["lambda", "cluster_weights", "in_cluster", "sampling"]
        .iter()
        .map(|k| num(&s[*k], k))
        .collect::<Result<Vec<_>, _>>()?;
    let worst_sum = sums.iter().copied().fold(0.0, f64::max);
    let shift = num(&s["softmax_shift"], "softmax_shift")?;
    Ok(Outcome {
        pass: num(&s["cases"], "cases")? == 1000.0 && worst_sum <= 1e-10 && shift <= 1e-12,
        detail: format!("worst row-sum error {worst_sum:.1e}, softmax shift error {shift:.1e}"),
    })
}

fn sampler_marginals(dir: &Path) -> Result<Outcome, String> {
    let m = leal(
        &["theory", "--checks", "marginals", "--marginal-vectors", "10", "--marginal-length", "10", "--marginal-draws", "100000", "--out", "c5"],
        dir,
    )?;
    let s = &m["summary"]["marginals"];
    let outside = num(&s["outside_3se"], "outside_3se")?;
    Ok(Outcome {
        pass: outside == 0.0,
        detail: format!(
            "{outside} of {} indices outside 3 SE, max |z| {:.2}",
            s["indices_checked"],
            num(&s["max_z"], "max_z")?
        ),
    })
}

fn ground_truth_ablation(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let m = leal(
        &["ablate", "--generator", "letter", "--rows", "2000", "--noise", "4", "--k-list", "5", "--seeds", "5", "--out", "c6"],
        dir,
    )?;
    let (fast, took) = within(start, Duration::from_secs(30 * 60));
    let point = &m["summary"]["ablation"][0];
    let acc = num(&point["test_metric_mean"], "ablation accuracy")?;
    let lambda = num(&point["mean_lambda_true"], "mean_lambda_true")?;
    let solo = num(&m["summary"]["solo"]["test_metric_mean"], "solo accuracy")?;
    Ok(Outcome {
        pass: acc > solo && lambda > 0.2 && fast,
        detail: format!("K=5 accuracy {acc:.4} vs solo {solo:.4}, true-record attention {lambda:.3} vs 1/K = 0.2, {took}"),
    })
}

fn breast_ordering(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let input = breast();
    let m = leal(&["train", "--input", input.to_str().ok_or("path")?, "--seeds", "5", "--out", "c7"], dir)?;
    let (fast, took) = within(start, Duration::from_secs(20 * 60));
    let l = num(&m["summary"]["leal"]["test_metric_mean"], "leal accuracy")?;
    let s = num(&m["summary"]["solo-mlp"]["test_metric_mean"], "solo accuracy")?;
    Ok(Outcome {
        pass: l >= s && fast,
        detail: format!("leal {l:.4} vs solo {s:.4} over 5 seeds, {took}"),
    })
}

fn score_approximation(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let m = leal(&["theory", "--checks", "approximation", "--approximation-steps", "5000", "--out", "c8"], dir)?;
    let (fast, took) = within(start, Duration::from_secs(120));
    let s = &m["summary"]["approximation"];
    let mse = num(&s["final_mse"], "final_mse")?;
    Ok(Outcome {
        pass: mse < 1e-2 && s["reached_at"].is_number() && fast,
        detail: format!("final MSE {mse:.2e}, below 1e-2 from step {}, {took}", s["reached_at"]),
    })
}

fn epoch_time_scaling(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let m = leal(
        &[
            "timing", "--generator", "letter", "--rows", "10000", "--k-list", "5,10,20", "--epochs", "4", "--ae-epochs", "5", "--out", "c9",
        ],
        dir,
    )?;
    let (fast, took) = within(start, Duration::from_secs(15 * 60));
    let t = &m["timing"];
    let slope = num(&t["slope"], "slope")?;
    let increasing = t["strictly_increasing"].as_bool().ok_or("strictly_increasing missing")?;
    let times: Vec<String> = t["points"]
        .as_array()
        .ok_or("points missing")?
        .iter()
        .map(|p| format!("K={}: {:.2}s", p["k"], p["mean_seconds"].as_f64().unwrap_or(f64::NAN)))
        .collect();
    Ok(Outcome {
        pass: slope <= 2.5 && increasing && fast,
        detail: format!("log-log slope {slope:.3}, increasing {increasing} ({}), {took}", times.join(", ")),
    })
}

fn determinism(dir: &Path) -> Result<Outcome, String> {
    const DATA: &[&str] = &["--generator", "separable", "--rows", "80", "--features", "4"];
    const MODEL: &[&str] = &[
        "--latent", "8", "--heads", "2", "--ae-epochs", "2", "--max-epochs", "4", "--batch-size", "16", "--solo-hidden", "8", "--k", "3",
        "--clusters", "2",
    ];
    let commands: Vec<Vec<&str>> = vec![
        [&["synth", "--seeds", "0,1"], DATA].concat(),
        [&["train", "--seeds", "0,1"], DATA, MODEL].concat(),
        [&["eval", "--checkpoint", "c10-train-a/checkpoints/leal-seed0.json", "--seed", "0"], DATA].concat(),
        [&["ablate", "--k-list", "1,3"], DATA, MODEL].concat(),
        [&["sweep", "--grid-k", "1,3", "--grid-clusters", "2", "--grid-depth", "1", "--seeds", "2"], DATA, MODEL].concat(),
        [&["timing", "--k-list", "1,2,3"], DATA, MODEL].concat(),
        vec!["theory", "--checks", "alignment,motivation,invariants,marginals", "--seeds", "3", "--invariant-cases", "50", "--marginal-draws", "5000"],
    ];
    let mut differing = Vec::new();
    for cmd in &commands {
        let mut docs = Vec::new();
        for run in ["a", "b"] {
            let out = format!("c10-{}-{run}", cmd[0]);
            let args: Vec<&str> = cmd.iter().copied().chain(["--out", &out]).collect();
            let mut m = leal(&args, dir)?;
            m.as_object_mut().ok_or("metrics is not an object")?.remove("timing");
            docs.push(serde_json::to_vec(&m).map_err(|e| e.to_string())?);
        }
        if docs[0] != docs[1] {
            differing.push(cmd[0]);
        }
    }
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} commands re-run with bit-identical metrics.json", commands.len())
        } else {
            format!("metrics differ on re-run for {}", differing.join(", "))
        },
    })
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("alignment identity on 100 instances", alignment_identity),
        ("motivation task relative margin", motivation_margin),
        ("full-model gradient check", gradient_integrity),
        ("normalization invariants", normalization),
        ("single-draw sampler marginals", sampler_marginals),
        ("ground-truth candidate ablation on letter", ground_truth_ablation),
        ("breast: leal at least solo", breast_ordering),
        ("sampler score approximation", score_approximation),
        ("epoch time scaling in K", epoch_time_scaling),
        ("re-run determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let outcome = check(dir.path()).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        failed += !outcome.pass as usize;
        println!("{} {id:>2} {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
