use crate::data::DatasetBundle;
use crate::error::{LealError, Result};
use crate::model::{AlignmentModel, ModelSpec};
use crate::nn::compute_loss;
use crate::par::{self, Exec};
use crate::tensor::{ParamStore, RngStream, StreamLabel, Tape, Tensor};
use crate::training::{check_bundle, fit, mean_lambda_on_truth, score_outputs, LealConfig, TrainReport};

use super::metric_name;

/// `k` distinct secondary indices containing `truth` at a random position,
/// the rest drawn uniformly from the other records. `k` is clamped to `n_s`.
pub fn ground_truth_candidates(truth: usize, n_s: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let k = k.clamp(1, n_s);
    let mut out = Vec::with_capacity(k);
    if 2 * k <= n_s {
        while out.len() < k - 1 {
            let c = rng.below(n_s);
            if c != truth && !out.contains(&c) {
                out.push(c);
            }
        }
    } else {
        let mut pool: Vec<usize> = (0..n_s).filter(|&c| c != truth).collect();
        rng.shuffle(&mut pool);
        out.extend_from_slice(&pool[..k - 1]);
    }
    let at = rng.below(k);
    out.insert(at, truth);
    out
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub store: ParamStore,
    pub model: AlignmentModel,
    pub report: TrainReport,
}

/// Model outputs and last-block attention for fixed candidate sets.
fn candidate_outputs(
    store: &ParamStore,
    model: &AlignmentModel,
    primary: &Tensor,
    secondary: &Tensor,
    candidates: &[Vec<usize>],
    batch_size: usize,
) -> Result<(Tensor, Tensor)> {
    let n = candidates.len();
    let batch_size = batch_size.max(1);
    let parts = par::map_range(Exec::default(), n.div_ceil(batch_size), |c| -> Result<(Tensor, Tensor)> {
        let rows: Vec<usize> = (c * batch_size..((c + 1) * batch_size).min(n)).collect();
        let mut tape = Tape::no_grad();
        let xp = tape.constant(primary.select_rows(&rows));
        let xs = tape.constant(secondary.clone());
        let (pred, lambda) = model.forward_candidates(&mut tape, store, None, xp, xs, &candidates[rows[0]..=rows[rows.len() - 1]], None)?;
        Ok((tape.value(pred).clone(), lambda.last().expect("depth ≥ 1").clone()))
    });
    let (mut out, mut lam) = (Vec::new(), Vec::new());
    let (mut width, mut k) = (0, 0);
    for part in parts {
        let (p, l) = part?;
        width = p.shape()[1];
        k = l.shape()[1];
        out.extend_from_slice(p.data());
        lam.extend_from_slice(l.data());
    }
    Ok((Tensor::new(vec![n, width], out)?, Tensor::new(vec![n, k], lam)?))
}

/// Trains the alignment model alone on candidate sets that always contain
/// the planted partner record plus `k − 1` random others, bypassing the
/// sampler. Evaluation candidates come from a fixed stream, so repeated
/// evaluations of the same rows see the same sets.
pub fn ablation_ground_truth(bundle: &DatasetBundle, k: usize, config: &LealConfig) -> Result<AblationRun> {
    check_bundle(bundle)?;
    config.validate()?;
    let truth = bundle
        .ground_truth
        .as_ref()
        .ok_or_else(|| LealError::Data("the ground-truth ablation needs a bundle with a planted alignment".into()))?;
    if k == 0 {
        return Err(LealError::Config("k must be at least 1".into()));
    }
    let task = bundle.task();
    let primary = &bundle.primary.values;
    let secondary = &bundle.secondary.values;
    let n_s = bundle.n_secondary();

    let mut store = ParamStore::new();
    let model = AlignmentModel::new(
        &mut store,
        ModelSpec {
            primary_width: bundle.primary.width(),
            secondary_width: bundle.secondary.width(),
            latent: config.latent,
            heads: config.heads,
            depth: config.depth,
            outputs: task.output_width(),
            tie_secondary_encoder: false,
        },
        &mut RngStream::new(config.seed, StreamLabel::Init).substream(1),
    )?;
    let targets = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&i| bundle.labels.values[i]).collect() };
    let fixed_candidates = |rows: &[usize]| -> Vec<Vec<usize>> {
        let mut rng = RngStream::new(config.seed, StreamLabel::Sample).substream(1);
        rows.iter().map(|&i| ground_truth_candidates(truth[i], n_s, k, &mut rng)).collect()
    };

    let mut sample_rng = RngStream::new(config.seed, StreamLabel::Sample).substream(0);
    let trainable = model.param_ids();
    let outcome = fit(
        &mut store,
        &trainable,
        &bundle.split,
        &config.fit_settings(),
        &mut RngStream::new(config.seed, StreamLabel::Shuffle).substream(1).substream(1),
        |tape, store, rows| {
            let cands: Vec<Vec<usize>> = rows
                .iter()
                .map(|&i| ground_truth_candidates(truth[i], n_s, k, &mut sample_rng))
                .collect();
            let xp = tape.constant(primary.select_rows(rows));
            let xs = tape.constant(secondary.clone());
            let (pred, _) = model.forward_candidates(tape, store, None, xp, xs, &cands, None)?;
            compute_loss(tape, task, pred, &targets(rows))
        },
        |store, rows| {
            let x = primary.select_rows(rows);
            let (out, _) = candidate_outputs(store, &model, &x, secondary, &fixed_candidates(rows), config.batch_size)?;
            score_outputs(&out, &targets(rows), task)
        },
    )?;

    let test = &bundle.split.test;
    let cands = fixed_candidates(test);
    let (out, lambda) = candidate_outputs(&store, &model, &primary.select_rows(test), secondary, &cands, config.batch_size)?;
    let scored = score_outputs(&out, &targets(test), task)?;
    let test_truth: Vec<usize> = test.iter().map(|&i| truth[i]).collect();
    let report = TrainReport {
        model: format!("ground-truth-ablation-k{k}"),
        metric: metric_name(task).into(),
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stopped_early: outcome.stopped_early,
        test_loss: scored.loss,
        test_metric: scored.metric,
        seed: config.seed,
        config: LealConfig { k, ..config.clone() },
        autoencoder: None,
        mean_lambda_true: Some(mean_lambda_on_truth(&cands, &lambda, &test_truth)),
    };
    Ok(AblationRun { store, model, report })
}
