//! Joint training of sampler and alignment model, inference, and the
//! primary-only MLP baseline.

mod checkpoint;
mod fit;
mod solo;

pub use checkpoint::{Checkpoint, CheckpointModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use fit::{early_stop_check, fit, score_outputs, EpochRecord, Evaluation, FitOutcome, FitSettings};
pub use solo::{solo_outputs, train_solo_mlp, SoloRun};

use serde::{Deserialize, Serialize};

use crate::analysis::metric_name;
use crate::data::DatasetBundle;
use crate::error::{LealError, Result};
use crate::model::{model_forward, AlignmentModel, ModelSpec};
use crate::nn::{compute_loss, AdamWConfig, Task};
use crate::par::{self, Exec};
use crate::sampler::{pretrain_autoencoder, AutoencoderReport, ClusterSampler, SampleMode, SamplerSpec};
use crate::tensor::{ParamStore, RngStream, StreamLabel, Tape, Tensor};

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LealConfig {
    /// Candidate secondary records per primary record.
    pub k: usize,
    pub clusters: usize,
    pub latent: usize,
    pub depth: usize,
    pub heads: usize,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub ae_depth: usize,
    pub ae_epochs: usize,
    pub combiner_hidden: usize,
    /// Route the loss into the sampling probabilities through the selected
    /// candidates.
    pub straight_through: bool,
    pub tie_secondary_encoder: bool,
    pub solo_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for LealConfig {
    fn default() -> Self {
        LealConfig {
            k: 5,
            clusters: 5,
            latent: 100,
            depth: 1,
            heads: 4,
            gamma: 1.0,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 128,
            max_epochs: 150,
            patience: 10,
            ae_depth: 2,
            ae_epochs: 100,
            combiner_hidden: 16,
            straight_through: true,
            tie_secondary_encoder: false,
            solo_hidden: vec![800, 400, 400],
            seed: 0,
        }
    }
}

impl LealConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, msg: String| Err(LealError::InvalidField { field, msg });
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        if self.clusters == 0 {
            return bad("clusters", "must be at least 1".into());
        }
        if self.heads == 0 {
            return bad("heads", "must be at least 1".into());
        }
        if self.latent == 0 || !self.latent.is_multiple_of(self.heads) {
            return bad(
                "latent",
                format!("{} must be a positive multiple of heads {}", self.latent, self.heads),
            );
        }
        if self.depth == 0 {
            return bad("depth", "must be at least 1".into());
        }
        if !(1..=2).contains(&self.ae_depth) {
            return bad("ae_depth", format!("must be 1 or 2, got {}", self.ae_depth));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be finite and non-negative, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay", format!("must be finite and non-negative, got {}", self.weight_decay));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad("gamma", format!("must be finite and positive, got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.combiner_hidden == 0 {
            return bad("combiner_hidden", "must be at least 1".into());
        }
        if self.solo_hidden.is_empty() || self.solo_hidden.contains(&0) {
            return bad("solo_hidden", "needs at least one positive width".into());
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            optimizer: self.optimizer(),
        }
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub metric: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub test_loss: f64,
    pub test_metric: f64,
    pub seed: u64,
    pub config: LealConfig,
    pub autoencoder: Option<AutoencoderReport>,
    /// Mean last-block attention weight on the true partner, over test records.
    pub mean_lambda_true: Option<f64>,
}

impl TrainReport {
    pub fn mean_epoch_seconds(&self) -> f64 {
        let n = self.epochs.len().max(1) as f64;
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / n
    }
}

/// A trained sampler and alignment model with their parameters.
#[derive(Clone, Debug)]
pub struct LealRun {
    pub store: ParamStore,
    pub sampler: ClusterSampler,
    pub model: AlignmentModel,
    pub report: TrainReport,
}

pub(crate) fn check_bundle(bundle: &DatasetBundle) -> Result<()> {
    let s = &bundle.split;
    if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
        return Err(LealError::Data(format!(
            "every split must be non-empty, got sizes {:?}",
            s.sizes()
        )));
    }
    Ok(())
}

pub(crate) fn targets(bundle: &DatasetBundle, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| bundle.labels.values[i]).collect()
}

/// Builds sampler and model for `bundle` from the `Init` stream of `config.seed`.
pub fn init_leal(bundle: &DatasetBundle, config: &LealConfig) -> Result<(ParamStore, ClusterSampler, AlignmentModel)> {
    config.validate()?;
    let mut store = ParamStore::new();
    let init = RngStream::new(config.seed, StreamLabel::Init);
    let sampler = ClusterSampler::new(
        &mut store,
        SamplerSpec {
            primary_width: bundle.primary.width(),
            secondary_width: bundle.secondary.width(),
            latent: config.latent,
            clusters: config.clusters,
            ae_depth: config.ae_depth,
            gamma: config.gamma,
            combiner_hidden: config.combiner_hidden,
        },
        &mut init.substream(0),
    )?;
    let model = AlignmentModel::new(
        &mut store,
        ModelSpec {
            primary_width: bundle.primary.width(),
            secondary_width: bundle.secondary.width(),
            latent: config.latent,
            heads: config.heads,
            depth: config.depth,
            outputs: bundle.task().output_width(),
            tie_secondary_encoder: config.tie_secondary_encoder,
        },
        &mut init.substream(1),
    )?;
    Ok((store, sampler, model))
}

/// Top-K inference outputs (logits or values) for `rows` of the primary
/// table, computed batch by batch.
#[allow(clippy::too_many_arguments)]
pub fn leal_outputs(
    store: &ParamStore,
    sampler: &ClusterSampler,
    model: &AlignmentModel,
    primary: &Tensor,
    secondary: &Tensor,
    k: usize,
    batch_size: usize,
    exec: Exec,
) -> Result<(Tensor, Vec<Vec<usize>>, Vec<Tensor>)> {
    let (n, _) = primary.dims2()?;
    let batch_size = batch_size.max(1);
    let chunks = n.div_ceil(batch_size);
    let parts = par::map_range(exec, chunks, |c| -> Result<(Tensor, Vec<Vec<usize>>, Vec<Tensor>)> {
        let rows: Vec<usize> = (c * batch_size..((c + 1) * batch_size).min(n)).collect();
        let mut tape = Tape::no_grad().with_exec(exec);
        let mut unused = RngStream::new(0, StreamLabel::Sample);
        let out = model_forward(
            &mut tape,
            store,
            sampler,
            model,
            &primary.select_rows(&rows),
            secondary,
            k,
            SampleMode::Infer,
            false,
            &mut unused,
        )?;
        Ok((tape.value(out.prediction).clone(), out.candidates, out.lambda))
    });
    let mut data = Vec::new();
    let mut candidates = Vec::with_capacity(n);
    let mut lambda: Vec<Vec<f64>> = Vec::new();
    let mut width = 0;
    let mut k_used = 0;
    for part in parts {
        let (pred, cands, lam) = part?;
        width = pred.shape()[1];
        data.extend_from_slice(pred.data());
        k_used = cands.first().map_or(k_used, Vec::len);
        candidates.extend(cands);
        if lambda.is_empty() {
            lambda = vec![Vec::new(); lam.len()];
        }
        for (acc, l) in lambda.iter_mut().zip(lam) {
            acc.extend_from_slice(l.data());
        }
    }
    let lambda = lambda
        .into_iter()
        .map(|l| Tensor::new(vec![n, k_used], l))
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::new(vec![n, width], data)?, candidates, lambda))
}

/// Deterministic predictions: class indices or regression values.
pub fn infer(
    store: &ParamStore,
    sampler: &ClusterSampler,
    model: &AlignmentModel,
    primary: &Tensor,
    secondary: &Tensor,
    k: usize,
    task: Task,
) -> Result<Vec<f64>> {
    if primary.rank() != 2 || primary.shape()[1] != model.spec.primary_width {
        return Err(LealError::shape("infer", primary.shape(), &[model.spec.primary_width]));
    }
    if secondary.rank() != 2 || secondary.shape()[1] != model.spec.secondary_width {
        return Err(LealError::shape("infer", secondary.shape(), &[model.spec.secondary_width]));
    }
    let (out, _, _) = leal_outputs(store, sampler, model, primary, secondary, k, 128, Exec::default())?;
    Ok(predictions_from_outputs(&out, task))
}

pub fn predictions_from_outputs(out: &Tensor, task: Task) -> Vec<f64> {
    let (n, w) = (out.shape()[0], out.shape()[1]);
    (0..n)
        .map(|i| {
            let row = out.row(i);
            match task {
                Task::Classification { .. } => {
                    (0..w).fold(0, |best, j| if row[j] > row[best] { j } else { best }) as f64
                }
                Task::Regression => row[0],
            }
        })
        .collect()
}

/// Mean attention weight placed on the true partner by the last block.
pub fn mean_lambda_on_truth(
    candidates: &[Vec<usize>],
    lambda_last: &Tensor,
    truth: &[usize],
) -> f64 {
    let k = lambda_last.shape()[1];
    let mut total = 0.0;
    for (i, (cands, &t)) in candidates.iter().zip(truth).enumerate() {
        if let Some(j) = cands.iter().position(|&c| c == t) {
            total += lambda_last.data()[i * k + j];
        }
    }
    total / candidates.len().max(1) as f64
}

/// Trains sampler and model jointly on `bundle`.
///
/// Stages: parameter initialization, autoencoder pretraining of the sampler
/// encoder, k-means centroids on the encoded secondary table, then epochs of
/// shuffled mini-batches with sampled candidates and AdamW updates. The
/// parameters with the lowest validation loss are restored before the test
/// split is scored.
pub fn train_leal(bundle: &DatasetBundle, config: &LealConfig) -> Result<LealRun> {
    check_bundle(bundle)?;
    let (mut store, sampler, model) = init_leal(bundle, config)?;
    let secondary = &bundle.secondary.values;
    let primary = &bundle.primary.values;
    let task = bundle.task();

    let shuffle = RngStream::new(config.seed, StreamLabel::Shuffle).substream(1);
    let autoencoder = if config.ae_epochs > 0 {
        Some(pretrain_autoencoder(
            &sampler,
            &mut store,
            secondary,
            config.ae_epochs,
            config.optimizer(),
            config.batch_size,
            &mut shuffle.substream(0),
        )?)
    } else {
        None
    };
    let mut init = RngStream::new(config.seed, StreamLabel::Init).substream(3);
    sampler.init_centroids(&mut store, secondary, &mut init)?;

    let mut trainable = sampler.encoder.param_ids();
    trainable.push(sampler.centroids);
    trainable.extend(sampler.weight_generator.param_ids());
    trainable.extend([
        sampler.combiner.w1,
        sampler.combiner.b1,
        sampler.combiner.w2,
        sampler.combiner.b2,
    ]);
    trainable.extend(model.param_ids());

    let mut sample_rng = RngStream::new(config.seed, StreamLabel::Sample);
    let evaluate = |store: &ParamStore, rows: &[usize]| -> Result<Evaluation> {
        let x = primary.select_rows(rows);
        let (out, _, _) = leal_outputs(store, &sampler, &model, &x, secondary, config.k, config.batch_size, Exec::default())?;
        score_outputs(&out, &targets(bundle, rows), task)
    };
    let outcome = fit(
        &mut store,
        &trainable,
        &bundle.split,
        &config.fit_settings(),
        &mut shuffle.substream(1),
        |tape, store, rows| {
            let out = model_forward(
                tape,
                store,
                &sampler,
                &model,
                &primary.select_rows(rows),
                secondary,
                config.k,
                SampleMode::Train,
                config.straight_through,
                &mut sample_rng,
            )?;
            compute_loss(tape, task, out.prediction, &targets(bundle, rows))
        },
        evaluate,
    )?;

    let x_test = primary.select_rows(&bundle.split.test);
    let (out, cands, lambda) = leal_outputs(
        &store,
        &sampler,
        &model,
        &x_test,
        secondary,
        config.k,
        config.batch_size,
        Exec::default(),
    )?;
    let test = score_outputs(&out, &targets(bundle, &bundle.split.test), task)?;
    let mean_lambda_true = bundle.ground_truth.as_ref().map(|gt| {
        let truth: Vec<usize> = bundle.split.test.iter().map(|&i| gt[i]).collect();
        mean_lambda_on_truth(&cands, lambda.last().expect("depth ≥ 1"), &truth)
    });
    let report = TrainReport {
        model: "leal".into(),
        metric: metric_name(task).into(),
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stopped_early: outcome.stopped_early,
        test_loss: test.loss,
        test_metric: test.metric,
        seed: config.seed,
        config: config.clone(),
        autoencoder,
        mean_lambda_true,
    };
    Ok(LealRun {
        store,
        sampler,
        model,
        report,
    })
}
