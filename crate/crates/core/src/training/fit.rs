use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::predictions_from_outputs;
use crate::analysis::eval_metrics;
use crate::data::Split;
use crate::error::{LealError, Result};
use crate::nn::{compute_loss, AdamW, AdamWConfig, Task};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitSettings {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: AdamWConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss over the training rows, evaluated without sampling after the epoch.
    pub train_loss: f64,
    /// Row-weighted mean of the mini-batch losses seen during the epoch.
    pub train_batch_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    /// Wall-clock time of the update pass alone.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
    pub predictions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Loss, metric and predictions for raw model outputs (`[n × out]`).
pub fn score_outputs(outputs: &Tensor, targets: &[f64], task: Task) -> Result<Evaluation> {
    let mut tape = Tape::no_grad();
    let v = tape.constant(outputs.clone());
    let l = compute_loss(&mut tape, task, v, targets)?;
    let predictions = predictions_from_outputs(outputs, task);
    Ok(Evaluation {
        loss: tape.value(l).item(),
        metric: eval_metrics(&predictions, targets, task)?,
        predictions,
    })
}

/// True once the last `patience` entries brought no strict improvement on
/// the best value so far.
pub fn early_stop_check(val_history: &[f64], patience: usize) -> bool {
    if val_history.is_empty() {
        return false;
    }
    let best = val_history
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < val_history[b] { i } else { b });
    val_history.len() - 1 - best >= patience
}

/// Mini-batch AdamW over `split.train` with early stopping on validation
/// loss. Only gradients of `trainable` are applied. On return `store` holds
/// the parameters of the best validation epoch.
pub fn fit<B, E>(
    store: &mut ParamStore,
    trainable: &[ParamId],
    split: &Split,
    settings: &FitSettings,
    shuffle: &mut RngStream,
    mut batch_loss: B,
    mut evaluate: E,
) -> Result<FitOutcome>
where
    B: FnMut(&mut Tape, &ParamStore, &[usize]) -> Result<Var>,
    E: FnMut(&ParamStore, &[usize]) -> Result<Evaluation>,
{
    if split.train.is_empty() || split.val.is_empty() {
        return Err(LealError::Data("training needs non-empty train and validation splits".into()));
    }
    let snapshot = |store: &ParamStore| -> Vec<Tensor> { trainable.iter().map(|&id| store.get(id).clone()).collect() };
    let mut opt = AdamW::new(settings.optimizer);
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(settings.max_epochs);
    let mut val_history = Vec::with_capacity(settings.max_epochs);
    let mut best_params = snapshot(store);
    let mut best_epoch = 0;
    let mut best_val_loss = f64::INFINITY;
    let mut stopped_early = false;
    let batch = settings.batch_size.max(1);

    for epoch in 0..settings.max_epochs {
        let start = Instant::now();
        let mut order = split.train.clone();
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for (b, rows) in order.chunks(batch).enumerate() {
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, store, rows)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(LealError::Diverged(format!(
                    "training loss became {value} in epoch {epoch}, batch {b}; lower the learning rate (now {})",
                    settings.optimizer.lr
                )));
            }
            tape.backward(loss)?;
            let grads: Vec<_> = tape
                .param_grads()
                .into_iter()
                .filter(|(id, _)| trainable.contains(id))
                .collect();
            opt.step(store, &grads)?;
            total += value * rows.len() as f64;
        }
        let seconds = start.elapsed().as_secs_f64();

        let train = evaluate(store, &split.train)?;
        let val = evaluate(store, &split.val)?;
        if !val.loss.is_finite() {
            return Err(LealError::Diverged(format!(
                "validation loss became {} after epoch {epoch}",
                val.loss
            )));
        }
        if val.loss < best_val_loss {
            best_val_loss = val.loss;
            best_epoch = epoch;
            best_params = snapshot(store);
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: train.loss,
            train_batch_loss: total / split.train.len() as f64,
            val_loss: val.loss,
            val_metric: val.metric,
            seconds,
        });
        val_history.push(val.loss);
        if early_stop_check(&val_history, settings.patience) && epoch + 1 < settings.max_epochs {
            stopped_early = true;
            break;
        }
    }
    for (&id, value) in trainable.iter().zip(best_params) {
        store.set(id, value)?;
    }
    if epochs.is_empty() {
        best_val_loss = evaluate(store, &split.val)?.loss;
    }
    Ok(FitOutcome {
        epochs,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}
