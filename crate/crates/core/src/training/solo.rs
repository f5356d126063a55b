use super::{check_bundle, fit, score_outputs, targets, LealConfig, TrainReport};
use crate::analysis::metric_name;
use crate::data::DatasetBundle;
use crate::error::Result;
use crate::nn::{compute_loss, Mlp, MlpSpec};
use crate::tensor::{ParamStore, RngStream, StreamLabel, Tape, Tensor};

/// The primary-only baseline after training.
#[derive(Clone, Debug)]
pub struct SoloRun {
    pub store: ParamStore,
    pub mlp: Mlp,
    pub report: TrainReport,
}

pub fn solo_outputs(store: &ParamStore, mlp: &Mlp, primary: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    let x = tape.constant(primary.clone());
    let out = mlp.forward(&mut tape, store, x)?;
    Ok(tape.value(out).clone())
}

/// ReLU MLP on the primary features alone, trained with the same split,
/// optimizer and early stopping as [`super::train_leal`].
pub fn train_solo_mlp(bundle: &DatasetBundle, config: &LealConfig) -> Result<SoloRun> {
    check_bundle(bundle)?;
    config.validate()?;
    let task = bundle.task();
    let mut widths = vec![bundle.primary.width()];
    widths.extend(&config.solo_hidden);
    widths.push(task.output_width());
    let mut store = ParamStore::new();
    let mut init = RngStream::new(config.seed, StreamLabel::Init).substream(4);
    let mlp = Mlp::new(&mut store, "solo", MlpSpec::new(widths, false)?, &mut init);
    let primary = &bundle.primary.values;

    let trainable = mlp.param_ids();
    let mut shuffle = RngStream::new(config.seed, StreamLabel::Shuffle).substream(1).substream(1);
    let outcome = fit(
        &mut store,
        &trainable,
        &bundle.split,
        &config.fit_settings(),
        &mut shuffle,
        |tape, store, rows| {
            let x = tape.constant(primary.select_rows(rows));
            let out = mlp.forward(tape, store, x)?;
            compute_loss(tape, task, out, &targets(bundle, rows))
        },
        |store, rows| {
            let out = solo_outputs(store, &mlp, &primary.select_rows(rows))?;
            score_outputs(&out, &targets(bundle, rows), task)
        },
    )?;
    let test_rows = &bundle.split.test;
    let out = solo_outputs(&store, &mlp, &primary.select_rows(test_rows))?;
    let test = score_outputs(&out, &targets(bundle, test_rows), task)?;
    let report = TrainReport {
        model: "solo-mlp".into(),
        metric: metric_name(task).into(),
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stopped_early: outcome.stopped_early,
        test_loss: test.loss,
        test_metric: test.metric,
        seed: config.seed,
        config: config.clone(),
        autoencoder: None,
        mean_lambda_true: None,
    };
    Ok(SoloRun { store, mlp, report })
}
