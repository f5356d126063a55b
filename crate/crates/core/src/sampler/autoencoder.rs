use serde::{Deserialize, Serialize};

use super::ClusterSampler;
use crate::error::{LealError, Result};
use crate::nn::{AdamW, AdamWConfig};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderReport {
    /// Full-table reconstruction MSE after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Best reconstruction MSE seen so far, after each epoch.
    pub best_so_far: Vec<f64>,
    pub final_loss: f64,
}

fn reconstruction_loss(
    sampler: &ClusterSampler,
    store: &ParamStore,
    tape: &mut Tape,
    x: &Tensor,
) -> Result<crate::tensor::Var> {
    let xv = tape.constant(x.clone());
    let h = sampler.encoder.forward(tape, store, xv)?;
    let r = sampler.decoder.forward(tape, store, h)?;
    tape.mse(r, xv)
}

/// Minimizes `‖X − φ(g(X))‖²` over mini-batches of `batch` rows; the
/// parameters with the lowest full-table loss are kept.
pub fn pretrain_autoencoder(
    sampler: &ClusterSampler,
    store: &mut ParamStore,
    secondary: &Tensor,
    epochs: usize,
    optimizer: AdamWConfig,
    batch: usize,
    rng: &mut RngStream,
) -> Result<AutoencoderReport> {
    let (n, _) = secondary.dims2()?;
    if n == 0 {
        return Err(LealError::Data("cannot pretrain on an empty secondary table".into()));
    }
    let ids: Vec<ParamId> = sampler
        .encoder
        .param_ids()
        .into_iter()
        .chain(sampler.decoder.param_ids())
        .collect();
    let snapshot = |store: &ParamStore| -> Vec<Tensor> { ids.iter().map(|&i| store.get(i).clone()).collect() };
    let full_loss = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let l = reconstruction_loss(sampler, store, &mut tape, secondary)?;
        Ok(tape.value(l).item())
    };

    let mut opt = AdamW::new(optimizer);
    let mut best = full_loss(store)?;
    let mut best_params = snapshot(store);
    let mut report = AutoencoderReport {
        epoch_losses: Vec::with_capacity(epochs),
        best_so_far: Vec::with_capacity(epochs),
        final_loss: best,
    };
    let batch = batch.max(1);
    for epoch in 0..epochs {
        let order = rng.permutation(n);
        for rows in order.chunks(batch) {
            let x = secondary.select_rows(rows);
            let mut tape = Tape::new();
            let loss = reconstruction_loss(sampler, store, &mut tape, &x)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(diverged(epoch, optimizer.lr, value));
            }
            tape.backward(loss)?;
            let grads: Vec<_> = tape
                .param_grads()
                .into_iter()
                .filter(|(id, _)| ids.contains(id))
                .collect();
            opt.step(store, &grads)?;
        }
        let loss = full_loss(store)?;
        if !loss.is_finite() {
            return Err(diverged(epoch, optimizer.lr, loss));
        }
        if loss < best {
            best = loss;
            best_params = snapshot(store);
        }
        report.epoch_losses.push(loss);
        report.best_so_far.push(best);
    }
    for (&id, value) in ids.iter().zip(best_params) {
        store.set(id, value)?;
    }
    report.final_loss = best;
    Ok(report)
}

fn diverged(epoch: usize, lr: f64, loss: f64) -> LealError {
    LealError::Diverged(format!(
        "autoencoder reconstruction loss became {loss} in epoch {epoch} with learning rate {lr}; lower the learning rate"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SamplerSpec;
    use crate::tensor::StreamLabel;

    fn setup(m: usize, latent: usize, seed: u64) -> (ClusterSampler, ParamStore) {
        let mut store = ParamStore::new();
        let spec = SamplerSpec {
            primary_width: 1,
            secondary_width: m,
            latent,
            clusters: 2,
            ae_depth: 1,
            gamma: 1.0,
            combiner_hidden: 16,
        };
        let s = ClusterSampler::new(&mut store, spec, &mut RngStream::new(seed, StreamLabel::Init)).unwrap();
        (s, store)
    }

    fn data(n: usize, m: usize) -> Tensor {
        let mut rng = RngStream::new(9, StreamLabel::Synth);
        Tensor::new(vec![n, m], (0..n * m).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn overcomplete_linear_autoencoder_reconstructs() {
        let (s, mut store) = setup(4, 6, 0);
        let x = data(20, 4);
        let opt = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut rng = RngStream::new(0, StreamLabel::Shuffle);
        let r = pretrain_autoencoder(&s, &mut store, &x, 2000, opt, 20, &mut rng).unwrap();
        assert!(r.final_loss < 1e-3, "final loss {}", r.final_loss);
        assert!(r.best_so_far.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let run = || {
            let (s, mut store) = setup(3, 4, 1);
            let mut rng = RngStream::new(1, StreamLabel::Shuffle);
            pretrain_autoencoder(&s, &mut store, &data(30, 3), 5, AdamWConfig::default(), 8, &mut rng)
                .unwrap()
                .final_loss
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn zero_input_reaches_zero_loss() {
        let (s, mut store) = setup(3, 2, 2);
        store.get_mut(s.encoder.layers[0].bias).data_mut().fill(0.0);
        store.get_mut(s.decoder.layers[0].bias).data_mut().fill(0.0);
        let mut tape = Tape::no_grad();
        let l = reconstruction_loss(&s, &store, &mut tape, &Tensor::zeros(&[5, 3])).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let (s, mut store) = setup(3, 3, 3);
        let x = data(30, 3).map(|v| v * 1e150);
        let opt = AdamWConfig {
            lr: 1e3,
            ..Default::default()
        };
        let mut rng = RngStream::new(1, StreamLabel::Shuffle);
        let err = pretrain_autoencoder(&s, &mut store, &x, 50, opt, 8, &mut rng).unwrap_err();
        assert!(err.to_string().contains("learning rate"), "{err}");
    }
}
