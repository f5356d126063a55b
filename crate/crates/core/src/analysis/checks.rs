//! Numerical self-checks of the sampler and model: gradients, normalization
//! and sampling frequencies.

use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};
use crate::model::{model_forward, AlignmentModel, ModelSpec};
use crate::nn::{compute_loss, Task};
use crate::sampler::{sample_candidates, ClusterSampler, SampleMode, SamplerSpec};
use crate::tensor::{softmax, ParamStore, RngStream, StreamLabel, Tape, Tensor};

/// A sampler and model over random tables.
#[derive(Clone, Debug)]
pub struct Toy {
    pub store: ParamStore,
    pub sampler: ClusterSampler,
    pub model: AlignmentModel,
    pub primary: Tensor,
    pub secondary: Tensor,
    pub targets: Vec<f64>,
    pub task: Task,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyShape {
    pub n_primary: usize,
    pub n_secondary: usize,
    pub primary_width: usize,
    pub secondary_width: usize,
    pub latent: usize,
    pub heads: usize,
    pub clusters: usize,
    pub depth: usize,
    pub classes: usize,
}

impl Default for ToyShape {
    fn default() -> Self {
        ToyShape {
            n_primary: 8,
            n_secondary: 8,
            primary_width: 3,
            secondary_width: 2,
            latent: 8,
            heads: 2,
            clusters: 2,
            depth: 1,
            classes: 3,
        }
    }
}

fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| scale * rng.normal()).collect()).expect("sized")
}

impl Toy {
    pub fn new(shape: ToyShape, input_scale: f64, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let init = RngStream::new(seed, StreamLabel::Init);
        let sampler = ClusterSampler::new(
            &mut store,
            SamplerSpec {
                primary_width: shape.primary_width,
                secondary_width: shape.secondary_width,
                latent: shape.latent,
                clusters: shape.clusters,
                ae_depth: 2,
                gamma: 1.0,
                combiner_hidden: 4,
            },
            &mut init.substream(0),
        )?;
        let model = AlignmentModel::new(
            &mut store,
            ModelSpec {
                primary_width: shape.primary_width,
                secondary_width: shape.secondary_width,
                latent: shape.latent,
                heads: shape.heads,
                depth: shape.depth,
                outputs: shape.classes,
                tie_secondary_encoder: false,
            },
            &mut init.substream(1),
        )?;
        let mut data = RngStream::new(seed, StreamLabel::Synth);
        let primary = random_tensor(shape.n_primary, shape.primary_width, input_scale, &mut data);
        let secondary = random_tensor(shape.n_secondary, shape.secondary_width, input_scale, &mut data);
        let targets = (0..shape.n_primary).map(|_| data.below(shape.classes) as f64).collect();
        if shape.clusters <= shape.n_secondary {
            sampler.init_centroids(&mut store, &secondary, &mut init.substream(2))?;
        }
        Ok(Toy {
            store,
            sampler,
            model,
            primary,
            secondary,
            targets,
            task: Task::Classification { classes: shape.classes },
        })
    }
}

/// Finite-difference check of the whole training loss (sampler, straight-
/// through scaling, alignment model, cross-entropy) against every parameter.
///
/// The analytic gradient comes from the training forward pass. Its
/// straight-through factor has value 1 and passes `g / p` back, which is the
/// derivative of `p(θ) / p(θ₀)` at `θ₀`; the numeric side therefore
/// evaluates that ratio with the candidates of the analytic pass held fixed.
pub fn full_model_gradient_check(toy: &Toy, k: usize, eps: f64, seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let rng = RngStream::new(seed, StreamLabel::Sample);
    let mut tape = Tape::new();
    let out = model_forward(
        &mut tape,
        &toy.store,
        &toy.sampler,
        &toy.model,
        &toy.primary,
        &toy.secondary,
        k,
        SampleMode::Train,
        true,
        &mut rng.clone(),
    )?;
    let loss = compute_loss(&mut tape, toy.task, out.prediction, &toy.targets)?;
    tape.backward(loss)?;
    let grads = tape.param_grads();

    let p0 = out.p.expect("training pass reports p");
    let n_s = toy.secondary.shape()[0];
    let flat: Vec<usize> = out
        .candidates
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |&j| i * n_s + j))
        .collect();
    let inv_p0 = Tensor::vector(flat.iter().map(|&f| 1.0 / p0.data()[f]).collect());
    let surrogate = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::no_grad();
        let xp = t.constant(toy.primary.clone());
        let xs = t.constant(toy.secondary.clone());
        let probs = toy.sampler.probs(&mut t, store, xp, xs)?;
        let picked = t.take(probs.p, &flat, &[flat.len()])?;
        let inv = t.constant(inv_p0.clone());
        let ratio = t.mul(picked, inv)?;
        let (pred, _) = toy
            .model
            .forward_candidates(&mut t, store, Some(&toy.sampler), xp, xs, &out.candidates, Some(ratio))?;
        let l = compute_loss(&mut t, toy.task, pred, &toy.targets)?;
        Ok(t.value(l).item())
    };

    let mut work = toy.store.clone();
    let mut report = crate::tensor::GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        grad_norms: Vec::new(),
    };
    let ids: Vec<_> = toy.store.ids().collect();
    for id in ids {
        let analytic = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(toy.store.get(id).shape()));
        report.grad_norms.push((
            toy.store.name(id).to_string(),
            analytic.data().iter().map(|v| v * v).sum::<f64>().sqrt(),
        ));
        for i in 0..analytic.numel() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let up = surrogate(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let down = surrogate(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let a = analytic.data()[i];
            let e = (a - (up - down) / (2.0 * eps)).abs() / a.abs().max(1.0);
            report.checked += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst_param = toy.store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub cases: usize,
    /// Largest `|Σ − 1|` over rows, per quantity.
    pub lambda: f64,
    pub cluster_weights: f64,
    pub in_cluster: f64,
    pub sampling: f64,
    /// Largest elementwise change of softmax under a constant shift.
    pub softmax_shift: f64,
}

fn max_row_error(t: &Tensor) -> f64 {
    let cols = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks(cols.max(1))
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Runs `cases` random toys and records the worst normalization errors of
/// attention, cluster weights, in-cluster and sampling probabilities.
pub fn normalization_invariants(cases: usize, seed: u64) -> Result<NormalizationReport> {
    let mut rng = RngStream::new(seed, StreamLabel::Synth).substream(7);
    let mut report = NormalizationReport {
        cases,
        ..Default::default()
    };
    for case in 0..cases {
        let heads = 1 + rng.below(2);
        let shape = ToyShape {
            n_primary: 1 + rng.below(4),
            n_secondary: 1 + rng.below(9),
            primary_width: 1 + rng.below(3),
            secondary_width: 1 + rng.below(3),
            latent: heads * (1 + rng.below(3)),
            heads,
            clusters: 1 + rng.below(3),
            depth: 1 + rng.below(2),
            classes: 2,
        };
        let scale = 0.1 + 5.0 * rng.uniform();
        let toy = Toy::new(shape, scale, seed.wrapping_add(case as u64))?;
        let mut tape = Tape::no_grad();
        let xp = tape.constant(toy.primary.clone());
        let xs = tape.constant(toy.secondary.clone());
        let probs = toy.sampler.probs(&mut tape, &toy.store, xp, xs)?;
        report.cluster_weights = report.cluster_weights.max(max_row_error(tape.value(probs.w)));
        report.in_cluster = report.in_cluster.max(max_row_error(tape.value(probs.q)));
        report.sampling = report.sampling.max(max_row_error(tape.value(probs.p)));

        let k = 1 + rng.below(shape.n_secondary);
        let mode = if case % 2 == 0 { SampleMode::Train } else { SampleMode::Infer };
        let mut t2 = Tape::no_grad();
        let out = model_forward(&mut t2, &toy.store, &toy.sampler, &toy.model, &toy.primary, &toy.secondary, k, mode, false, &mut rng)?;
        for l in &out.lambda {
            report.lambda = report.lambda.max(max_row_error(l));
        }

        let x = random_tensor(2, 1 + rng.below(6), 10.0, &mut rng);
        let c = 100.0 * (rng.uniform() - 0.5);
        let shifted = x.map(|v| v + c);
        let diff = softmax(&x, 1)?.max_abs_diff(&softmax(&shifted, 1)?);
        report.softmax_shift = report.softmax_shift.max(diff);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub vectors: usize,
    pub draws: usize,
    /// Largest `|freq − p| / SE` over every index of every vector.
    pub max_z: f64,
    /// Indices whose deviation exceeded 3 standard errors.
    pub outside_3se: usize,
    pub indices_checked: usize,
}

/// Empirical selection frequencies of single-candidate training draws against
/// the probabilities they were drawn from.
pub fn sampler_marginals(vectors: usize, len: usize, draws: usize, seed: u64) -> Result<MarginalReport> {
    if len == 0 || draws == 0 {
        return Err(LealError::Config("marginal check needs len ≥ 1 and draws ≥ 1".into()));
    }
    let mut gen = RngStream::new(seed, StreamLabel::Synth).substream(11);
    let mut draw_rng = RngStream::new(seed, StreamLabel::Sample);
    let mut report = MarginalReport {
        vectors,
        draws,
        max_z: 0.0,
        outside_3se: 0,
        indices_checked: 0,
    };
    for _ in 0..vectors {
        let raw: Vec<f64> = (0..len).map(|_| -gen.uniform().max(1e-12).ln()).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mut counts = vec![0usize; len];
        for _ in 0..draws {
            counts[sample_candidates(&p, 1, SampleMode::Train, &mut draw_rng)?[0]] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            let se = (p[j] * (1.0 - p[j]) / draws as f64).sqrt();
            let z = (freq - p[j]).abs() / se;
            report.max_z = report.max_z.max(z);
            report.outside_3se += (z > 3.0) as usize;
            report.indices_checked += 1;
        }
    }
    Ok(report)
}
