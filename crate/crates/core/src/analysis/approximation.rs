use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};
use crate::nn::{AdamW, AdamWConfig};
use crate::sampler::{ClusterSampler, SamplerSpec};
use crate::tensor::{ParamStore, RngStream, StreamLabel, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproximationReport {
    pub grid: Vec<f64>,
    /// Target values, row `i` for primary grid value `i`.
    pub target: Vec<Vec<f64>>,
    pub fitted: Vec<Vec<f64>>,
    /// Grid MSE before each logged step.
    pub history: Vec<(usize, f64)>,
    pub final_mse: f64,
    /// First step whose MSE was below the threshold, if any.
    pub reached_at: Option<usize>,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproximationSettings {
    pub grid_points: usize,
    pub clusters: usize,
    pub latent: usize,
    pub steps: usize,
    pub lr: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ApproximationSettings {
    fn default() -> Self {
        ApproximationSettings {
            grid_points: 4,
            clusters: 2,
            latent: 16,
            steps: 5000,
            lr: 1e-2,
            threshold: 1e-2,
            seed: 0,
        }
    }
}

/// Separable default target `p² · (1 − s²)` on `[0, 1]²`.
pub fn default_target(p: f64, s: f64) -> f64 {
    p * p * (1.0 - s * s)
}

/// Pre-softmax sampler score for every (primary, secondary) pair:
/// the combiner applied to `w(p) · q(s)`.
fn score(tape: &mut Tape, store: &ParamStore, sampler: &ClusterSampler, xp: Var, xs: Var) -> Result<Var> {
    let w = sampler.cluster_weights(tape, store, xp)?;
    let h = sampler.encode(tape, store, xs)?;
    let q = sampler.in_cluster_probs(tape, store, h)?;
    let qt = tape.transpose(q)?;
    let s = tape.matmul(w, qt)?;
    sampler.combiner.forward(tape, store, s)
}

/// Trains every sampler parameter so that its score on a
/// `grid_points × grid_points` grid over `[0, 1]²` matches `target`.
pub fn score_approximation(settings: ApproximationSettings, target: impl Fn(f64, f64) -> f64) -> Result<ApproximationReport> {
    let g = settings.grid_points;
    if g < 2 {
        return Err(LealError::Config("the grid needs at least 2 points per axis".into()));
    }
    let grid: Vec<f64> = (0..g).map(|i| i as f64 / (g - 1) as f64).collect();
    let values: Vec<Vec<f64>> = grid.iter().map(|&p| grid.iter().map(|&s| target(p, s)).collect()).collect();
    let target_t = Tensor::from_rows(&values)?;
    let column = Tensor::new(vec![g, 1], grid.clone())?;

    let mut store = ParamStore::new();
    let sampler = ClusterSampler::new(
        &mut store,
        SamplerSpec {
            primary_width: 1,
            secondary_width: 1,
            latent: settings.latent,
            clusters: settings.clusters,
            ae_depth: 2,
            gamma: 1.0,
            combiner_hidden: 16,
        },
        &mut RngStream::new(settings.seed, StreamLabel::Init),
    )?;
    sampler.init_centroids(&mut store, &column, &mut RngStream::new(settings.seed, StreamLabel::Init).substream(1))?;
    let ids = sampler.param_ids();
    let mut opt = AdamW::new(AdamWConfig {
        lr: settings.lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });

    let mut history = Vec::new();
    let mut reached_at = None;
    let mut mse = f64::INFINITY;
    for step in 0..=settings.steps {
        let mut tape = Tape::new();
        let xp = tape.constant(column.clone());
        let xs = tape.constant(column.clone());
        let out = score(&mut tape, &store, &sampler, xp, xs)?;
        let t = tape.constant(target_t.clone());
        let loss = tape.mse(out, t)?;
        mse = tape.value(loss).item();
        if !mse.is_finite() {
            return Err(LealError::Diverged(format!("score fit reached {mse} at step {step}")));
        }
        if step % 100 == 0 || step == settings.steps {
            history.push((step, mse));
        }
        if reached_at.is_none() && mse < settings.threshold {
            reached_at = Some(step);
        }
        if step == settings.steps {
            break;
        }
        tape.backward(loss)?;
        let grads: Vec<_> = tape.param_grads().into_iter().filter(|(id, _)| ids.contains(id)).collect();
        opt.step(&mut store, &grads)?;
    }

    let mut tape = Tape::no_grad();
    let xp = tape.constant(column.clone());
    let xs = tape.constant(column);
    let out = score(&mut tape, &store, &sampler, xp, xs)?;
    let fitted = (0..g).map(|i| tape.value(out).row(i).to_vec()).collect();
    Ok(ApproximationReport {
        grid,
        target: values,
        fitted,
        history,
        final_mse: mse,
        reached_at,
        steps: settings.steps,
    })
}
