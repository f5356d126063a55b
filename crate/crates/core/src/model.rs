//! Encoders, stacked soft-alignment blocks and the prediction head.

use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};
use crate::nn::{LayerNorm, Linear, Mlp, MlpSpec, MultiHeadAttention};
use crate::sampler::{sample_candidates, ClusterSampler, SampleMode};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub primary_width: usize,
    pub secondary_width: usize,
    pub latent: usize,
    pub heads: usize,
    pub depth: usize,
    pub outputs: usize,
    /// Encode candidates with the sampler's pretrained encoder instead of a
    /// separate one.
    pub tie_secondary_encoder: bool,
}

/// `x + W₂ relu(W₁ LN(x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut RngStream) -> Self {
        FeedForward {
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            inner: Linear::new(store, &format!("{name}.inner"), d, d, rng),
            outer: Linear::new(store, &format!("{name}.outer"), d, d, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, store, x)?;
        let h = self.inner.forward(tape, store, h)?;
        let h = tape.relu(h);
        let h = self.outer.forward(tape, store, h)?;
        tape.add(x, h)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.norm.gain,
            self.norm.shift,
            self.inner.weight,
            self.inner.bias,
            self.outer.weight,
            self.outer.bias,
        ]
    }
}

/// Self-attention and feed-forward on each stream, then cross-attention from
/// the primary record to its candidates with a residual connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBlock {
    pub primary_self: MultiHeadAttention,
    pub primary_ff: FeedForward,
    pub secondary_self: MultiHeadAttention,
    pub secondary_ff: FeedForward,
    pub cross: MultiHeadAttention,
    pub cross_ff: FeedForward,
}

impl AlignmentBlock {
    fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(AlignmentBlock {
            primary_self: MultiHeadAttention::new(store, &format!("{name}.p_self"), d, heads, rng)?,
            primary_ff: FeedForward::new(store, &format!("{name}.p_ff"), d, rng),
            secondary_self: MultiHeadAttention::new(store, &format!("{name}.s_self"), d, heads, rng)?,
            secondary_ff: FeedForward::new(store, &format!("{name}.s_ff"), d, rng),
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), d, heads, rng)?,
            cross_ff: FeedForward::new(store, &format!("{name}.cross_ff"), d, rng),
        })
    }

    /// `z_p: [b×1×d]`, `z_s: [b×K×d]`. Returns updated streams and the
    /// head-averaged cross-attention weights `[b×K]`.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, z_p: Var, z_s: Var) -> Result<(Var, Var, Tensor)> {
        let (a, _) = self.primary_self.forward(tape, store, z_p, z_p)?;
        let z_p = tape.add(z_p, a)?;
        let z_p = self.primary_ff.forward(tape, store, z_p)?;
        let (a, _) = self.secondary_self.forward(tape, store, z_s, z_s)?;
        let z_s = tape.add(z_s, a)?;
        let z_s = self.secondary_ff.forward(tape, store, z_s)?;
        let (a, weights) = self.cross.forward(tape, store, z_p, z_s)?;
        let z_p = tape.add(z_p, a)?;
        let z_p = self.cross_ff.forward(tape, store, z_p)?;
        Ok((z_p, z_s, head_mean(&weights)))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.primary_self.param_ids();
        ids.extend(self.primary_ff.param_ids());
        ids.extend(self.secondary_self.param_ids());
        ids.extend(self.secondary_ff.param_ids());
        ids.extend(self.cross.param_ids());
        ids.extend(self.cross_ff.param_ids());
        ids
    }
}

/// `[b×H×1×K]` → `[b×K]` averaged over heads.
fn head_mean(weights: &Tensor) -> Tensor {
    let s = weights.shape();
    let (b, h, k) = (s[0], s[1], s[3]);
    let mut out = vec![0.0; b * k];
    for bi in 0..b {
        for hi in 0..h {
            let base = (bi * h + hi) * k;
            for j in 0..k {
                out[bi * k + j] += weights.data()[base + j] / h as f64;
            }
        }
    }
    Tensor::new(vec![b, k], out).expect("shape and length agree")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentModel {
    pub spec: ModelSpec,
    pub primary_encoder: Mlp,
    pub secondary_encoder: Option<Mlp>,
    pub blocks: Vec<AlignmentBlock>,
    pub head: Linear,
}

/// Predictions and alignment diagnostics of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Logits `[b×classes]` or values `[b×1]`.
    pub prediction: Var,
    /// Head-averaged cross-attention weights of every block, each `[b×K]`.
    pub lambda: Vec<Tensor>,
    /// Candidate secondary rows of each primary record.
    pub candidates: Vec<Vec<usize>>,
    /// Sampling probabilities `[b×n^S]` when the sampler was used.
    pub p: Option<Tensor>,
}

impl AlignmentModel {
    pub fn new(store: &mut ParamStore, spec: ModelSpec, rng: &mut RngStream) -> Result<Self> {
        if spec.depth == 0 || spec.outputs == 0 {
            return Err(LealError::Config(format!(
                "model needs depth ≥ 1 and at least one output, got {spec:?}"
            )));
        }
        let d = spec.latent;
        let primary_encoder = Mlp::new(
            store,
            "model.f_p",
            MlpSpec::new(vec![spec.primary_width, d, d], true)?,
            rng,
        );
        let secondary_encoder = if spec.tie_secondary_encoder {
            None
        } else {
            Some(Mlp::new(
                store,
                "model.f_s",
                MlpSpec::new(vec![spec.secondary_width, d, d], true)?,
                rng,
            ))
        };
        let blocks = (0..spec.depth)
            .map(|l| AlignmentBlock::new(store, &format!("model.block{l}"), d, spec.heads, rng))
            .collect::<Result<_>>()?;
        let head = Linear::new(store, "model.head", d, spec.outputs, rng);
        Ok(AlignmentModel {
            spec,
            primary_encoder,
            secondary_encoder,
            blocks,
            head,
        })
    }

    pub fn encode_primary(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.primary_encoder.forward(tape, store, x)
    }

    pub fn encode_secondary(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sampler: Option<&ClusterSampler>,
        x: Var,
    ) -> Result<Var> {
        match (&self.secondary_encoder, sampler) {
            (Some(enc), _) => enc.forward(tape, store, x),
            (None, Some(s)) => s.encode(tape, store, x),
            (None, None) => Err(LealError::Config(
                "a tied secondary encoder needs the sampler".into(),
            )),
        }
    }

    /// Runs the blocks on `z_p: [b×d]` and `z_s: [b×K×d]`, then the head.
    pub fn align_and_predict(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_p: Var,
        z_s: Var,
    ) -> Result<(Var, Vec<Tensor>)> {
        let b = tape.shape(z_p)[0];
        let d = self.spec.latent;
        if tape.shape(z_s).len() != 3 || tape.shape(z_s)[0] != b || tape.shape(z_s)[2] != d {
            return Err(LealError::shape("align_and_predict", tape.shape(z_p), tape.shape(z_s)));
        }
        if tape.shape(z_s)[1] == 0 {
            return Err(LealError::Data("soft alignment over zero candidates".into()));
        }
        let mut zp = tape.reshape(z_p, &[b, 1, d])?;
        let mut zs = z_s;
        let mut lambda = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (p, s, l) = block.forward(tape, store, zp, zs)?;
            zp = p;
            zs = s;
            lambda.push(l);
        }
        let z = tape.reshape(zp, &[b, d])?;
        let pred = self.head.forward(tape, store, z)?;
        Ok((pred, lambda))
    }

    /// Forward pass with candidate sets chosen by the caller.
    ///
    /// `scale`, when given, multiplies each candidate embedding row
    /// (`[b·K]` values in candidate order).
    #[allow(clippy::too_many_arguments)]
    pub fn forward_candidates(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sampler: Option<&ClusterSampler>,
        x_p: Var,
        secondary: Var,
        candidates: &[Vec<usize>],
        scale: Option<Var>,
    ) -> Result<(Var, Vec<Tensor>)> {
        let b = tape.shape(x_p)[0];
        if candidates.len() != b {
            return Err(LealError::shape("forward_candidates", tape.shape(x_p), &[candidates.len()]));
        }
        let k = candidates.first().map_or(0, Vec::len);
        if k == 0 || candidates.iter().any(|c| c.len() != k) {
            return Err(LealError::Data("every record needs the same non-zero number of candidates".into()));
        }
        let flat: Vec<usize> = candidates.concat();
        let x_c = tape.gather_rows(secondary, &flat)?;
        let mut z_s = self.encode_secondary(tape, store, sampler, x_c)?;
        if let Some(s) = scale {
            z_s = tape.scale_rows(z_s, s)?;
        }
        let z_s = tape.reshape(z_s, &[b, k, self.spec.latent])?;
        let z_p = self.encode_primary(tape, store, x_p)?;
        self.align_and_predict(tape, store, z_p, z_s)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.primary_encoder.param_ids();
        if let Some(enc) = &self.secondary_encoder {
            ids.extend(enc.param_ids());
        }
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids.push(self.head.weight);
        ids.push(self.head.bias);
        ids
    }
}

/// The whole pipeline for a batch of primary rows: sampling probabilities →
/// `K` candidates per record → encoders → alignment blocks → head.
///
/// In training mode, with `straight_through`, every selected candidate
/// embedding is multiplied by `p / detach(p)` so the loss reaches the sampler.
#[allow(clippy::too_many_arguments)]
pub fn model_forward(
    tape: &mut Tape,
    store: &ParamStore,
    sampler: &ClusterSampler,
    model: &AlignmentModel,
    x_p: &Tensor,
    secondary: &Tensor,
    k: usize,
    mode: SampleMode,
    straight_through: bool,
    rng: &mut RngStream,
) -> Result<ForwardOutput> {
    let xp = tape.constant(x_p.clone());
    let xs = tape.constant(secondary.clone());
    let probs = sampler.probs(tape, store, xp, xs)?;
    let p_val = tape.value(probs.p).clone();
    let (b, n_s) = p_val.dims2()?;
    let candidates = (0..b)
        .map(|i| sample_candidates(p_val.row(i), k, mode, rng))
        .collect::<Result<Vec<_>>>()?;
    let k = candidates.first().map_or(0, Vec::len);
    let scale = if mode == SampleMode::Train && straight_through && tape.requires_grad(probs.p) {
        let flat: Vec<usize> = candidates
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |&j| i * n_s + j))
            .collect();
        let picked = tape.take(probs.p, &flat, &[b * k])?;
        Some(tape.straight_through(picked)?)
    } else {
        None
    };
    let (prediction, lambda) =
        model.forward_candidates(tape, store, Some(sampler), xp, xs, &candidates, scale)?;
    Ok(ForwardOutput {
        prediction,
        lambda,
        candidates,
        p: Some(p_val),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::StreamLabel;

    fn small(store: &mut ParamStore, depth: usize, outputs: usize) -> AlignmentModel {
        let spec = ModelSpec {
            primary_width: 3,
            secondary_width: 2,
            latent: 4,
            heads: 2,
            depth,
            outputs,
            tie_secondary_encoder: false,
        };
        AlignmentModel::new(store, spec, &mut RngStream::new(0, StreamLabel::Init)).unwrap()
    }

    fn run(model: &AlignmentModel, store: &ParamStore, xp: Tensor, zs: Tensor) -> (Tensor, Vec<Tensor>) {
        let mut t = Tape::no_grad();
        let xp = t.constant(xp);
        let zp = model.encode_primary(&mut t, store, xp).unwrap();
        let zs = t.constant(zs);
        let (pred, l) = model.align_and_predict(&mut t, store, zp, zs).unwrap();
        (t.value(pred).clone(), l)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = RngStream::new(seed, StreamLabel::Synth);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.normal()).collect()).unwrap()
    }

    #[test]
    fn identical_candidates_get_uniform_weight() {
        let mut store = ParamStore::new();
        let m = small(&mut store, 2, 3);
        let row = [0.3, -1.0, 2.0, 0.5];
        let zs = Tensor::new(vec![1, 3, 4], row.repeat(3)).unwrap();
        let (_, lambda) = run(&m, &store, random(&[1, 3], 1), zs);
        for l in lambda {
            assert!(l.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn candidate_permutation_equivariance() {
        let mut store = ParamStore::new();
        let m = small(&mut store, 2, 3);
        let xp = random(&[2, 3], 2);
        let zs = random(&[2, 4, 4], 3);
        let perm = [2, 0, 3, 1];
        let mut permuted = Vec::new();
        for b in 0..2 {
            for &j in &perm {
                permuted.extend_from_slice(&zs.data()[(b * 4 + j) * 4..(b * 4 + j + 1) * 4]);
            }
        }
        let (pred, l) = run(&m, &store, xp.clone(), zs);
        let (pred2, l2) = run(&m, &store, xp, Tensor::new(vec![2, 4, 4], permuted).unwrap());
        assert!(pred.max_abs_diff(&pred2) < 1e-10);
        for (a, b) in l.iter().zip(&l2) {
            for r in 0..2 {
                for (i, &j) in perm.iter().enumerate() {
                    assert!((b.row(r)[i] - a.row(r)[j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_head_gives_zero_logits_and_rows_are_independent() {
        let mut store = ParamStore::new();
        let m = small(&mut store, 1, 3);
        store.get_mut(m.head.weight).data_mut().fill(0.0);
        store.get_mut(m.head.bias).data_mut().fill(0.0);
        let (pred, _) = run(&m, &store, random(&[2, 3], 4), random(&[2, 2, 4], 5));
        assert!(pred.data().iter().all(|&v| v == 0.0));

        let mut store = ParamStore::new();
        let m = small(&mut store, 1, 3);
        let xp = random(&[2, 3], 6);
        let zs = random(&[2, 2, 4], 7);
        let (both, _) = run(&m, &store, xp.clone(), zs.clone());
        let first_p = Tensor::new(vec![1, 3], xp.row(0).to_vec()).unwrap();
        let first_s = Tensor::new(vec![1, 2, 4], zs.data()[..8].to_vec()).unwrap();
        let (one, _) = run(&m, &store, first_p, first_s);
        assert_eq!(one.data(), both.row(0));
    }

    #[test]
    fn zero_candidates_rejected() {
        let mut store = ParamStore::new();
        let m = small(&mut store, 1, 1);
        let mut t = Tape::no_grad();
        let xp = t.constant(random(&[1, 3], 1));
        let zp = m.encode_primary(&mut t, &store, xp).unwrap();
        let zs = t.constant(Tensor::zeros(&[1, 0, 4]));
        assert!(m.align_and_predict(&mut t, &store, zp, zs).is_err());
    }
}
