//! Trainable cluster sampler: proposes candidate secondary records for each
//! primary record from cluster weights and Student's t cluster memberships.

mod autoencoder;
mod kmeans;

pub use autoencoder::{pretrain_autoencoder, AutoencoderReport};
pub use kmeans::{kmeans, KMeans};

use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};
use crate::nn::{init_uniform, Mlp, MlpSpec};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub primary_width: usize,
    pub secondary_width: usize,
    pub latent: usize,
    pub clusters: usize,
    /// 1 gives a linear autoencoder; 2 adds one hidden layer on each side.
    pub ae_depth: usize,
    pub gamma: f64,
    pub combiner_hidden: usize,
}

/// The scalar MLP applied to every score `q·wᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combiner {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Combiner {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        tape.pointwise_mlp(s, w1, b1, w2, b2)
    }

    /// Sets the combiner to `relu(s)`, which is the identity on scores in `[0, 1]`.
    pub fn set_identity(&self, store: &mut ParamStore) {
        let h = store.get(self.w1).numel();
        let mut w1 = vec![0.0; h];
        let mut w2 = vec![0.0; h];
        w1[0] = 1.0;
        w2[0] = 1.0;
        store.get_mut(self.w1).data_mut().copy_from_slice(&w1);
        store.get_mut(self.w2).data_mut().copy_from_slice(&w2);
        store.get_mut(self.b1).data_mut().fill(0.0);
        store.get_mut(self.b2).data_mut().fill(0.0);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSampler {
    pub spec: SamplerSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub centroids: ParamId,
    pub weight_generator: Mlp,
    pub combiner: Combiner,
}

/// Per-batch sampler outputs on the tape.
#[derive(Clone, Copy, Debug)]
pub struct SampleProbs {
    /// Cluster weights `[b×C]`.
    pub w: Var,
    /// In-cluster probabilities `[n^S×C]`.
    pub q: Var,
    /// Sampling probabilities over secondary records `[b×n^S]`.
    pub p: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Infer,
}

impl ClusterSampler {
    pub fn new(store: &mut ParamStore, spec: SamplerSpec, rng: &mut RngStream) -> Result<Self> {
        if spec.clusters == 0 || spec.latent == 0 || !(1..=2).contains(&spec.ae_depth) {
            return Err(LealError::Config(format!(
                "sampler needs clusters ≥ 1, latent ≥ 1 and autoencoder depth 1 or 2, got {spec:?}"
            )));
        }
        if !(spec.gamma > 0.0) {
            return Err(LealError::Config(format!("gamma must be positive, got {}", spec.gamma)));
        }
        let (enc, dec) = if spec.ae_depth == 1 {
            (
                vec![spec.secondary_width, spec.latent],
                vec![spec.latent, spec.secondary_width],
            )
        } else {
            (
                vec![spec.secondary_width, spec.latent, spec.latent],
                vec![spec.latent, spec.latent, spec.secondary_width],
            )
        };
        let encoder = Mlp::new(store, "sampler.encoder", MlpSpec::new(enc, false)?, rng);
        let decoder = Mlp::new(store, "sampler.decoder", MlpSpec::new(dec, false)?, rng);
        let centroids = store.add(
            "sampler.centroids",
            Tensor::zeros(&[spec.clusters, spec.latent]),
        );
        let weight_generator = Mlp::new(
            store,
            "sampler.weights",
            MlpSpec::new(vec![spec.primary_width, spec.latent, spec.clusters], false)?,
            rng,
        );
        let h = spec.combiner_hidden;
        let combiner = Combiner {
            w1: store.add("sampler.combiner.w1", init_uniform(&[h], 1, rng)),
            b1: store.add("sampler.combiner.b1", init_uniform(&[h], 1, rng)),
            w2: store.add("sampler.combiner.w2", init_uniform(&[h], h, rng)),
            b2: store.add("sampler.combiner.b2", init_uniform(&[1], h, rng)),
        };
        Ok(ClusterSampler {
            spec,
            encoder,
            decoder,
            centroids,
            weight_generator,
            combiner,
        })
    }

    /// `h^S = g^S(x_s)`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x_s: Var) -> Result<Var> {
        self.encoder.forward(tape, store, x_s)
    }

    /// Student's t membership of each encoded record in each cluster.
    pub fn in_cluster_probs(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let c = tape.param(store, self.centroids);
        tape.student_t(h, c, self.spec.gamma)
    }

    /// `softmax(FeedForward(x_p))` per primary record.
    pub fn cluster_weights(&self, tape: &mut Tape, store: &ParamStore, x_p: Var) -> Result<Var> {
        let logits = self.weight_generator.forward(tape, store, x_p)?;
        tape.softmax(logits, 1)
    }

    /// `softmax over records of MLP(q·wᵀ)`: `[b×n^S]` from `q: [n^S×C]`, `w: [b×C]`.
    pub fn sampling_probs(&self, tape: &mut Tape, store: &ParamStore, q: Var, w: Var) -> Result<Var> {
        let qt = tape.transpose(q)?;
        let scores = tape.matmul(w, qt)?;
        let mixed = self.combiner.forward(tape, store, scores)?;
        tape.softmax(mixed, 1)
    }

    /// The full probability pathway for a batch of primary rows against every
    /// secondary row.
    pub fn probs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_p: Var,
        x_s: Var,
    ) -> Result<SampleProbs> {
        let h = self.encode(tape, store, x_s)?;
        let q = self.in_cluster_probs(tape, store, h)?;
        let w = self.cluster_weights(tape, store, x_p)?;
        let p = self.sampling_probs(tape, store, q, w)?;
        Ok(SampleProbs { w, q, p })
    }

    /// Runs k-means on the encoded secondary table and stores the centroids.
    pub fn init_centroids(
        &self,
        store: &mut ParamStore,
        secondary: &Tensor,
        rng: &mut RngStream,
    ) -> Result<KMeans> {
        let mut tape = Tape::no_grad();
        let x = tape.constant(secondary.clone());
        let h = self.encode(&mut tape, store, x)?;
        let km = kmeans(tape.value(h), self.spec.clusters, rng)?;
        store.set(self.centroids, km.centroids.clone())?;
        Ok(km)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.decoder.param_ids());
        ids.push(self.centroids);
        ids.extend(self.weight_generator.param_ids());
        ids.extend([
            self.combiner.w1,
            self.combiner.b1,
            self.combiner.w2,
            self.combiner.b2,
        ]);
        ids
    }
}

/// `K` distinct record indices from one row of sampling probabilities.
///
/// Training draws without replacement by Gumbel-top-K on `ln p`; inference
/// takes the `K` largest probabilities, ties to the lower index. `K` is
/// clamped to the number of records. Indices come in decreasing key order.
pub fn sample_candidates(p: &[f64], k: usize, mode: SampleMode, rng: &mut RngStream) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(LealError::Config("candidate count K must be at least 1".into()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(LealError::NonFinite("sampling probabilities are not valid".into()));
    }
    if !p.iter().any(|&v| v > 0.0) {
        return Err(LealError::Data("all sampling probabilities are zero".into()));
    }
    let k = k.min(p.len());
    let keys: Vec<f64> = match mode {
        SampleMode::Infer => p.to_vec(),
        SampleMode::Train => p.iter().map(|&v| v.ln() + rng.gumbel()).collect(),
    };
    let mut idx: Vec<usize> = (0..p.len()).collect();
    let cmp = |a: &usize, b: &usize| keys[*b].total_cmp(&keys[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    Ok(idx)
}
