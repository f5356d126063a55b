use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Purpose of a random stream. Streams with different labels never share values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamLabel {
    Init,
    Shuffle,
    Sample,
    Synth,
}

impl StreamLabel {
    fn id(self) -> u64 {
        match self {
            StreamLabel::Init => 1,
            StreamLabel::Shuffle => 2,
            StreamLabel::Sample => 3,
            StreamLabel::Synth => 4,
        }
    }
}

/// Counter-based generator keyed by `(seed, label, substream)`.
///
/// Backed by ChaCha8, whose output is a pure function of key, stream id and
/// word position. Work that may run in any order takes its own substream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: StreamLabel,
    inner: ChaCha8Rng,
}

const SUB_BITS: u32 = 56;

impl RngStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        Self::keyed(seed, label, 0)
    }

    fn keyed(seed: u64, label: StreamLabel, sub: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream((label.id() << SUB_BITS) | (sub & ((1 << SUB_BITS) - 1)));
        RngStream { seed, label, inner }
    }

    /// Independent stream number `index` under the same seed and label.
    pub fn substream(&self, index: u64) -> Self {
        Self::keyed(self.seed, self.label, index + 1)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Standard Gumbel draw `-ln(-ln u)`, with `u` kept strictly inside `(0, 1)`.
    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniformly random permutation of `0..n` (Fisher–Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).collect();
        self.shuffle(&mut v);
        v
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        use rand::seq::SliceRandom;
        v.shuffle(&mut self.inner);
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
