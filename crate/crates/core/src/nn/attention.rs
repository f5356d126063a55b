use serde::{Deserialize, Serialize};

use super::Linear;
use crate::error::{LealError, Result};
use crate::tensor::{ParamStore, RngStream, Tape, Tensor, Var};

/// Query/key/value/output projections around [`Tape::attention`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        check_heads(width, heads)?;
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), width, width, rng),
            key: Linear::new(store, &format!("{name}.k"), width, width, rng),
            value: Linear::new(store, &format!("{name}.v"), width, width, rng),
            output: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
            width,
        })
    }

    /// All four projections set to the identity with zero bias.
    pub fn identity(store: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        check_heads(width, heads)?;
        let eye = |store: &mut ParamStore, suffix: &str| {
            let mut w = Tensor::zeros(&[width, width]);
            for i in 0..width {
                w.data_mut()[i * width + i] = 1.0;
            }
            Linear::from_tensors(store, &format!("{name}.{suffix}"), w, Tensor::zeros(&[width]))
        };
        Ok(MultiHeadAttention {
            query: eye(store, "q")?,
            key: eye(store, "k")?,
            value: eye(store, "v")?,
            output: eye(store, "o")?,
            heads,
            width,
        })
    }

    /// `queries: [b×nq×d]`, `keys_values: [b×nk×d]` → output `[b×nq×d]` and
    /// weights `[b×H×nq×nk]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys_values: Var,
    ) -> Result<(Var, Tensor)> {
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, keys_values)?;
        let v = self.value.forward(tape, store, keys_values)?;
        let (o, weights) = tape.attention(q, k, v, self.heads)?;
        let out = self.output.forward(tape, store, o)?;
        Ok((out, weights))
    }

    pub fn param_ids(&self) -> Vec<crate::tensor::ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

fn check_heads(width: usize, heads: usize) -> Result<()> {
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(LealError::Config(format!(
            "attention width {width} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}
