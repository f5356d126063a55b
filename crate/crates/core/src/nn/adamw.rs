use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter listed in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        for (id, g) in grads {
            if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
                return Err(LealError::NonFinite(format!(
                    "gradient of parameter `{}` contains {bad}",
                    store.name(*id)
                )));
            }
            if g.shape() != store.get(*id).shape() {
                return Err(LealError::shape("adamw_step", store.get(*id).shape(), g.shape()));
            }
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads {
            let i = id.index();
            let m = self.first[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = store.get_mut(*id).data_mut();
            for (((pj, &gj), mj), vj) in p
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *pj -= lr * weight_decay * *pj;
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *pj -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::vector(vec![v]));
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let (mut s, id) = one_param(0.7);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut s, &[(id, Tensor::vector(vec![0.0]))]).unwrap();
        assert_eq!(s.get(id).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = one_param(1.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut s, &[(id, Tensor::vector(vec![1.0]))]).unwrap();
        // m̂ = v̂ = 1, update = 0.001 / (1 + 1e−8)
        let want = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - want).abs() < 1e-15);
        assert!((s.get(id).data()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay() {
        let (mut s, id) = one_param(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s, &[(id, Tensor::vector(vec![0.0]))]).unwrap();
        assert!((s.get(id).data()[0] - 0.99999).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let (mut s, id) = one_param(-0.123456789);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.0,
            ..Default::default()
        });
        for g in [3.0, -1.0, 1e6] {
            opt.step(&mut s, &[(id, Tensor::vector(vec![g]))]).unwrap();
        }
        assert_eq!(s.get(id).data()[0].to_bits(), (-0.123456789f64).to_bits());
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut s, id) = one_param(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt
            .step(&mut s, &[(id, Tensor::vector(vec![f64::NAN]))])
            .unwrap_err();
        assert!(err.to_string().contains("`p`"));
    }
}
