//! Layers, losses and the optimizer used by every trained component.

mod adamw;
mod attention;
mod loss;

pub use adamw::{AdamW, AdamWConfig};
pub use attention::MultiHeadAttention;
pub use loss::{compute_loss, Task};
pub(crate) use loss::class_indices;

use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

const LAYER_NORM_EPS: f64 = 1e-5;

/// `uniform(−1/√fan_in, 1/√fan_in)` tensor drawn from `rng`.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut RngStream,
    ) -> Self {
        let w = init_uniform(&[in_dim, out_dim], in_dim, rng);
        let b = init_uniform(&[out_dim], in_dim, rng);
        Linear {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            in_dim,
            out_dim,
        }
    }

    /// A layer whose weight and bias are given explicitly.
    pub fn from_tensors(store: &mut ParamStore, name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        let (in_dim, out_dim) = weight.dims2()?;
        if bias.shape() != [out_dim] {
            return Err(LealError::shape("Linear::from_tensors", weight.shape(), bias.shape()));
        }
        Ok(Linear {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), bias),
            in_dim,
            out_dim,
        })
    }

    /// Applies the layer to the last axis of `x`, keeping leading axes.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let width = *shape.last().unwrap_or(&0);
        if width != self.in_dim {
            return Err(LealError::shape("Linear", &shape, &[self.in_dim, self.out_dim]));
        }
        let rows = tape.value(x).numel() / width.max(1);
        let flat = if shape.len() == 2 {
            x
        } else {
            tape.reshape(x, &[rows, width])?
        };
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(flat, w)?;
        let y = tape.add_bias(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().unwrap() = self.out_dim;
            tape.reshape(y, &out_shape)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[width])),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[width])),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let s = tape.param(store, self.shift);
        tape.layer_norm(x, g, s, self.eps)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width followed by each layer's output width.
    pub layer_widths: Vec<usize>,
    pub use_layer_norm: bool,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, use_layer_norm: bool) -> Result<Self> {
        if layer_widths.len() < 2 || layer_widths.contains(&0) {
            return Err(LealError::Config(format!(
                "an MLP needs an input width and at least one positive layer width, got {layer_widths:?}"
            )));
        }
        Ok(MlpSpec {
            layer_widths,
            use_layer_norm,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

/// Linear → (LayerNorm) → ReLU per hidden layer, plain linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
    pub norms: Vec<LayerNorm>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut RngStream) -> Self {
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let n = spec.layer_widths.len() - 1;
        for (i, pair) in spec.layer_widths.windows(2).enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), pair[0], pair[1], rng));
            if spec.use_layer_norm && i + 1 < n {
                norms.push(LayerNorm::new(store, &format!("{name}.{i}.norm"), pair[1]));
            }
        }
        Mlp {
            spec,
            layers,
            norms,
        }
    }

    /// Sets every weight of the network to zero, leaving biases untouched.
    pub fn zero_weights(&self, store: &mut ParamStore) {
        for l in &self.layers {
            store.get_mut(l.weight).data_mut().fill(0.0);
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.shape(x).last().copied().unwrap_or(0);
        if width != self.spec.input_width() {
            return Err(LealError::shape(
                "mlp_forward",
                tape.shape(x),
                &[self.spec.input_width()],
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i < last {
                if let Some(norm) = self.norms.get(i) {
                    h = norm.forward(tape, store, h)?;
                }
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.push(l.weight);
            ids.push(l.bias);
        }
        for n in &self.norms {
            ids.push(n.gain);
            ids.push(n.shift);
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::StreamLabel;

    fn rng() -> RngStream {
        RngStream::new(0, StreamLabel::Init)
    }

    #[test]
    fn identity_layer() {
        let mut store = ParamStore::new();
        let l = Linear::from_tensors(
            &mut store,
            "id",
            Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let y = l.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![3, 4, 2], false).unwrap();
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng());
        mlp.zero_weights(&mut store);
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap());
        let y = mlp.forward(&mut t, &store, x).unwrap();
        let bias = store.get(mlp.layers[1].bias).data().to_vec();
        assert_eq!(t.value(y).row(0), &bias[..]);
        assert_eq!(t.value(y).row(1), &bias[..]);
    }

    #[test]
    fn scalar_hand_evaluation() {
        // hidden = relu(2·x + 1) at x = −3 is relu(−5) = 0, so the output is the
        // output-layer bias 0.25 regardless of its weight 4.
        let mut store = ParamStore::new();
        let l0 = Linear::from_tensors(&mut store, "l0", Tensor::from_rows(&[[2.0]]).unwrap(), Tensor::vector(vec![1.0])).unwrap();
        let l1 = Linear::from_tensors(&mut store, "l1", Tensor::from_rows(&[[4.0]]).unwrap(), Tensor::vector(vec![0.25])).unwrap();
        let mlp = Mlp {
            spec: MlpSpec::new(vec![1, 1, 1], false).unwrap(),
            layers: vec![l0, l1],
            norms: vec![],
        };
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[-3.0], [0.5]]).unwrap());
        let y = mlp.forward(&mut t, &store, x).unwrap();
        // at x = 0.5: relu(2) = 2, output 4·2 + 0.25
        assert_eq!(t.value(y).data(), &[0.25, 8.25]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", MlpSpec::new(vec![3, 2], true).unwrap(), &mut rng());
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 4]));
        assert!(mlp.forward(&mut t, &store, x).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[5.0, 5.0, 5.0], [1.0, 2.0, 3.0]]).unwrap());
        let y = ln.forward(&mut t, &store, x).unwrap();
        let out = t.value(y);
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0]);
        // (x − 2)/sqrt(2/3 + eps)
        let z = 1.0 / (2.0f64 / 3.0 + LAYER_NORM_EPS).sqrt();
        for (a, b) in out.row(1).iter().zip([-z, 0.0, z]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((z - 1.2247).abs() < 1e-4);

        store.get_mut(ln.gain).data_mut().fill(0.0);
        store.get_mut(ln.shift).data_mut().fill(7.0);
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let y = ln.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y).data(), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = init_uniform(&[10, 4], 16, &mut rng());
        let b = init_uniform(&[10, 4], 16, &mut rng());
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.25));
    }
}
