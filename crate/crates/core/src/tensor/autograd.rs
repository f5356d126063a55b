//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in creation order. [`Tape::backward`]
//! replays the list once in reverse and adds leaf gradients into persistent
//! per-leaf buffers, so repeated calls accumulate until [`Tape::zero_grad`].
//! Parameters live outside the tape in a [`ParamStore`] and are bound as
//! leaves on first use.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, gemm};
use super::Tensor;
use crate::error::{LealError, Result};
use crate::par::{self, Exec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(LealError::shape("ParamStore::set", cur.shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    MulScalar(Var, f64),
    Relu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Take {
        x: Var,
        idx: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        dims: AttnDims,
        weights: Vec<f64>,
    },
    StudentT {
        h: Var,
        c: Var,
        gamma: f64,
        dist2: Vec<f64>,
    },
    PointwiseMlp {
        s: Var,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
    },
    StraightThrough(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
}

#[derive(Clone, Copy, Debug)]
struct AttnDims {
    batch: usize,
    nq: usize,
    nk: usize,
    d: usize,
    heads: usize,
}

impl AttnDims {
    fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Tensor>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
    exec: Exec,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: HashMap::new(),
            bound: HashMap::new(),
            grad_enabled: true,
            exec: Exec::default(),
        }
    }

    /// A tape that never tracks gradients; parameters bind as constants.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds parameter `id` as a leaf, reusing the same leaf on later calls.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.bound.insert(id, v);
        v
    }

    /// Gradient accumulated on a leaf by previous [`Tape::backward`] calls.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    /// Gradients of every bound parameter, zero-filled when untouched.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .iter()
            .map(|(&id, &v)| {
                let g = self
                    .leaf_grads
                    .get(&v.0)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    // ---- operations -------------------------------------------------------

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(LealError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.exec, m, k, n, self.data(a), false, self.data(b), false, &mut out, 0.0);
        let g = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), g))
    }

    /// Adds a `[w]` bias to every length-`w` row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let w = *self.shape(x).last().unwrap_or(&1);
        if self.shape(b) != [w] {
            return Err(LealError::shape("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.data(b);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(w) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        let g = self.any_grad(&[x, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, b), g))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(LealError::shape(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let g = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies the `i`-th of `s.numel()` equal slices of `x` by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let r = self.value(s).numel();
        let n = self.value(x).numel();
        if r == 0 || !n.is_multiple_of(r) || self.shape(x).first() != self.shape(s).first() {
            return Err(LealError::shape("scale_rows", self.shape(x), self.shape(s)));
        }
        let w = n / r;
        let mut out = self.data(x).to_vec();
        for (row, &sv) in out.chunks_mut(w).zip(self.data(s)) {
            row.iter_mut().for_each(|o| *o *= sv);
        }
        let shape = self.shape(x).to_vec();
        let g = self.any_grad(&[x, s]);
        Ok(self.push(Tensor::new(shape, out)?, Op::ScaleRows(x, s), g))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let g = self.any_grad(&[x]);
        self.push(value, Op::MulScalar(x, c), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let g = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), g)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let rank = self.value(x).rank();
        if axis >= rank {
            return Err(LealError::AxisOutOfRange {
                op: "softmax",
                axis,
                rank,
            });
        }
        let (outer, len, inner) = kernels::axis_split(self.shape(x), axis);
        let mut out = self.data(x).to_vec();
        kernels::softmax_strided(&mut out, outer, len, inner);
        let shape = self.shape(x).to_vec();
        let g = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            g,
        ))
    }

    /// Per-row `(x − mean)/sqrt(var + eps) · gain + shift` over the last axis,
    /// with the population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let w = *self.shape(x).last().unwrap_or(&0);
        if w == 0 || self.shape(gain) != [w] || self.shape(shift) != [w] {
            return Err(LealError::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.data(x);
        let (gs, ss) = (self.data(gain), self.data(shift));
        let rows = xs.len() / w;
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * w..(r + 1) * w];
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..w {
                let h = (row[j] - mean) * inv;
                xhat[r * w + j] = h;
                out[r * w + j] = h * gs[j] + ss[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let g = self.any_grad(&[x, gain, shift]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            },
            g,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.value(x).sum() / n;
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), g)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), g))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let g = self.any_grad(&[x]);
        Ok(self.push(value, Op::Transpose(x), g))
    }

    /// Rows `idx` of `x` (first axis), duplicates allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.shape(x).first().copied().unwrap_or(0);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(LealError::IndexOutOfRange {
                what: "gather_rows",
                index: bad,
                len: n,
            });
        }
        let value = self.value(x).select_rows(idx);
        let g = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            g,
        ))
    }

    /// Flat-index gather: `out[i] = x.flat[idx[i]]`, shaped as `shape`.
    pub fn take(&mut self, x: Var, idx: &[usize], shape: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(LealError::IndexOutOfRange {
                what: "take",
                index: bad,
                len: n,
            });
        }
        let xs = self.data(x);
        let out: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let value = Tensor::new(shape.to_vec(), out)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::Take {
                x,
                idx: idx.to_vec(),
            },
            g,
        ))
    }

    /// Multi-head scaled dot-product attention on already projected inputs.
    ///
    /// `q: [b×nq×d]`, `k, v: [b×nk×d]`; head `h` uses feature columns
    /// `h·d/H .. (h+1)·d/H` with scale `1/sqrt(d/H)`. Returns the output
    /// `[b×nq×d]` and the weights `[b×H×nq×nk]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Tensor)> {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        let (batch, nq, d, nk) = match (qs, ks) {
            ([b, nq, d], [b2, nk, d2]) if b == b2 && d == d2 => (*b, *nq, *d, *nk),
            _ => return Err(LealError::shape("attention", qs, ks)),
        };
        if ks != vs {
            return Err(LealError::shape("attention", ks, vs));
        }
        if heads == 0 || d % heads != 0 {
            return Err(LealError::Config(format!(
                "width {d} is not divisible by {heads} heads"
            )));
        }
        if nk == 0 {
            return Err(LealError::Data("attention over zero keys".into()));
        }
        let dims = AttnDims {
            batch,
            nq,
            nk,
            d,
            heads,
        };
        let mut out = vec![0.0; batch * nq * d];
        let mut weights = vec![0.0; batch * heads * nq * nk];
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        par::for_each_chunk_pair_mut(
            self.exec,
            &mut out,
            nq * d,
            &mut weights,
            heads * nq * nk,
            |b, o, w| attention_forward_one(dims, b, qd, kd, vd, o, w),
        );
        let weights_t = Tensor::new(vec![batch, heads, nq, nk], weights.clone())?;
        let g = self.any_grad(&[q, k, v]);
        let out = self.push(
            Tensor::new(vec![batch, nq, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                dims,
                weights,
            },
            g,
        );
        Ok((out, weights_t))
    }

    /// Student's t soft assignment of rows of `h: [n×d]` to centroids
    /// `c: [C×d]`: `q[j,i] ∝ (1 + ‖h_j − c_i‖²/γ)^(−(γ+1)/2)`, each row
    /// normalized over the centroids.
    pub fn student_t(&mut self, h: Var, c: Var, gamma: f64) -> Result<Var> {
        let (n, d) = self.value(h).dims2()?;
        let (cn, d2) = self.value(c).dims2()?;
        if d != d2 || cn == 0 {
            return Err(LealError::shape("student_t", self.shape(h), self.shape(c)));
        }
        if !(gamma > 0.0) {
            return Err(LealError::Config(format!("gamma must be positive, got {gamma}")));
        }
        let (hs, cs) = (self.data(h), self.data(c));
        let mut dist2 = vec![0.0; n * cn];
        par::for_each_chunk_mut(self.exec, &mut dist2, cn * 256, |ci, chunk| {
            for (r, row) in chunk.chunks_mut(cn).enumerate() {
                let j = ci * 256 + r;
                let hj = &hs[j * d..(j + 1) * d];
                for (i, u) in row.iter_mut().enumerate() {
                    let ci_row = &cs[i * d..(i + 1) * d];
                    *u = hj.iter().zip(ci_row).map(|(a, b)| (a - b) * (a - b)).sum();
                }
            }
        });
        let power = -(gamma + 1.0) / 2.0;
        let mut q: Vec<f64> = dist2
            .iter()
            .map(|&u| power * (u / gamma).ln_1p())
            .collect();
        kernels::softmax_rows(&mut q, cn);
        let g = self.any_grad(&[h, c]);
        Ok(self.push(
            Tensor::new(vec![n, cn], q)?,
            Op::StudentT { h, c, gamma, dist2 },
            g,
        ))
    }

    /// Scalar-to-scalar MLP `b2 + Σ_h w2[h]·relu(w1[h]·s + b1[h])` applied to
    /// every element of `s`. Hidden activations are recomputed in backward.
    pub fn pointwise_mlp(&mut self, s: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
        let hidden = self.value(w1).numel();
        if self.value(b1).numel() != hidden
            || self.value(w2).numel() != hidden
            || self.value(b2).numel() != 1
        {
            return Err(LealError::shape("pointwise_mlp", self.shape(w1), self.shape(w2)));
        }
        let (a, bb, c) = (self.data(w1), self.data(b1), self.data(w2));
        let d = self.data(b2)[0];
        let mut out = self.data(s).to_vec();
        par::for_each_chunk_mut(self.exec, &mut out, 4096, |_, chunk| {
            for x in chunk.iter_mut() {
                let mut y = d;
                for h in 0..hidden {
                    y += c[h] * (a[h] * *x + bb[h]).max(0.0);
                }
                *x = y;
            }
        });
        let shape = self.shape(s).to_vec();
        let g = self.any_grad(&[s, w1, b1, w2, b2]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::PointwiseMlp { s, w1, b1, w2, b2 },
            g,
        ))
    }

    /// Forward value 1 everywhere; backward passes `g / p` to `p`, i.e. the
    /// derivative of `p / stop_gradient(p)`.
    pub fn straight_through(&mut self, p: Var) -> Result<Var> {
        if self.data(p).iter().any(|&v| v <= 0.0) {
            return Err(LealError::NonFinite(
                "straight-through scaling of a non-positive probability".into(),
            ));
        }
        let value = Tensor::ones(self.shape(p));
        let g = self.any_grad(&[p]);
        Ok(self.push(value, Op::StraightThrough(p), g))
    }

    /// Mean softmax cross-entropy of `logits: [b×classes]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, classes) = self.value(logits).dims2()?;
        if targets.len() != b {
            return Err(LealError::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(LealError::IndexOutOfRange {
                what: "class label",
                index: bad,
                len: classes,
            });
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0.0;
        for (row, &t) in self.data(logits).chunks(classes).zip(targets) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        kernels::softmax_rows(&mut probs, classes);
        let g = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / b.max(1) as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            g,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.value(pred).numel() != self.value(target).numel() {
            return Err(LealError::shape("mse", self.shape(pred), self.shape(target)));
        }
        let n = self.value(pred).numel().max(1) as f64;
        let s: f64 = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let g = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target), g))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Adds d(output)/d(leaf) into every gradient-tracking leaf.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).numel() != 1 {
            return Err(LealError::NotScalar(self.shape(output).to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match self.leaf_grads.get_mut(&i) {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        let t = Tensor::new(node.value.shape().to_vec(), g)?;
                        self.leaf_grads.insert(i, t);
                    }
                }
                continue;
            }
            self.backprop_node(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let exec = self.exec;
        // Accumulate into parent `p` only when it tracks gradients.
        let mut acc = |p: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[p.0].needs_grad {
                return;
            }
            let buf = adj[p.0].get_or_insert_with(|| vec![0.0; nodes[p.0].value.numel()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                acc(*a, &mut |da| gemm(exec, m, n, k, g, false, val(*b), true, da, 1.0));
                acc(*b, &mut |db| gemm(exec, k, m, n, val(*a), true, g, false, db, 1.0));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |dx| add_into(dx, g));
                let w = nodes[b.0].value.numel();
                acc(*b, &mut |db| {
                    for row in g.chunks(w) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, x), y) in db.iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                });
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (val(*x), val(*s));
                let w = xv.len() / sv.len();
                acc(*x, &mut |dx| {
                    for ((drow, grow), &sc) in dx.chunks_mut(w).zip(g.chunks(w)).zip(sv) {
                        drow.iter_mut().zip(grow).for_each(|(d, gv)| *d += gv * sc);
                    }
                });
                acc(*s, &mut |ds| {
                    for ((d, grow), xrow) in ds.iter_mut().zip(g.chunks(w)).zip(xv.chunks(w)) {
                        *d += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::MulScalar(x, c) => {
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv));
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, gv), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = nodes[i].value.data();
                let (outer, len, inner) = (*outer, *len, *inner);
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        let base = o * len * inner;
                        for c in 0..inner {
                            let at = |j: usize| base + j * inner + c;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            } => {
                let w = nodes[gain.0].value.numel();
                let gv = val(*gain);
                acc(*gain, &mut |dg| {
                    for (grow, hrow) in g.chunks(w).zip(xhat.chunks(w)) {
                        for j in 0..w {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*shift, &mut |ds| {
                    for grow in g.chunks(w) {
                        add_into(ds, grow);
                    }
                });
                acc(*x, &mut |dx| {
                    for (r, (drow, (grow, hrow))) in dx
                        .chunks_mut(w)
                        .zip(g.chunks(w).zip(xhat.chunks(w)))
                        .enumerate()
                    {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..w {
                            let dh = grow[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= w as f64;
                        mean_dh_h /= w as f64;
                        for j in 0..w {
                            let dh = grow[j] * gv[j];
                            drow[j] += rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = nodes[x.0].value.numel().max(1) as f64;
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Reshape(x) => acc(*x, &mut |dx| add_into(dx, g)),
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                acc(*x, &mut |dx| {
                    for a in 0..r {
                        for b in 0..c {
                            dx[a * c + b] += g[b * r + a];
                        }
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let w = nodes[i].value.numel() / idx.len().max(1);
                acc(*x, &mut |dx| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut dx[src * w..(src + 1) * w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::Take { x, idx } => {
                acc(*x, &mut |dx| {
                    for (gv, &src) in g.iter().zip(idx) {
                        dx[src] += gv;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                dims,
                weights,
            } => {
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let per: Vec<[Vec<f64>; 3]> = par::map_range(exec, dims.batch, |b| {
                    attention_backward_one(*dims, b, qd, kd, vd, weights, g)
                });
                let (nq, nk, d) = (dims.nq, dims.nk, dims.d);
                acc(*q, &mut |dq| {
                    for (b, p) in per.iter().enumerate() {
                        add_into(&mut dq[b * nq * d..(b + 1) * nq * d], &p[0]);
                    }
                });
                acc(*k, &mut |dk| {
                    for (b, p) in per.iter().enumerate() {
                        add_into(&mut dk[b * nk * d..(b + 1) * nk * d], &p[1]);
                    }
                });
                acc(*v, &mut |dv| {
                    for (b, p) in per.iter().enumerate() {
                        add_into(&mut dv[b * nk * d..(b + 1) * nk * d], &p[2]);
                    }
                });
            }
            Op::StudentT { h, c, gamma, dist2 } => {
                let q = nodes[i].value.data();
                let (hv, cv) = (val(*h), val(*c));
                let cn = nodes[c.0].value.shape()[0];
                let d = nodes[c.0].value.shape()[1];
                let power = -(gamma + 1.0) / 2.0;
                // du[j,t]: gradient w.r.t. the squared distance.
                let mut du = vec![0.0; q.len()];
                for ((dr, qr), (gr, ur)) in du
                    .chunks_mut(cn)
                    .zip(q.chunks(cn))
                    .zip(g.chunks(cn).zip(dist2.chunks(cn)))
                {
                    let dot: f64 = gr.iter().zip(qr).map(|(a, b)| a * b).sum();
                    for t in 0..cn {
                        let dl = qr[t] * (gr[t] - dot);
                        dr[t] = dl * power / (gamma + ur[t]);
                    }
                }
                acc(*h, &mut |dh| {
                    par::for_each_chunk_mut(exec, dh, d, |j, dhj| {
                        let hj = &hv[j * d..(j + 1) * d];
                        for t in 0..cn {
                            let coef = 2.0 * du[j * cn + t];
                            let ct = &cv[t * d..(t + 1) * d];
                            for e in 0..d {
                                dhj[e] += coef * (hj[e] - ct[e]);
                            }
                        }
                    });
                });
                acc(*c, &mut |dc| {
                    let rows = hv.len() / d;
                    for j in 0..rows {
                        let hj = &hv[j * d..(j + 1) * d];
                        for t in 0..cn {
                            let coef = -2.0 * du[j * cn + t];
                            let ct = &cv[t * d..(t + 1) * d];
                            let dct = &mut dc[t * d..(t + 1) * d];
                            for e in 0..d {
                                dct[e] += coef * (hj[e] - ct[e]);
                            }
                        }
                    }
                });
            }
            Op::PointwiseMlp { s, w1, b1, w2, b2 } => {
                let (sv, a, bb, c) = (val(*s), val(*w1), val(*b1), val(*w2));
                let hidden = a.len();
                acc(*s, &mut |ds| {
                    for ((d, &x), gv) in ds.iter_mut().zip(sv).zip(g) {
                        let mut slope = 0.0;
                        for h in 0..hidden {
                            if a[h] * x + bb[h] > 0.0 {
                                slope += c[h] * a[h];
                            }
                        }
                        *d += gv * slope;
                    }
                });
                let mut dw1 = vec![0.0; hidden];
                let mut db1 = vec![0.0; hidden];
                let mut dw2 = vec![0.0; hidden];
                for (&x, gv) in sv.iter().zip(g) {
                    for h in 0..hidden {
                        let pre = a[h] * x + bb[h];
                        if pre > 0.0 {
                            dw1[h] += gv * c[h] * x;
                            db1[h] += gv * c[h];
                            dw2[h] += gv * pre;
                        }
                    }
                }
                acc(*w1, &mut |d| add_into(d, &dw1));
                acc(*b1, &mut |d| add_into(d, &db1));
                acc(*w2, &mut |d| add_into(d, &dw2));
                acc(*b2, &mut |d| d[0] += g.iter().sum::<f64>());
            }
            Op::StraightThrough(p) => {
                let pv = val(*p);
                acc(*p, &mut |dp| {
                    for ((d, gv), pi) in dp.iter_mut().zip(g).zip(pv) {
                        *d += gv / pi;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let b = targets.len().max(1);
                let classes = probs.len() / b;
                let scale = g[0] / b as f64;
                acc(*logits, &mut |dl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            dl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                });
            }
            Op::Mse(pred, target) => {
                let (pv, tv) = (val(*pred), val(*target));
                let scale = 2.0 * g[0] / pv.len().max(1) as f64;
                acc(*pred, &mut |dp| {
                    for ((d, p), t) in dp.iter_mut().zip(pv).zip(tv) {
                        *d += scale * (p - t);
                    }
                });
                acc(*target, &mut |dt| {
                    for ((d, p), t) in dt.iter_mut().zip(pv).zip(tv) {
                        *d -= scale * (p - t);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn attention_forward_one(
    dims: AttnDims,
    b: usize,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    out: &mut [f64],
    weights: &mut [f64],
) {
    let AttnDims {
        nq, nk, d, heads, ..
    } = dims;
    let hd = dims.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let qb = &q[b * nq * d..(b + 1) * nq * d];
    let kb = &k[b * nk * d..(b + 1) * nk * d];
    let vb = &v[b * nk * d..(b + 1) * nk * d];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..nq {
            let w = &mut weights[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let qi = &qb[i * d + off..i * d + off + hd];
            for (j, wj) in w.iter_mut().enumerate() {
                let kj = &kb[j * d + off..j * d + off + hd];
                *wj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            kernels::softmax_rows(w, nk);
            let oi = &mut out[i * d + off..i * d + off + hd];
            for (j, &wj) in w.iter().enumerate() {
                let vj = &vb[j * d + off..j * d + off + hd];
                for e in 0..hd {
                    oi[e] += wj * vj[e];
                }
            }
        }
    }
}

/// Gradients `[dq_b, dk_b, dv_b]` for batch element `b`.
fn attention_backward_one(
    dims: AttnDims,
    b: usize,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    weights: &[f64],
    g: &[f64],
) -> [Vec<f64>; 3] {
    let AttnDims {
        nq, nk, d, heads, ..
    } = dims;
    let hd = dims.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let qb = &q[b * nq * d..(b + 1) * nq * d];
    let kb = &k[b * nk * d..(b + 1) * nk * d];
    let vb = &v[b * nk * d..(b + 1) * nk * d];
    let gb = &g[b * nq * d..(b + 1) * nq * d];
    let wb = &weights[b * heads * nq * nk..(b + 1) * heads * nq * nk];
    let mut dq = vec![0.0; nq * d];
    let mut dk = vec![0.0; nk * d];
    let mut dv = vec![0.0; nk * d];
    let mut dw = vec![0.0; nk];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..nq {
            let w = &wb[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let gi = &gb[i * d + off..i * d + off + hd];
            for j in 0..nk {
                let vj = &vb[j * d + off..j * d + off + hd];
                dw[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                let dvj = &mut dv[j * d + off..j * d + off + hd];
                for e in 0..hd {
                    dvj[e] += w[j] * gi[e];
                }
            }
            let dot: f64 = dw.iter().zip(w).map(|(a, b)| a * b).sum();
            let qi = &qb[i * d + off..i * d + off + hd];
            for j in 0..nk {
                let ds = w[j] * (dw[j] - dot) * scale;
                let kj = &kb[j * d + off..j * d + off + hd];
                let dqi = &mut dq[i * d + off..i * d + off + hd];
                for e in 0..hd {
                    dqi[e] += ds * kj[e];
                }
                let dkj = &mut dk[j * d + off..j * d + off + hd];
                for e in 0..hd {
                    dkj[e] += ds * qi[e];
                }
            }
        }
    }
    [dq, dk, dv]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = t.mul(x, x).unwrap();
        let out = t.sum(sq);
        t.backward(out).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_output_gives_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let c = t.constant(Tensor::scalar(3.0));
        t.backward(c).unwrap();
        let g = t.grad(x).map(|g| g.data().to_vec()).unwrap_or(vec![0.0, 0.0]);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_first_component_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 0.0]), true);
        let s = t.softmax(x, 0).unwrap();
        let first = t.take(s, &[0], &[]).unwrap();
        t.backward(first).unwrap();
        let g = t.grad(x).unwrap().data();
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert!((g[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.0]), true);
        let out = t.sum(x);
        t.backward(out).unwrap();
        t.backward(out).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0]);
        t.zero_grad();
        t.backward(out).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(t.backward(x), Err(LealError::NotScalar(_))));
    }

    #[test]
    fn params_bind_once() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0]));
        let mut t = Tape::new();
        let a = t.param(&store, id);
        let b = t.param(&store, id);
        assert_eq!(a, b);
        let s = t.add(a, b).unwrap();
        let out = t.sum(s);
        t.backward(out).unwrap();
        assert_eq!(t.param_grads()[0].1.data(), &[2.0]);
    }

    #[test]
    fn no_grad_tape_tracks_nothing() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0]));
        let mut t = Tape::no_grad();
        let w = t.param(&store, id);
        assert!(!t.requires_grad(w));
    }
}
