//! Finite-difference checks of every differentiable tape operation at random
//! points.

use leal_core::tensor::{grad_check, RngStream, StreamLabel, Tape, Tensor, Var};
use leal_core::Result;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-6;
const POINTS: u64 = 10;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = RngStream::new(seed, StreamLabel::Synth);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

/// Reduces `out` to a scalar with a fixed random weighting so that outputs
/// whose plain sum is constant (softmax rows) still carry a gradient.
fn project(t: &mut Tape, out: Var) -> Result<Var> {
    let w = random(t.shape(out), 999, -1.0, 1.0);
    let w = t.constant(w);
    let prod = t.mul(out, w)?;
    Ok(t.sum(prod))
}

fn check<F>(name: &str, shape: &[usize], lo: f64, hi: f64, f: F)
where
    F: Fn(&mut Tape, Var, u64) -> Result<Var>,
{
    for point in 0..POINTS {
        let x = random(shape, point, lo, hi);
        let err = grad_check(
            |t, v| {
                let out = f(t, v, point)?;
                project(t, out)
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "{name} at point {point}: relative error {err:e}");
    }
}

fn other(t: &mut Tape, shape: &[usize], seed: u64) -> Var {
    t.constant(random(shape, 1000 + seed, -1.0, 1.0))
}

#[test]
fn matmul_both_sides() {
    check("matmul lhs", &[4, 3], -1.0, 1.0, |t, x, s| {
        let b = other(t, &[3, 5], s);
        t.matmul(x, b)
    });
    check("matmul rhs", &[3, 5], -1.0, 1.0, |t, x, s| {
        let a = other(t, &[4, 3], s);
        t.matmul(a, x)
    });
}

#[test]
fn elementwise_ops() {
    check("add_bias x", &[2, 3, 4], -1.0, 1.0, |t, x, s| {
        let b = other(t, &[4], s);
        t.add_bias(x, b)
    });
    check("add_bias b", &[4], -1.0, 1.0, |t, x, s| {
        let a = other(t, &[2, 3, 4], s);
        t.add_bias(a, x)
    });
    check("sub", &[3, 3], -1.0, 1.0, |t, x, s| {
        let b = other(t, &[3, 3], s);
        let d = t.sub(b, x)?;
        t.add(d, x)?;
        t.sub(x, b)
    });
    check("mul", &[5], -1.0, 1.0, |t, x, s| {
        let b = other(t, &[5], s);
        let y = t.mul(x, b)?;
        t.mul(y, x)
    });
    check("mul_scalar", &[5], -1.0, 1.0, |t, x, _| Ok(t.mul_scalar(x, -2.5)));
    check("relu", &[6, 2], -1.0, 1.0, |t, x, _| Ok(t.relu(x)));
    check("mean", &[6, 2], -1.0, 1.0, |t, x, _| {
        let sq = t.mul(x, x)?;
        Ok(t.mean(sq))
    });
}

#[test]
fn scale_rows_both_inputs() {
    check("scale_rows x", &[3, 2, 2], -1.0, 1.0, |t, x, s| {
        let sc = other(t, &[3], s);
        t.scale_rows(x, sc)
    });
    check("scale_rows s", &[3], -1.0, 1.0, |t, x, s| {
        let a = other(t, &[3, 2, 2], s);
        t.scale_rows(a, x)
    });
}

#[test]
fn softmax_every_axis() {
    for axis in 0..3 {
        check(&format!("softmax axis {axis}"), &[2, 3, 4], -2.0, 2.0, move |t, x, _| {
            t.softmax(x, axis)
        });
    }
}

#[test]
fn layer_norm_all_inputs() {
    check("layer_norm x", &[4, 5], -2.0, 2.0, |t, x, s| {
        let g = other(t, &[5], s);
        let b = other(t, &[5], s + 50);
        t.layer_norm(x, g, b, 1e-5)
    });
    check("layer_norm gain", &[5], -2.0, 2.0, |t, x, s| {
        let a = other(t, &[4, 5], s);
        let b = other(t, &[5], s + 50);
        t.layer_norm(a, x, b, 1e-5)
    });
    check("layer_norm shift", &[5], -2.0, 2.0, |t, x, s| {
        let a = other(t, &[4, 5], s);
        let g = other(t, &[5], s + 50);
        t.layer_norm(a, g, x, 1e-5)
    });
}

#[test]
fn shape_ops() {
    check("reshape", &[2, 6], -1.0, 1.0, |t, x, _| t.reshape(x, &[3, 4]));
    check("transpose", &[2, 5], -1.0, 1.0, |t, x, _| t.transpose(x));
    check("gather_rows", &[4, 3], -1.0, 1.0, |t, x, _| t.gather_rows(x, &[3, 0, 3, 1, 3]));
    check("take", &[4, 3], -1.0, 1.0, |t, x, _| t.take(x, &[11, 0, 5, 5, 2, 11], &[2, 3]));
}

#[test]
fn attention_every_input() {
    let (b, nq, nk, d, heads) = (2, 3, 4, 6, 2);
    check("attention q", &[b, nq, d], -1.0, 1.0, |t, x, s| {
        let k = other(t, &[b, nk, d], s);
        let v = other(t, &[b, nk, d], s + 50);
        Ok(t.attention(x, k, v, heads)?.0)
    });
    check("attention k", &[b, nk, d], -1.0, 1.0, |t, x, s| {
        let q = other(t, &[b, nq, d], s);
        let v = other(t, &[b, nk, d], s + 50);
        Ok(t.attention(q, x, v, heads)?.0)
    });
    check("attention v", &[b, nk, d], -1.0, 1.0, |t, x, s| {
        let q = other(t, &[b, nq, d], s);
        let k = other(t, &[b, nk, d], s + 50);
        Ok(t.attention(q, k, x, heads)?.0)
    });
    check("self attention", &[b, nk, d], -1.0, 1.0, |t, x, _| {
        Ok(t.attention(x, x, x, heads)?.0)
    });
}

#[test]
fn student_t_both_inputs() {
    for gamma in [1.0, 2.5] {
        check("student_t h", &[5, 3], -1.0, 1.0, move |t, x, s| {
            let c = other(t, &[4, 3], s);
            t.student_t(x, c, gamma)
        });
        check("student_t c", &[4, 3], -1.0, 1.0, move |t, x, s| {
            let h = other(t, &[5, 3], s);
            t.student_t(h, x, gamma)
        });
    }
}

#[test]
fn pointwise_mlp_every_input() {
    let h = 16;
    let consts = |t: &mut Tape, s: u64| -> [Var; 5] {
        [
            other(t, &[7], s),
            other(t, &[h], s + 1),
            other(t, &[h], s + 2),
            other(t, &[h], s + 3),
            other(t, &[1], s + 4),
        ]
    };
    let shapes = [vec![7], vec![h], vec![h], vec![h], vec![1]];
    for (slot, shape) in shapes.iter().enumerate() {
        check(&format!("pointwise_mlp input {slot}"), shape, -1.0, 1.0, move |t, x, s| {
            let mut v = consts(t, s);
            v[slot] = x;
            t.pointwise_mlp(v[0], v[1], v[2], v[3], v[4])
        });
    }
}

#[test]
fn losses() {
    check("cross_entropy", &[5, 4], -3.0, 3.0, |t, x, _| {
        let l = t.cross_entropy(x, &[0, 3, 1, 1, 2])?;
        Ok(t.mul_scalar(l, 1.0))
    });
    check("mse pred", &[6], -1.0, 1.0, |t, x, s| {
        let y = other(t, &[6], s);
        t.mse(x, y)
    });
    check("mse target", &[6], -1.0, 1.0, |t, x, s| {
        let p = other(t, &[6], s);
        t.mse(p, x)
    });
}

/// Straight-through has forward value 1, so finite differences see nothing;
/// its gradient must instead match that of `p / p₀` at `p = p₀`.
#[test]
fn straight_through_matches_ratio_derivative() {
    for point in 0..POINTS {
        let p0 = random(&[6], point, 0.05, 1.0);
        let w = random(&[6], 500 + point, -1.0, 1.0);
        let mut t = Tape::new();
        let p = t.leaf(p0.clone(), true);
        let st = t.straight_through(p).unwrap();
        assert!(t.value(st).data().iter().all(|&v| v == 1.0));
        let wv = t.constant(w.clone());
        let y = t.mul(st, wv).unwrap();
        let y = t.sum(y);
        t.backward(y).unwrap();
        let g = t.grad(p).unwrap();

        let ratio = grad_check(
            |t, v| {
                let inv = t.constant(p0.map(|x| 1.0 / x));
                let r = t.mul(v, inv)?;
                let wv = t.constant(w.clone());
                let y = t.mul(r, wv)?;
                Ok(t.sum(y))
            },
            &p0,
            EPS,
        )
        .unwrap();
        assert!(ratio < TOL);
        for i in 0..6 {
            let want = w.data()[i] / p0.data()[i];
            assert!((g.data()[i] - want).abs() / want.abs().max(1.0) < 1e-12);
        }
    }
}
