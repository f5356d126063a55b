//! Raw slice kernels shared by [`Tensor`](super::Tensor) and the tape.

use crate::par::{self, Exec};

/// Below this many multiply-adds a product is never split across threads.
const PAR_GEMM_WORK: usize = 1 << 18;
const MIN_CHUNK_ROWS: usize = 32;

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `[m×k]` and `op(b)` is `[k×n]`.
///
/// `trans_a` means `a` is stored as `[k×m]`; `trans_b` means `b` is stored as `[n×k]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    exec: Exec,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let chunk = if exec.is_parallel() && par::threads() > 1 && m * k * n >= PAR_GEMM_WORK {
        (m.div_ceil(par::threads() * 2)).max(MIN_CHUNK_ROWS)
    } else {
        m
    };
    gemm_chunked(exec, chunk, m, k, n, a, trans_a, b, trans_b, c, beta);
}

/// [`gemm`] with an explicit row-chunk size for the output.
///
/// Every output element accumulates over `k` in the same order regardless of
/// the chunking, so any chunk size gives bit-identical results.
#[allow(clippy::too_many_arguments)]
pub fn gemm_chunked(
    exec: Exec,
    chunk_rows: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    let chunk_rows = chunk_rows.clamp(1, m);
    par::for_each_chunk_mut(exec, c, chunk_rows * n, |ci, c_chunk| {
        let row0 = ci * chunk_rows;
        let rows = c_chunk.len() / n;
        let a_off = row0 * rsa;
        // SAFETY: the strides describe `a`, `b` and `c_chunk` exactly; the
        // offset view of `a` starts at row `row0` and spans `rows` rows.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a.as_ptr().add(a_off),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c_chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// In-place max-subtracted softmax over the middle index of an
/// `(outer, len, inner)` layout.
pub fn softmax_strided(data: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let at = |j: usize| base + j * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..len {
                mx = mx.max(data[at(j)]);
            }
            let mut total = 0.0;
            for j in 0..len {
                let e = (data[at(j)] - mx).exp();
                data[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                data[at(j)] /= total;
            }
        }
    }
}

/// Softmax over each contiguous row of width `w`.
pub fn softmax_rows(data: &mut [f64], w: usize) {
    softmax_strided(data, data.len() / w.max(1), w, 1);
}
