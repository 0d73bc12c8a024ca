//! Dense matrix kernels.
//!
//! Every kernel exists in a sequential and (with the `parallel` feature) a
//! rayon form. Both compute each output row with the same loop order, so the
//! results are bit-identical; the parallel form only splits rows across
//! threads. [`matmul`] picks one based on problem size.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the sequential kernel is used.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
fn row_kernel(a_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    out_row.iter_mut().for_each(|v| *v = 0.0);
    for (p, &a) in a_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += a * bv;
        }
    }
}

/// `a[m×k] · b[k×n]`, sequential.
pub fn matmul_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for (i, out_row) in out.chunks_mut(n).enumerate() {
        row_kernel(&a[i * k..(i + 1) * k], b, n, out_row);
    }
    out
}

/// `a[m×k] · b[k×n]`, rows split across the rayon pool.
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        row_kernel(&a[i * k..(i + 1) * k], b, n, out_row);
    });
    out
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        if m > 1 && m * k * n >= PAR_THRESHOLD {
            return matmul_par(a, b, m, k, n);
        }
    }
    matmul_seq(a, b, m, k, n)
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `aᵀ · c` for `a[m×k]`, `c[m×n]`, giving `k×n`.
pub fn matmul_tn(a: &[f64], c: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul(&transpose(a, m, k), c, k, m, n)
}

/// `c · bᵀ` for `c[m×n]`, `b[k×n]`, giving `m×k`.
pub fn matmul_nt(c: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    matmul(c, &transpose(b, k, n), m, n, k)
}

/// Applies `f` to every index in `0..n` and collects in index order.
///
/// Used for per-sample work (dataset generation, evaluation, hand-model
/// Jacobians). The output order never depends on scheduling.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
