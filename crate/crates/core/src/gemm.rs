//! Matrix products with a fixed reduction order.
//!
//! Every output element is accumulated over the shared dimension in
//! ascending index order, starting from whatever the output already holds.
//! Callers that zero the output first get exactly the result of a naive
//! `acc += a * b` loop, independent of matrix sizes.

use alloc::vec;

use crate::Real;

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    for (a_row, out_row) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(n)).take(m) {
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ip * bv;
            }
        }
    }
}

/// `out[m×n] += aᵀ · b` where `a` is stored as `[k×m]` and `b` as `[k×n]`.
pub(crate) fn gemm_tn<T: Real>(k: usize, m: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (&a_pi, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            if a_pi == T::zero() {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_pi * bv;
            }
        }
    }
}

/// `out[m×n] += a · bᵀ` where `a` is `[m×k]` and `b` is stored as `[n×k]`.
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(b.len(), n * k);
    let mut bt = vec![T::zero(); k * n];
    transpose(n, k, b, &mut bt);
    gemm_nn(m, k, n, a, &bt, out);
}

/// Writes the `[cols×rows]` transpose of the `[rows×cols]` matrix `src`.
pub(crate) fn transpose<T: Real>(rows: usize, cols: usize, src: &[T], dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
