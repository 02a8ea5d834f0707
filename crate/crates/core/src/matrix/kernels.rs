//! Inner loops shared by every representation.
//!
//! `dot` keeps eight independent accumulators so the compiler can lower the
//! body to packed SIMD without reassociating a single running sum.

use crate::scalar::Scalar;

const LANES: usize = 8;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (p, q) in ra.iter().zip(rb) {
        s += *p * *q;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Row-major `y = A x` over a raw `rows x cols` slice.
#[inline]
pub fn gemv<T: Scalar>(data: &[T], cols: usize, x: &[T], y: &mut [T]) {
    if cols == 0 {
        y.iter_mut().for_each(|v| *v = T::ZERO);
        return;
    }
    for (yi, row) in y.iter_mut().zip(data.chunks_exact(cols)) {
        *yi = dot(row, x);
    }
}

/// Row-major `y = Aᵀ g` over a raw `rows x cols` slice (`y` has `cols` entries).
pub fn gemv_t<T: Scalar>(data: &[T], cols: usize, g: &[T], y: &mut [T]) {
    y.iter_mut().for_each(|v| *v = T::ZERO);
    if cols == 0 {
        return;
    }
    for (gi, row) in g.iter().zip(data.chunks_exact(cols)) {
        axpy(*gi, row, y);
    }
}

/// Rank-1 update `A += alpha * u vᵀ` on a raw row-major slice.
pub fn ger<T: Scalar>(data: &mut [T], cols: usize, alpha: T, u: &[T], v: &[T]) {
    if cols == 0 {
        return;
    }
    for (ui, row) in u.iter().zip(data.chunks_exact_mut(cols)) {
        let s = alpha * *ui;
        if s != T::ZERO {
            axpy(s, v, row);
        }
    }
}
