//! Reverse-mode products for every representation.
//!
//! Each `*_grad` takes the forward input `x` and the upstream gradient
//! `g = dL/dy` and returns parameter gradients shaped like the forward
//! representation, plus `dL/dx`.

use crate::error::{shape_err, Error, Result};
use crate::matrix::{kernels, CompressedMatrix, CsrMatrix, DenseMatrix, HmfMatrix, LmfMatrix};
use crate::scalar::Scalar;

/// Parameter gradients (same structure as the forward matrix) and input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub dweights: CompressedMatrix<T>,
    pub dx: Vec<T>,
}

fn check_io<T: Scalar>(m: &CompressedMatrix<T>, x: &[T], g: &[T]) -> Result<()> {
    if x.len() != m.cols() {
        return Err(shape_err("input vector length", m.cols(), x.len()));
    }
    if g.len() != m.rows() {
        return Err(shape_err("output gradient length", m.rows(), g.len()));
    }
    Ok(())
}

/// Adds the gradients of `y = M x` into `acc` (same structure as `m`) and `dx`.
pub fn matvec_grad_accumulate<T: Scalar>(
    m: &CompressedMatrix<T>,
    x: &[T],
    g: &[T],
    acc: &mut CompressedMatrix<T>,
    dx: &mut [T],
) -> Result<()> {
    check_io(m, x, g)?;
    if dx.len() != m.cols() {
        return Err(shape_err("input gradient length", m.cols(), dx.len()));
    }
    if acc.representation() != m.representation() || acc.rows() != m.rows() || acc.cols() != m.cols() {
        return Err(Error::Shape("gradient accumulator does not mirror the weights".into()));
    }
    let n = m.cols();
    let mut blocks = acc.param_blocks_mut();
    match m {
        CompressedMatrix::Dense(a) => {
            kernels::ger(blocks[0], n, T::ONE, g, x);
            add_transpose_product(a.data(), n, g, dx);
        }
        CompressedMatrix::Lmf(l) => {
            let r = l.rank();
            let mut t = vec![T::ZERO; r];
            kernels::gemv(l.v().data(), n, x, &mut t);
            let mut s = vec![T::ZERO; r];
            kernels::gemv_t(l.u().data(), r, g, &mut s);
            let (du, rest) = blocks.split_at_mut(1);
            kernels::ger(du[0], r, T::ONE, g, &t);
            kernels::ger(rest[0], n, T::ONE, &s, x);
            add_transpose_product(l.v().data(), n, &s, dx);
        }
        CompressedMatrix::Hmf(h) => {
            let (j, k) = (h.j(), h.k());
            let (g_top, g_bot) = g.split_at(j);
            kernels::ger(blocks[0], n, T::ONE, g_top, x);
            add_transpose_product(h.top().data(), n, g_top, dx);
            if k > 0 {
                let mut t = vec![T::ZERO; k];
                kernels::gemv(h.c().data(), n, x, &mut t);
                let mut s = vec![T::ZERO; k];
                kernels::gemv_t(h.b().data(), k, g_bot, &mut s);
                kernels::ger(blocks[1], k, T::ONE, g_bot, &t);
                kernels::ger(blocks[2], n, T::ONE, &s, x);
                add_transpose_product(h.c().data(), n, &s, dx);
            }
        }
        CompressedMatrix::Csr(s) => {
            let dv = &mut blocks[0];
            for i in 0..s.rows() {
                for p in s.row_offsets()[i]..s.row_offsets()[i + 1] {
                    let c = s.col_indices()[p];
                    dv[p] += g[i] * x[c];
                    dx[c] += s.values()[p] * g[i];
                }
            }
        }
    }
    Ok(())
}

/// `dx += Aᵀ g` for a raw row-major block.
fn add_transpose_product<T: Scalar>(data: &[T], cols: usize, g: &[T], dx: &mut [T]) {
    if cols == 0 {
        return;
    }
    for (gi, row) in g.iter().zip(data.chunks_exact(cols)) {
        if *gi != T::ZERO {
            kernels::axpy(*gi, row, dx);
        }
    }
}

pub fn matvec_grad<T: Scalar>(m: &CompressedMatrix<T>, x: &[T], g: &[T]) -> Result<GradBundle<T>> {
    let mut dweights = m.zeros_like();
    let mut dx = vec![T::ZERO; m.cols()];
    matvec_grad_accumulate(m, x, g, &mut dweights, &mut dx)?;
    Ok(GradBundle { dweights, dx })
}

/// With `g_top = g[..j]`, `g_bot = g[j..]`:
/// `dA' = g_top xᵀ`, `dB = g_bot (C x)ᵀ`, `dC = (Bᵀ g_bot) xᵀ`,
/// `dx = A'ᵀ g_top + Cᵀ Bᵀ g_bot`.
pub fn hmf_matvec_grad<T: Scalar>(m: &HmfMatrix<T>, x: &[T], g: &[T]) -> Result<GradBundle<T>> {
    matvec_grad(&CompressedMatrix::Hmf(m.clone()), x, g)
}

/// `dU = g (V x)ᵀ`, `dV = (Uᵀ g) xᵀ`, `dx = Vᵀ Uᵀ g`.
pub fn lmf_matvec_grad<T: Scalar>(m: &LmfMatrix<T>, x: &[T], g: &[T]) -> Result<GradBundle<T>> {
    matvec_grad(&CompressedMatrix::Lmf(m.clone()), x, g)
}

/// `dA = g xᵀ`, `dx = Aᵀ g`.
pub fn dense_matvec_grad<T: Scalar>(m: &DenseMatrix<T>, x: &[T], g: &[T]) -> Result<GradBundle<T>> {
    matvec_grad(&CompressedMatrix::Dense(m.clone()), x, g)
}

/// Gradients with respect to the stored values only; the sparsity pattern is fixed.
pub fn csr_matvec_grad<T: Scalar>(m: &CsrMatrix<T>, x: &[T], g: &[T]) -> Result<GradBundle<T>> {
    matvec_grad(&CompressedMatrix::Csr(m.clone()), x, g)
}
