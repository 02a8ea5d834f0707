use crate::error::{shape_err, Error, Result};
use crate::matrix::{kernels, DenseMatrix};
use crate::scalar::Scalar;

/// Low-rank factorized matrix `U V` with `U: m x r`, `V: r x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmfMatrix<T> {
    u: DenseMatrix<T>,
    v: DenseMatrix<T>,
}

impl<T: Scalar> LmfMatrix<T> {
    pub fn new(u: DenseMatrix<T>, v: DenseMatrix<T>) -> Result<Self> {
        let (m, r, n) = (u.rows(), u.cols(), v.cols());
        if v.rows() != r {
            return Err(shape_err("V rows", r, v.rows()));
        }
        if m == 0 || n == 0 {
            return Err(Error::Structure(format!("low-rank matrix must be non-empty, got {m}x{n}")));
        }
        if r == 0 || r > m.min(n) {
            return Err(Error::Structure(format!(
                "rank {r} outside [1, {}]",
                m.min(n)
            )));
        }
        Ok(Self { u, v })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.v.cols()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn u(&self) -> &DenseMatrix<T> {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix<T> {
        &self.v
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut DenseMatrix<T>; 2] {
        [&mut self.u, &mut self.v]
    }

    pub fn param_count(&self) -> usize {
        self.rank() * (self.rows() + self.cols())
    }

    /// `y = U (V x)`, evaluated right to left.
    pub fn matvec_into(&self, x: &[T], y: &mut [T]) -> Result<()> {
        if x.len() != self.cols() {
            return Err(shape_err("input vector length", self.cols(), x.len()));
        }
        if y.len() != self.rows() {
            return Err(shape_err("output vector length", self.rows(), y.len()));
        }
        let mut t = vec![T::ZERO; self.rank()];
        kernels::gemv(self.v.data(), self.cols(), x, &mut t);
        kernels::gemv(self.u.data(), self.rank(), &t, y);
        Ok(())
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = vec![T::ZERO; self.rows()];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_counted(&self, x: &[T], macs: &mut u64) -> Result<Vec<T>> {
        if x.len() != self.cols() {
            return Err(shape_err("input vector length", self.cols(), x.len()));
        }
        let r = self.rank();
        let mut t = vec![T::ZERO; r];
        for (p, tp) in t.iter_mut().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                *tp += self.v.get(p, c) * *xc;
                *macs += 1;
            }
        }
        let mut y = vec![T::ZERO; self.rows()];
        for (i, yi) in y.iter_mut().enumerate() {
            for (p, tp) in t.iter().enumerate() {
                *yi += self.u.get(i, p) * *tp;
                *macs += 1;
            }
        }
        Ok(y)
    }

    pub fn reconstruct(&self) -> DenseMatrix<T> {
        self.u.matmul(&self.v).expect("validated factor shapes")
    }

    pub fn cast<U: Scalar>(&self) -> LmfMatrix<U> {
        LmfMatrix {
            u: self.u.cast(),
            v: self.v.cast(),
        }
    }
}
