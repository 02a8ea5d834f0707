use crate::error::{shape_err, Error, Result};
use crate::matrix::{kernels, DenseMatrix};
use crate::scalar::Scalar;

/// Hybrid factorized matrix: a dense `j x n` block stacked over the rank-`k`
/// product `B C`, where `B` is `(m - j) x k` and `C` is `k x n`.
///
/// The dense block always occupies output rows `0..j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmfMatrix<T> {
    top: DenseMatrix<T>,
    b: DenseMatrix<T>,
    c: DenseMatrix<T>,
}

/// Multiply-accumulate count of the hybrid product and its ratio to `m n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCount {
    pub ops: u64,
    pub reduction: f64,
}

impl<T: Scalar> HmfMatrix<T> {
    pub fn new(top: DenseMatrix<T>, b: DenseMatrix<T>, c: DenseMatrix<T>) -> Result<Self> {
        let j = top.rows();
        let k = c.rows();
        let n = if j > 0 { top.cols() } else { c.cols() };
        let m = j + b.rows();
        if m == 0 || n == 0 {
            return Err(Error::Structure(format!("hybrid matrix must be non-empty, got {m}x{n}")));
        }
        if j > 0 && top.cols() != n {
            return Err(shape_err("dense block columns", n, top.cols()));
        }
        if k > 0 && c.cols() != n {
            return Err(shape_err("C columns", n, c.cols()));
        }
        if b.rows() > 0 && b.cols() != k {
            return Err(shape_err("B columns", k, b.cols()));
        }
        if j < m && k == 0 {
            return Err(Error::Structure(format!(
                "low-rank block has {} rows but k = 0",
                m - j
            )));
        }
        if k > (m - j).min(n) {
            return Err(Error::Structure(format!(
                "k = {k} exceeds min(m - j, n) = {}",
                (m - j).min(n)
            )));
        }
        // Normalize the empty blocks of the j = m split to 0x0 / 0xn.
        let b = if b.rows() == 0 { DenseMatrix::zeros(0, k) } else { b };
        let c = if k == 0 { DenseMatrix::zeros(0, n) } else { c };
        Ok(Self { top, b, c })
    }

    /// A `j = m` split with no low-rank part.
    pub fn dense_only(top: DenseMatrix<T>) -> Result<Self> {
        let n = top.cols();
        Self::new(top, DenseMatrix::zeros(0, 0), DenseMatrix::zeros(0, n))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.top.rows() + self.b.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.c.cols().max(self.top.cols())
    }

    /// Number of dense rows `j`.
    #[inline]
    pub fn j(&self) -> usize {
        self.top.rows()
    }

    /// Inner rank `k` of the low-rank block.
    #[inline]
    pub fn k(&self) -> usize {
        self.c.rows()
    }

    pub fn top(&self) -> &DenseMatrix<T> {
        &self.top
    }

    pub fn b(&self) -> &DenseMatrix<T> {
        &self.b
    }

    pub fn c(&self) -> &DenseMatrix<T> {
        &self.c
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut DenseMatrix<T>; 3] {
        [&mut self.top, &mut self.b, &mut self.c]
    }

    pub fn param_count(&self) -> usize {
        let (m, n, j, k) = (self.rows(), self.cols(), self.j(), self.k());
        j * n + k * (m - j + n)
    }

    /// Hybrid product: `y[..j] = A' x`, `y[j..] = B (C x)`.
    /// The reconstructed matrix is never formed.
    pub fn matvec_into(&self, x: &[T], y: &mut [T]) -> Result<()> {
        let (m, n, j, k) = (self.rows(), self.cols(), self.j(), self.k());
        if x.len() != n {
            return Err(shape_err("input vector length", n, x.len()));
        }
        if y.len() != m {
            return Err(shape_err("output vector length", m, y.len()));
        }
        let (y_top, y_bot) = y.split_at_mut(j);
        kernels::gemv(self.top.data(), n, x, y_top);
        if j < m {
            let mut t = vec![T::ZERO; k];
            kernels::gemv(self.c.data(), n, x, &mut t);
            kernels::gemv(self.b.data(), k, &t, y_bot);
        }
        Ok(())
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = vec![T::ZERO; self.rows()];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    /// Same product as [`Self::matvec`] with plain loops, tallying every
    /// multiply-accumulate into `macs`.
    pub fn matvec_counted(&self, x: &[T], macs: &mut u64) -> Result<Vec<T>> {
        let (m, n, j, k) = (self.rows(), self.cols(), self.j(), self.k());
        if x.len() != n {
            return Err(shape_err("input vector length", n, x.len()));
        }
        let mut y = vec![T::ZERO; m];
        for (i, yi) in y.iter_mut().enumerate().take(j) {
            for (c, xc) in x.iter().enumerate() {
                *yi += self.top.get(i, c) * *xc;
                *macs += 1;
            }
        }
        let mut t = vec![T::ZERO; k];
        for (p, tp) in t.iter_mut().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                *tp += self.c.get(p, c) * *xc;
                *macs += 1;
            }
        }
        for i in j..m {
            for (p, tp) in t.iter().enumerate() {
                y[i] += self.b.get(i - j, p) * *tp;
                *macs += 1;
            }
        }
        Ok(y)
    }

    /// `[A' ; B C]`
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let n = self.cols();
        let bottom = if self.k() == 0 {
            DenseMatrix::zeros(0, n)
        } else {
            self.b.matmul(&self.c).expect("validated block shapes")
        };
        DenseMatrix::vstack(&self.top, &bottom).expect("validated block shapes")
    }

    pub fn op_count(&self) -> OpCount {
        op_count_hmf(self.rows(), self.cols(), self.j(), self.k())
    }

    pub fn cast<U: Scalar>(&self) -> HmfMatrix<U> {
        HmfMatrix {
            top: self.top.cast(),
            b: self.b.cast(),
            c: self.c.cast(),
        }
    }
}

/// Multiply-accumulates of the hybrid product, `j n + k n + k (m - j)`,
/// and the reduction relative to the `m n` dense product.
pub fn op_count_hmf(m: usize, n: usize, j: usize, k: usize) -> OpCount {
    let ops = (j * n + k * n + k * (m - j)) as u64;
    OpCount {
        ops,
        reduction: (m * n) as f64 / ops as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> HmfMatrix<f64> {
        HmfMatrix::new(
            DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap(),
            DenseMatrix::from_rows(&[[1.0], [2.0]]).unwrap(),
            DenseMatrix::from_rows(&[[3.0, 4.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn small_hybrid_product() {
        let m = example();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0, 14.0]);
        assert_eq!(m.reconstruct().data(), &[1.0, 2.0, 3.0, 4.0, 6.0, 8.0]);
        assert_eq!(m.matvec(&[0.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn full_dense_split_equals_dense_product() {
        let a = DenseMatrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 4.0, 2.0]]).unwrap();
        let h = HmfMatrix::dense_only(a.clone()).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert_eq!(h.matvec(&x).unwrap(), a.matvec(&x).unwrap());
        assert_eq!(h.param_count(), 6);
        assert_eq!(h.k(), 0);
        assert_eq!(h.op_count().reduction, 1.0);
    }

    #[test]
    fn rejects_missing_low_rank_block() {
        let top = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = DenseMatrix::<f64>::zeros(2, 0);
        let c = DenseMatrix::<f64>::zeros(0, 2);
        assert!(matches!(HmfMatrix::new(top, b, c), Err(Error::Structure(_))));
    }

    #[test]
    fn rejects_oversized_k() {
        // m - j = 1 but k = 2
        let top = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(HmfMatrix::new(top, b, c).is_err());
    }

    #[test]
    fn op_count_values() {
        let oc = op_count_hmf(256, 256, 128, 1);
        assert_eq!(oc.ops, 33152);
        assert!((oc.reduction - 65536.0 / 33152.0).abs() < 1e-12);
        let oc = op_count_hmf(512, 256, 100, 4);
        assert_eq!(oc.ops, 28272);
        assert!((oc.reduction - 4.636).abs() < 1e-3);
        assert_eq!(op_count_hmf(64, 32, 64, 0).reduction, 1.0);
    }

    #[test]
    fn counted_product_matches_formula_and_result() {
        let m = example();
        let mut macs = 0;
        let y = m.matvec_counted(&[1.0, 1.0], &mut macs).unwrap();
        assert_eq!(y, vec![3.0, 7.0, 14.0]);
        assert_eq!(macs, m.op_count().ops);
    }
}
