use crate::error::{shape_err, Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Compressed sparse row matrix, the storage format of pruned weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Structure(format!("sparse matrix must be non-empty, got {rows}x{cols}")));
        }
        if row_offsets.len() != rows + 1 {
            return Err(Error::Structure(format!(
                "expected {} row offsets, got {}",
                rows + 1,
                row_offsets.len()
            )));
        }
        let nnz = values.len();
        if col_indices.len() != nnz {
            return Err(Error::Structure(format!(
                "{} column indices for {nnz} values",
                col_indices.len()
            )));
        }
        if row_offsets[0] != 0 || row_offsets[rows] != nnz {
            return Err(Error::Structure(format!(
                "row offsets must span [0, {nnz}], got [{}, {}]",
                row_offsets[0], row_offsets[rows]
            )));
        }
        for i in 0..rows {
            let (s, e) = (row_offsets[i], row_offsets[i + 1]);
            if s > e || e > nnz {
                return Err(Error::Structure(format!("row offsets not monotone at row {i}")));
            }
            let idx = &col_indices[s..e];
            if idx.iter().any(|&c| c >= cols) {
                return Err(Error::Structure(format!("column index out of range in row {i}")));
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Structure(format!(
                    "column indices not strictly increasing in row {i}"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structure("non-finite stored value".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Stores every nonzero of `a`.
    pub fn from_dense(a: &DenseMatrix<T>) -> Result<Self> {
        Self::from_dense_masked(a, |_, _, v| v != T::ZERO)
    }

    /// Stores the entries of `a` selected by `keep(row, col, value)`.
    pub fn from_dense_masked(
        a: &DenseMatrix<T>,
        mut keep: impl FnMut(usize, usize, T) -> bool,
    ) -> Result<Self> {
        let mut row_offsets = Vec::with_capacity(a.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..a.rows() {
            for (j, &v) in a.row(i).iter().enumerate() {
                if keep(i, j, v) {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        Self::new(a.rows(), a.cols(), row_offsets, col_indices, values)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Stored values only; the count used for iso-compression planning.
    pub fn param_count(&self) -> usize {
        self.nnz()
    }

    /// Values plus column indices plus row offsets, each counted as one word.
    pub fn param_count_with_index(&self) -> usize {
        self.nnz() + self.col_indices.len() + self.row_offsets.len()
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) -> Result<()> {
        if x.len() != self.cols {
            return Err(shape_err("input vector length", self.cols, x.len()));
        }
        if y.len() != self.rows {
            return Err(shape_err("output vector length", self.rows, y.len()));
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut acc = T::ZERO;
            for (v, &c) in self.values[s..e].iter().zip(&self.col_indices[s..e]) {
                // SAFETY: `new` checks every column index against `cols`,
                // and `x.len() == cols` was checked above.
                acc += *v * unsafe { *x.get_unchecked(c) };
            }
            *yi = acc;
        }
        Ok(())
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = vec![T::ZERO; self.rows];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_counted(&self, x: &[T], macs: &mut u64) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(shape_err("input vector length", self.cols, x.len()));
        }
        let mut y = vec![T::ZERO; self.rows];
        for (i, yi) in y.iter_mut().enumerate() {
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                *yi += self.values[p] * x[self.col_indices[p]];
                *macs += 1;
            }
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                d.set(i, self.col_indices[p], self.values[p]);
            }
        }
        d
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}
