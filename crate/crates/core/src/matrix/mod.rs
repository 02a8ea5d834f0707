//! Matrix representations and their batch-1 products.

mod csr;
mod dense;
mod hmf;
pub mod kernels;
mod lmf;
mod rank;

pub use csr::CsrMatrix;
pub use dense::DenseMatrix;
pub use hmf::{op_count_hmf, HmfMatrix, OpCount};
pub use lmf::LmfMatrix;
pub use rank::{numerical_rank, singular_values, DEFAULT_RANK_TOL};
pub(crate) use rank::to_nalgebra as rank_to_nalgebra;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which representation a [`CompressedMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Dense,
    Lmf,
    Hmf,
    Csr,
}

impl Representation {
    pub const ALL: [Representation; 4] = [Self::Dense, Self::Lmf, Self::Hmf, Self::Csr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Lmf => "lmf",
            Self::Hmf => "hmf",
            Self::Csr => "csr",
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dense" => Ok(Self::Dense),
            "lmf" => Ok(Self::Lmf),
            "hmf" | "hlf" => Ok(Self::Hmf),
            "csr" | "pruned" | "prune" => Ok(Self::Csr),
            other => Err(Error::Invalid(format!("unknown representation `{other}`"))),
        }
    }
}

/// A weight matrix in any of the supported representations.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressedMatrix<T> {
    Dense(DenseMatrix<T>),
    Lmf(LmfMatrix<T>),
    Hmf(HmfMatrix<T>),
    Csr(CsrMatrix<T>),
}

impl<T: Scalar> From<DenseMatrix<T>> for CompressedMatrix<T> {
    fn from(m: DenseMatrix<T>) -> Self {
        Self::Dense(m)
    }
}

impl<T: Scalar> From<LmfMatrix<T>> for CompressedMatrix<T> {
    fn from(m: LmfMatrix<T>) -> Self {
        Self::Lmf(m)
    }
}

impl<T: Scalar> From<HmfMatrix<T>> for CompressedMatrix<T> {
    fn from(m: HmfMatrix<T>) -> Self {
        Self::Hmf(m)
    }
}

impl<T: Scalar> From<CsrMatrix<T>> for CompressedMatrix<T> {
    fn from(m: CsrMatrix<T>) -> Self {
        Self::Csr(m)
    }
}

impl<T: Scalar> CompressedMatrix<T> {
    pub fn representation(&self) -> Representation {
        match self {
            Self::Dense(_) => Representation::Dense,
            Self::Lmf(_) => Representation::Lmf,
            Self::Hmf(_) => Representation::Hmf,
            Self::Csr(_) => Representation::Csr,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Self::Dense(m) => m.rows(),
            Self::Lmf(m) => m.rows(),
            Self::Hmf(m) => m.rows(),
            Self::Csr(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Self::Dense(m) => m.cols(),
            Self::Lmf(m) => m.cols(),
            Self::Hmf(m) => m.cols(),
            Self::Csr(m) => m.cols(),
        }
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) -> Result<()> {
        match self {
            Self::Dense(m) => m.matvec_into(x, y),
            Self::Lmf(m) => m.matvec_into(x, y),
            Self::Hmf(m) => m.matvec_into(x, y),
            Self::Csr(m) => m.matvec_into(x, y),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = vec![T::ZERO; self.rows()];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    /// Instrumented product that counts multiply-accumulates as it runs.
    pub fn matvec_counted(&self, x: &[T], macs: &mut u64) -> Result<Vec<T>> {
        match self {
            Self::Dense(m) => {
                if x.len() != m.cols() {
                    return Err(crate::error::shape_err("input vector length", m.cols(), x.len()));
                }
                let mut y = vec![T::ZERO; m.rows()];
                for (i, yi) in y.iter_mut().enumerate() {
                    for (c, xc) in x.iter().enumerate() {
                        *yi += m.get(i, c) * *xc;
                        *macs += 1;
                    }
                }
                Ok(y)
            }
            Self::Lmf(m) => m.matvec_counted(x, macs),
            Self::Hmf(m) => m.matvec_counted(x, macs),
            Self::Csr(m) => m.matvec_counted(x, macs),
        }
    }

    /// Analytic multiply-accumulate count of one product.
    pub fn mac_count(&self) -> u64 {
        match self {
            Self::Dense(m) => (m.rows() * m.cols()) as u64,
            Self::Lmf(m) => (m.rank() * (m.rows() + m.cols())) as u64,
            Self::Hmf(m) => m.op_count().ops,
            Self::Csr(m) => m.nnz() as u64,
        }
    }

    pub fn reconstruct(&self) -> DenseMatrix<T> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Lmf(m) => m.reconstruct(),
            Self::Hmf(m) => m.reconstruct(),
            Self::Csr(m) => m.to_dense(),
        }
    }

    /// Stored parameters. Sparse matrices count values only; see
    /// [`CsrMatrix::param_count_with_index`] for the indexed total.
    pub fn param_count(&self) -> usize {
        match self {
            Self::Dense(m) => m.rows() * m.cols(),
            Self::Lmf(m) => m.param_count(),
            Self::Hmf(m) => m.param_count(),
            Self::Csr(m) => m.param_count(),
        }
    }

    /// `m n / param_count`
    pub fn compression_factor(&self) -> f64 {
        (self.rows() * self.cols()) as f64 / self.param_count() as f64
    }

    /// Parameter blocks in serialization order.
    pub fn param_blocks(&self) -> Vec<&[T]> {
        match self {
            Self::Dense(m) => vec![m.data()],
            Self::Lmf(m) => vec![m.u().data(), m.v().data()],
            Self::Hmf(m) => vec![m.top().data(), m.b().data(), m.c().data()],
            Self::Csr(m) => vec![m.values()],
        }
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Self::Dense(m) => vec![m.data_mut()],
            Self::Lmf(m) => m.blocks_mut().into_iter().map(|b| b.data_mut()).collect(),
            Self::Hmf(m) => m.blocks_mut().into_iter().map(|b| b.data_mut()).collect(),
            Self::Csr(m) => vec![m.values_mut()],
        }
    }

    /// Same structure with every parameter set to zero; used as a gradient
    /// accumulator. Sparse matrices keep their sparsity pattern.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for block in z.param_blocks_mut() {
            block.iter_mut().for_each(|v| *v = T::ZERO);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.param_blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> CompressedMatrix<U> {
        match self {
            Self::Dense(m) => CompressedMatrix::Dense(m.cast()),
            Self::Lmf(m) => CompressedMatrix::Lmf(m.cast()),
            Self::Hmf(m) => CompressedMatrix::Hmf(m.cast()),
            Self::Csr(m) => CompressedMatrix::Csr(m.cast()),
        }
    }
}
