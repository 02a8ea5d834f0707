//! Producers of compressed weights: seeded random initialization of the
//! factorized forms, SVD-based factorization of existing matrices, and
//! one-shot magnitude pruning.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{CompressedMatrix, CsrMatrix, DenseMatrix, HmfMatrix, LmfMatrix};
use crate::planner::{self, Scheme, StructurePlan};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Every block i.i.d. uniform in `±sqrt(6 / (fan_in + fan_out))` of that block.
    UniformScaled,
    /// Draw a scaled-uniform dense matrix and factorize it with the SVD.
    SvdSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitSpec {
    pub fn uniform(seed: u64) -> Self {
        Self {
            scheme: InitScheme::UniformScaled,
            seed,
        }
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Block filled i.i.d. uniform in `±sqrt(6 / (cols + rows))`.
pub fn uniform_scaled<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix<T> {
    if rows == 0 || cols == 0 {
        return DenseMatrix::zeros(rows, cols);
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| T::from_f64(rng.random_range(-bound..bound)))
}

/// Block filled i.i.d. standard normal.
pub fn gaussian<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        T::from_f64(rng.sample::<f64, _>(StandardNormal))
    })
}

/// Hybrid matrix with every block drawn independently by `fill`.
pub fn random_hmf<T: Scalar, R: Rng>(
    m: usize,
    n: usize,
    j: usize,
    k: usize,
    rng: &mut R,
    mut fill: impl FnMut(usize, usize, &mut R) -> DenseMatrix<T>,
) -> Result<HmfMatrix<T>> {
    if j > m {
        return Err(Error::Structure(format!("j = {j} exceeds m = {m}")));
    }
    let top = fill(j, n, rng);
    let b = fill(m - j, k, rng);
    let c = fill(k, n, rng);
    HmfMatrix::new(top, b, c)
}

pub fn init_hmf<T: Scalar>(plan: &StructurePlan, spec: InitSpec) -> Result<HmfMatrix<T>> {
    let Scheme::Hmf { j, k } = plan.scheme else {
        return Err(Error::Invalid(format!("expected a hybrid plan, got {:?}", plan.scheme)));
    };
    let mut rng = rng_from_seed(spec.seed);
    match spec.scheme {
        InitScheme::UniformScaled => {
            random_hmf(plan.m, plan.n, j, k, &mut rng, |r, c, g| uniform_scaled(r, c, g))
        }
        InitScheme::SvdSplit => {
            let a = uniform_scaled::<T, _>(plan.m, plan.n, &mut rng);
            split_hmf_from_dense(&a, j, k)
        }
    }
}

pub fn init_lmf<T: Scalar>(plan: &StructurePlan, spec: InitSpec) -> Result<LmfMatrix<T>> {
    let Scheme::Lmf { r } = plan.scheme else {
        return Err(Error::Invalid(format!("expected a low-rank plan, got {:?}", plan.scheme)));
    };
    let mut rng = rng_from_seed(spec.seed);
    match spec.scheme {
        InitScheme::UniformScaled => {
            let u = uniform_scaled(plan.m, r, &mut rng);
            let v = uniform_scaled(r, plan.n, &mut rng);
            LmfMatrix::new(u, v)
        }
        InitScheme::SvdSplit => {
            let a = uniform_scaled::<T, _>(plan.m, plan.n, &mut rng);
            factorize_lmf_svd(&a, r)
        }
    }
}

/// Initializes whatever `plan` describes. Sparse plans prune a scaled-uniform
/// dense draw.
pub fn init_from_plan<T: Scalar>(plan: &StructurePlan, spec: InitSpec) -> Result<CompressedMatrix<T>> {
    Ok(match plan.scheme {
        Scheme::Dense => uniform_scaled(plan.m, plan.n, &mut rng_from_seed(spec.seed)).into(),
        Scheme::Hmf { .. } => init_hmf(plan, spec)?.into(),
        Scheme::Lmf { .. } => init_lmf(plan, spec)?.into(),
        Scheme::Csr { .. } => {
            let a = uniform_scaled::<T, _>(plan.m, plan.n, &mut rng_from_seed(spec.seed));
            magnitude_prune(&a, plan.target_cf)?.into()
        }
    })
}

struct TruncatedSvd {
    /// Left singular vectors scaled by their singular values, `m x r`.
    us: DMatrix<f64>,
    /// Right singular vectors as rows, `r x n`.
    vt: DMatrix<f64>,
}

fn truncated_svd<T: Scalar>(a: &DenseMatrix<T>, r: usize) -> Result<TruncatedSvd> {
    let (m, n) = (a.rows(), a.cols());
    let mat = crate::matrix::rank_to_nalgebra(a);
    let svd = nalgebra::linalg::SVD::try_new(mat, true, true, f64::EPSILON, 200 * (m + n))
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD returned no Vᵀ".into()))?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    let order = &order[..r];
    let us = DMatrix::from_fn(m, r, |i, p| u[(i, order[p])] * s[order[p]]);
    let vt = DMatrix::from_fn(r, n, |p, c| vt[(order[p], c)]);
    Ok(TruncatedSvd { us, vt })
}

fn from_nalgebra<T: Scalar>(a: &DMatrix<f64>) -> DenseMatrix<T> {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| T::from_f64(a[(i, j)]))
}

/// Best rank-`r` approximation `U V` with `U = U_r Σ_r` and `V = V_rᵀ`.
pub fn factorize_lmf_svd<T: Scalar>(a: &DenseMatrix<T>, r: usize) -> Result<LmfMatrix<T>> {
    let (m, n) = (a.rows(), a.cols());
    if r == 0 || r > m.min(n) {
        return Err(Error::Invalid(format!("rank {r} outside [1, {}]", m.min(n))));
    }
    let t = truncated_svd(a, r)?;
    LmfMatrix::new(from_nalgebra(&t.us), from_nalgebra(&t.vt))
}

/// Keeps the first `j` rows verbatim and replaces the rest by their best
/// rank-`k` approximation.
pub fn split_hmf_from_dense<T: Scalar>(a: &DenseMatrix<T>, j: usize, k: usize) -> Result<HmfMatrix<T>> {
    let (m, n) = (a.rows(), a.cols());
    if j > m {
        return Err(Error::Invalid(format!("j = {j} exceeds m = {m}")));
    }
    let top = a.row_block(0, j);
    if j == m {
        if k != 0 {
            return Err(Error::Invalid("k must be 0 when j = m".into()));
        }
        return HmfMatrix::dense_only(top);
    }
    if k == 0 || k > (m - j).min(n) {
        return Err(Error::Invalid(format!("k = {k} outside [1, {}]", (m - j).min(n))));
    }
    let bottom = a.row_block(j, m);
    let t = truncated_svd(&bottom, k)?;
    HmfMatrix::new(top, from_nalgebra(&t.us), from_nalgebra(&t.vt))
}

/// Keeps the `floor(m n / cf)` largest-magnitude entries. Equal magnitudes
/// are resolved in row-major order.
pub fn magnitude_prune<T: Scalar>(a: &DenseMatrix<T>, target_cf: f64) -> Result<CsrMatrix<T>> {
    let plan = planner::solve_csr_nnz(a.rows(), a.cols(), target_cf)
        .map_err(|e| Error::Pruning(e.to_string()))?;
    let Scheme::Csr { nnz } = plan.scheme else {
        unreachable!("csr planner returns csr plans")
    };
    let mut order: Vec<usize> = (0..a.data().len()).collect();
    // stable sort keeps row-major order among ties
    order.sort_by(|&x, &y| {
        let (vx, vy) = (a.data()[x].abs(), a.data()[y].abs());
        vy.partial_cmp(&vx).expect("finite entries")
    });
    let mut keep = vec![false; order.len()];
    for &idx in &order[..nnz] {
        keep[idx] = true;
    }
    let cols = a.cols();
    CsrMatrix::from_dense_masked(a, |i, j, _| keep[i * cols + j])
}
