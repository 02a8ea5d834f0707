//! Hybrid matrix factorization (HMF) for recurrent-layer weights.
//!
//! A hybrid matrix keeps its first `j` rows dense and expresses the remaining
//! rows as a rank-`k` product, so a batch-1 product costs
//! `j n + k n + k (m - j)` multiply-accumulates while the reachable rank is
//! `j + k`. The crate provides that representation next to low-rank (`U V`),
//! pruned (CSR) and dense baselines, plus:
//!
//! - [`planner`]: structure parameters for a target compression factor,
//! - [`compress`]: random initialization, SVD factorization and magnitude pruning,
//! - [`rnn`]: LSTM/GRU steps over any representation,
//! - [`train`]: manual-gradient training of small recurrent models,
//! - [`bench`]: batch-1 latency measurement,
//! - [`format`]: the CMX1 binary matrix container.

pub mod bench;
pub mod compress;
pub mod error;
pub mod format;
pub mod matrix;
pub mod planner;
pub mod rnn;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{
    numerical_rank, op_count_hmf, CompressedMatrix, CsrMatrix, DenseMatrix, HmfMatrix, LmfMatrix,
    OpCount, Representation,
};
pub use planner::{Scheme, StructurePlan};
pub use rnn::{CellKind, RnnLayerWeights, RnnState};
pub use scalar::Scalar;
