//! Compression of embedding-layer weight matrices by (k,j)-projective
//! clustering.
//!
//! The rows of an `n x d` matrix are split among `k` linear subspaces of
//! dimension `j` by EM with restarts ([`cluster`]). Each cluster is then
//! factored against its subspace basis, giving the two-layer representation
//! `A ≈ U · V` with a block-sparse `U` ([`messi`]). The factorization stores
//! `n j + k j d` values, against `j (n + d)` for a single rank-`j` SVD.

pub mod cli;
pub mod cluster;
pub mod error;
pub mod evalgen;
pub mod io;
pub mod linalg;
pub mod messi;
pub mod rng;

pub use cluster::{Clustering, EmOptions, Init};
pub use error::{MessiError, Result};
pub use linalg::{Matrix, Subspace, SvdResult};
pub use messi::{MessiFactorization, SparseAssembly};
