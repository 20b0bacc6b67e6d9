//! (k,j)-projective clustering: rows are partitioned among `k` linear
//! subspaces so that the sum of point-to-subspace distances (raised to `q`) is
//! as small as EM local search can make it.

mod brute;
mod dims;
mod em;

pub use brute::{brute_force, BRUTE_FORCE_LIMIT};
pub use dims::{allocate_dims, apply_dims};
pub use em::{em_multi_restart, em_run, em_run_from};

use rayon::prelude::*;

use crate::error::{MessiError, Result};
use crate::linalg::{fit_subspace_rows, Matrix, Subspace};

/// Rows per rayon task in the per-row loops.
const ROW_CHUNK: usize = 256;

/// How an EM run picks its starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Every row draws an independent uniform cluster id.
    #[default]
    RandomPartition,
    /// Each subspace is fitted to `j` distinct randomly sampled rows.
    SampledRows,
}

impl std::str::FromStr for Init {
    type Err = MessiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-partition" => Ok(Init::RandomPartition),
            "sampled-rows" => Ok(Init::SampledRows),
            other => Err(MessiError::Parameter(format!(
                "unknown init '{other}' (expected random-partition or sampled-rows)"
            ))),
        }
    }
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Init::RandomPartition => "random-partition",
            Init::SampledRows => "sampled-rows",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub init: Init,
    pub q: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iters: 100,
            rel_tol: 1e-6,
            seed: 42,
            init: Init::RandomPartition,
            q: 2.0,
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(MessiError::Parameter("restarts must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(MessiError::Parameter("max_iters must be at least 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(MessiError::Parameter(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        check_q(self.q)
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(MessiError::Parameter(format!(
            "cost exponent q must be positive, got {q}"
        )))
    }
}

/// Result of a projective clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    /// Cluster id of every row, each `< k`.
    pub assignment: Vec<usize>,
    pub subspaces: Vec<Subspace>,
    /// `Σ dist(row, assigned subspace)^q`.
    pub cost: f64,
    pub q: f64,
    /// EM rounds executed (0 for non-iterative constructions).
    pub iterations: usize,
    pub converged: bool,
    /// Cost recorded after every assignment and every refit, in order.
    pub cost_history: Vec<f64>,
}

impl Clustering {
    pub fn dims(&self) -> Vec<usize> {
        self.subspaces.iter().map(Subspace::dim).collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Fits one subspace to a group of rows. The exact squared-distance solver is
/// [`SvdSolver`]; other distance functions plug in here.
pub trait SubspaceSolver: Sync {
    fn fit(&self, points: &Matrix, rows: &[usize], dim: usize) -> Result<Subspace>;
}

/// Truncated-SVD fit: optimal for `q = 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SvdSolver;

impl SubspaceSolver for SvdSolver {
    fn fit(&self, points: &Matrix, rows: &[usize], dim: usize) -> Result<Subspace> {
        fit_subspace_rows(points, rows.iter().copied(), dim)
    }
}

fn check_subspaces(points: &Matrix, subspaces: &[Subspace]) -> Result<()> {
    if subspaces.is_empty() {
        return Err(MessiError::Parameter("need at least one subspace".into()));
    }
    if let Some(s) = subspaces.iter().find(|s| s.ambient() != points.cols()) {
        return Err(MessiError::Parameter(format!(
            "subspace lives in R^{} but points have {} columns",
            s.ambient(),
            points.cols()
        )));
    }
    Ok(())
}

fn check_assignment(points: &Matrix, assignment: &[usize], k: usize) -> Result<()> {
    if assignment.len() != points.rows() {
        return Err(MessiError::Parameter(format!(
            "assignment has {} entries for {} rows",
            assignment.len(),
            points.rows()
        )));
    }
    if let Some((row, &c)) = assignment.iter().enumerate().find(|(_, &c)| c >= k) {
        return Err(MessiError::Parameter(format!(
            "row {row} assigned to cluster {c}, but k = {k}"
        )));
    }
    Ok(())
}

#[inline]
fn powered(dist_sq: f64, q: f64) -> f64 {
    if q == 2.0 {
        dist_sq
    } else {
        dist_sq.powf(0.5 * q)
    }
}

/// Ordered sum of per-row terms, so the total does not depend on how rows were
/// split across threads.
fn row_terms<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    (0..n).into_par_iter().with_min_len(ROW_CHUNK).map(f).collect()
}

/// `Σᵢ dist(rowᵢ, subspaces[assignment[i]])^q`.
pub fn clustering_cost(
    points: &Matrix,
    assignment: &[usize],
    subspaces: &[Subspace],
    q: f64,
) -> Result<f64> {
    check_q(q)?;
    check_subspaces(points, subspaces)?;
    check_assignment(points, assignment, subspaces.len())?;
    Ok(cost_unchecked(points, assignment, subspaces, q))
}

pub(crate) fn cost_unchecked(
    points: &Matrix,
    assignment: &[usize],
    subspaces: &[Subspace],
    q: f64,
) -> f64 {
    row_terms(points.rows(), |i| {
        powered(subspaces[assignment[i]].dist_sq_unchecked(points.row(i)), q)
    })
    .iter()
    .sum()
}

/// E-step: each row goes to a nearest subspace, lowest index on ties.
pub fn assign_step(points: &Matrix, subspaces: &[Subspace]) -> Result<Vec<usize>> {
    check_subspaces(points, subspaces)?;
    Ok(assign_with_dist(points, subspaces).0)
}

/// Assignment plus each row's squared distance to its chosen subspace.
pub(crate) fn assign_with_dist(points: &Matrix, subspaces: &[Subspace]) -> (Vec<usize>, Vec<f64>) {
    let pairs: Vec<(usize, f64)> = (0..points.rows())
        .into_par_iter()
        .with_min_len(ROW_CHUNK)
        .map(|i| {
            let x = points.row(i);
            let mut best = (0, subspaces[0].dist_sq_unchecked(x));
            for (c, s) in subspaces.iter().enumerate().skip(1) {
                let dist = s.dist_sq_unchecked(x);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            best
        })
        .collect();
    pairs.into_iter().unzip()
}

/// M-step: best-fit `j`-subspace per cluster (`q = 2`).
///
/// A cluster with no rows is reseeded from the `j` rows farthest from their
/// own freshly fitted subspaces, so that `k` stays fixed.
pub fn refit_step(points: &Matrix, assignment: &[usize], k: usize, j: usize) -> Result<Vec<Subspace>> {
    refit_with(points, assignment, &vec![j; k], &SvdSolver)
}

/// M-step with per-cluster dimensions and an arbitrary solver.
pub fn refit_with(
    points: &Matrix,
    assignment: &[usize],
    dims: &[usize],
    solver: &dyn SubspaceSolver,
) -> Result<Vec<Subspace>> {
    let k = dims.len();
    if k == 0 {
        return Err(MessiError::Parameter("k must be at least 1".into()));
    }
    check_assignment(points, assignment, k)?;
    if let Some(&j) = dims.iter().find(|&&j| j > points.cols()) {
        return Err(MessiError::Parameter(format!(
            "subspace dimension {j} exceeds ambient dimension {}",
            points.cols()
        )));
    }
    let members = members(assignment, k);
    let mut fitted: Vec<Option<Subspace>> = members
        .par_iter()
        .zip(dims.par_iter())
        .map(|(rows, &j)| {
            if rows.is_empty() {
                Ok(None)
            } else {
                solver.fit(points, rows, j).map(Some)
            }
        })
        .collect::<Result<_>>()?;

    if fitted.iter().any(Option::is_none) {
        let residual = row_terms(points.rows(), |i| {
            fitted[assignment[i]]
                .as_ref()
                .expect("assigned clusters are nonempty")
                .dist_sq_unchecked(points.row(i))
        });
        let mut order: Vec<usize> = (0..points.rows()).collect();
        // farthest first, lower row index on ties
        order.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
        let mut next = 0;
        for c in 0..k {
            if fitted[c].is_some() {
                continue;
            }
            let take = dims[c].max(1).min(points.rows());
            let mut seeds: Vec<usize> = (0..take)
                .map(|t| order[(next + t) % order.len()])
                .collect();
            next = (next + take) % order.len();
            seeds.sort_unstable();
            fitted[c] = Some(solver.fit(points, &seeds, dims[c])?);
        }
    }
    Ok(fitted.into_iter().map(|s| s.expect("all clusters fitted")).collect())
}

pub(crate) fn members(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (row, &c) in assignment.iter().enumerate() {
        groups[c].push(row);
    }
    groups
}
