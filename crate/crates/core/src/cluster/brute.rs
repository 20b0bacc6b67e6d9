use super::{cost_unchecked, refit_with, Clustering, SvdSolver};
use crate::error::{MessiError, Result};
use crate::linalg::{gram_of_rows, symmetric_eigen, Matrix};

/// Largest `k^n` that [`brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Exact (k,j)-projective clustering by enumerating every partition of the
/// rows into at most `k` blocks (restricted growth strings, so relabelings are
/// visited once). Only feasible for tiny instances.
pub fn brute_force(points: &Matrix, k: usize, j: usize) -> Result<Clustering> {
    let n = points.rows();
    if k == 0 || j > points.cols() {
        return Err(MessiError::Parameter(format!(
            "need k >= 1 and j <= {} (got k = {k}, j = {j})",
            points.cols()
        )));
    }
    if (k as f64).powi(n as i32) > BRUTE_FORCE_LIMIT {
        return Err(MessiError::Size(format!(
            "{k}^{n} assignments exceed the brute-force limit of {BRUTE_FORCE_LIMIT:e}"
        )));
    }
    if n == 0 {
        return Err(MessiError::Parameter("no rows to cluster".into()));
    }

    let mut labels = vec![0usize; n];
    let mut best_labels = labels.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let cost = partition_cost(points, &labels, k, j);
        if cost < best_cost {
            best_cost = cost;
            best_labels.clone_from(&labels);
        }
        if !next_rgs(&mut labels, k) {
            break;
        }
    }

    let subspaces = refit_with(points, &best_labels, &vec![j; k], &SvdSolver)?;
    let cost = cost_unchecked(points, &best_labels, &subspaces, 2.0);
    Ok(Clustering {
        k,
        assignment: best_labels,
        subspaces,
        cost,
        q: 2.0,
        iterations: 0,
        converged: true,
        cost_history: vec![cost],
    })
}

/// Sum over blocks of the Gram-eigenvalue tail beyond `j`.
fn partition_cost(points: &Matrix, labels: &[usize], k: usize, j: usize) -> f64 {
    (0..k)
        .map(|c| {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if rows.is_empty() {
                return 0.0;
            }
            symmetric_eigen(&gram_of_rows(points, rows)).values[j..]
                .iter()
                .map(|v| v.max(0.0))
                .sum()
        })
        .sum()
}

/// Advances a restricted growth string (`labels[0] = 0`, each label at most
/// one above the running max, all `< k`). Returns `false` after the last one.
fn next_rgs(labels: &mut [usize], k: usize) -> bool {
    let n = labels.len();
    for i in (1..n).rev() {
        let prefix_max = labels[..i].iter().copied().max().unwrap_or(0);
        if labels[i] <= prefix_max && labels[i] + 1 < k {
            labels[i] += 1;
            for l in labels[i + 1..].iter_mut() {
                *l = 0;
            }
            return true;
        }
    }
    false
}
