use super::{check_assignment, cost_unchecked, members, refit_with, Clustering, SvdSolver};
use crate::error::{MessiError, Result};
use crate::linalg::{gram_of_rows, symmetric_eigen, Matrix};

/// Splits `total_dims` among `k` clusters, greedily.
///
/// Every cluster starts at one dimension; each further dimension goes to the
/// cluster whose next squared singular value is largest (lowest cluster id on
/// ties). Spectra are nonincreasing, so the marginal gains are too and the
/// greedy split minimizes the summed residual over all splits with this total.
pub fn allocate_dims(
    points: &Matrix,
    assignment: &[usize],
    k: usize,
    total_dims: usize,
) -> Result<Vec<usize>> {
    let d = points.cols();
    if k == 0 {
        return Err(MessiError::Parameter("k must be at least 1".into()));
    }
    if total_dims < k {
        return Err(MessiError::Parameter(format!(
            "total_dims {total_dims} cannot give each of {k} clusters a dimension"
        )));
    }
    if total_dims > k * d {
        return Err(MessiError::Parameter(format!(
            "total_dims {total_dims} exceeds k*d = {}",
            k * d
        )));
    }
    check_assignment(points, assignment, k)?;

    let spectra: Vec<Vec<f64>> = members(assignment, k)
        .into_iter()
        .map(|rows| {
            symmetric_eigen(&gram_of_rows(points, rows))
                .values
                .into_iter()
                .map(|v| v.max(0.0))
                .collect()
        })
        .collect();

    let mut dims = vec![1; k];
    for _ in k..total_dims {
        let mut pick: Option<(usize, f64)> = None;
        for (c, spectrum) in spectra.iter().enumerate() {
            if dims[c] >= d {
                continue;
            }
            let gain = spectrum[dims[c]];
            if pick.is_none_or(|(_, g)| gain > g) {
                pick = Some((c, gain));
            }
        }
        let (c, _) = pick.expect("total_dims <= k*d leaves room");
        dims[c] += 1;
    }
    Ok(dims)
}

/// Refits a clustering's subspaces at per-cluster dimensions, keeping its
/// assignment.
pub fn apply_dims(points: &Matrix, clustering: &Clustering, dims: &[usize]) -> Result<Clustering> {
    if dims.len() != clustering.k {
        return Err(MessiError::Parameter(format!(
            "{} dimensions given for {} clusters",
            dims.len(),
            clustering.k
        )));
    }
    let subspaces = refit_with(points, &clustering.assignment, dims, &SvdSolver)?;
    let cost = cost_unchecked(points, &clustering.assignment, &subspaces, 2.0);
    let mut history = clustering.cost_history.clone();
    history.push(cost);
    Ok(Clustering {
        subspaces,
        cost,
        cost_history: history,
        ..clustering.clone()
    })
}
