use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::{
    assign_with_dist, check_assignment, cost_unchecked, refit_with, Clustering, EmOptions, Init,
    SubspaceSolver, SvdSolver,
};
use crate::error::{MessiError, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Guards against division by zero in the relative-improvement test.
const COST_FLOOR: f64 = 1e-30;

fn check_problem(points: &Matrix, k: usize, j: usize, opts: &EmOptions) -> Result<()> {
    opts.validate()?;
    if opts.q != 2.0 {
        return Err(MessiError::Parameter(format!(
            "EM refit is only available for q = 2 (got q = {})",
            opts.q
        )));
    }
    if k == 0 {
        return Err(MessiError::Parameter("k must be at least 1".into()));
    }
    if j == 0 || j > points.cols() {
        return Err(MessiError::Parameter(format!(
            "j = {j} outside [1, {}]",
            points.cols()
        )));
    }
    if points.rows() < k {
        return Err(MessiError::Parameter(format!(
            "{} rows cannot populate {k} clusters",
            points.rows()
        )));
    }
    Ok(())
}

/// One EM run from the seeded initialization of stream `restart_index`.
pub fn em_run(
    points: &Matrix,
    k: usize,
    j: usize,
    opts: &EmOptions,
    restart_index: u64,
) -> Result<Clustering> {
    check_problem(points, k, j, opts)?;
    let solver = SvdSolver;
    let dims = vec![j; k];
    let mut rng = rng::stream(opts.seed, restart_index);
    let n = points.rows();
    let mut history = Vec::new();
    let start = match opts.init {
        Init::RandomPartition => (0..n).map(|_| rng.random_range(0..k)).collect(),
        Init::SampledRows => {
            let take = j.min(n);
            let seeds = (0..k)
                .map(|_| {
                    let mut rows = sample(&mut rng, n, take).into_vec();
                    rows.sort_unstable();
                    solver.fit(points, &rows, j)
                })
                .collect::<Result<Vec<_>>>()?;
            let (assignment, dist) = assign_with_dist(points, &seeds);
            history.push(dist.iter().sum());
            assignment
        }
    };
    iterate(points, &dims, opts, start, history, &solver)
}

/// EM from a caller-supplied starting assignment.
pub fn em_run_from(
    points: &Matrix,
    k: usize,
    j: usize,
    opts: &EmOptions,
    assignment: Vec<usize>,
) -> Result<Clustering> {
    check_problem(points, k, j, opts)?;
    check_assignment(points, &assignment, k)?;
    iterate(points, &vec![j; k], opts, assignment, Vec::new(), &SvdSolver)
}

/// Alternates refit and assignment until the assignment is a fixpoint, the
/// relative improvement drops below `rel_tol`, or `max_iters` is hit. The
/// subspaces returned are always refitted to the returned assignment.
fn iterate(
    points: &Matrix,
    dims: &[usize],
    opts: &EmOptions,
    mut assignment: Vec<usize>,
    mut history: Vec<f64>,
    solver: &dyn SubspaceSolver,
) -> Result<Clustering> {
    let mut subspaces = refit_with(points, &assignment, dims, solver)?;
    history.push(cost_unchecked(points, &assignment, &subspaces, 2.0));
    let mut prev = *history.last().expect("nonempty");
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let (next, dist) = assign_with_dist(points, &subspaces);
        let cost: f64 = dist.iter().sum();
        history.push(cost);
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
        subspaces = refit_with(points, &assignment, dims, solver)?;
        let refit_cost = cost_unchecked(points, &assignment, &subspaces, 2.0);
        history.push(refit_cost);
        let gain = (prev - refit_cost) / prev.max(COST_FLOOR);
        prev = refit_cost;
        if gain < opts.rel_tol {
            converged = true;
            break;
        }
    }

    let cost = cost_unchecked(points, &assignment, &subspaces, 2.0);
    Ok(Clustering {
        k: dims.len(),
        assignment,
        subspaces,
        cost,
        q: 2.0,
        iterations,
        converged,
        cost_history: history,
    })
}

/// Runs `opts.restarts` independent EM runs (possibly in parallel) and keeps
/// the cheapest, lowest restart index on ties.
pub fn em_multi_restart(points: &Matrix, k: usize, j: usize, opts: &EmOptions) -> Result<Clustering> {
    check_problem(points, k, j, opts)?;
    let runs = (0..opts.restarts as u64)
        .into_par_iter()
        .map(|r| em_run(points, k, j, opts, r))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<Clustering> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}
