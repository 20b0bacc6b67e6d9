//! Reconstruction-error metrics, equal-budget sweeps and planted-subspace data.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::cluster::{em_multi_restart, Clustering, EmOptions};
use crate::error::{MessiError, Result};
use crate::io::ReportRow;
use crate::linalg::{dot, Matrix};
use crate::messi::{build_factorization, equal_budget_j, reconstruct, MessiFactorization};
use crate::rng;

/// `(‖A − Ã‖_F, ‖A − Ã‖_F / ‖A‖_F)`; the relative error of a zero matrix
/// against itself is 0.
pub fn frobenius_error(a: &Matrix, approx: &Matrix) -> Result<(f64, f64)> {
    if a.shape() != approx.shape() {
        return Err(MessiError::Parameter(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            approx.rows(),
            approx.cols()
        )));
    }
    let diff_sq: f64 = a
        .data()
        .iter()
        .zip(approx.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let abs = diff_sq.sqrt();
    let norm = a.frobenius_norm_sq().sqrt();
    let rel = if norm > 0.0 {
        abs / norm
    } else if abs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok((abs, rel))
}

/// Parameters of a planted-subspace data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub k_true: usize,
    pub j_true: usize,
    /// Standard deviation of the isotropic Gaussian noise per coordinate.
    pub noise_sigma: f64,
    /// Coefficients along each planted subspace are uniform in `[-spread, spread]`.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 120,
            d: 3,
            k_true: 3,
            j_true: 1,
            noise_sigma: 0.05,
            spread: 1.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.k_true == 0 || self.j_true == 0 {
            return Err(MessiError::Parameter("n, d, k_true and j_true must be positive".into()));
        }
        if self.j_true > self.d {
            return Err(MessiError::Parameter(format!(
                "j_true = {} exceeds d = {}",
                self.j_true, self.d
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(MessiError::Parameter("noise_sigma must be a finite value >= 0".into()));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(MessiError::Parameter("spread must be positive".into()));
        }
        Ok(())
    }
}

/// Random `j x d` basis with orthonormal rows (Gram-Schmidt on Gaussian rows,
/// applied twice for stability).
fn random_basis<R: Rng>(rng: &mut R, j: usize, d: usize) -> Matrix {
    loop {
        let mut rows: Vec<Vec<f64>> = (0..j)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut ok = true;
        for i in 0..j {
            for _pass in 0..2 {
                for p in 0..i {
                    let c = dot(&rows[i], &rows[p]);
                    let (head, tail) = rows.split_at_mut(i);
                    for (x, b) in tail[0].iter_mut().zip(&head[p]) {
                        *x -= c * b;
                    }
                }
            }
            let norm = dot(&rows[i], &rows[i]).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            return Matrix::from_raw(j, d, rows.concat());
        }
    }
}

/// Samples points on `k_true` random `j_true`-dim subspaces plus noise.
///
/// Row `i` belongs to subspace `i mod k_true`. Draw order from the seed's
/// stream: all bases, then per row its coefficients followed by its noise.
pub fn generate_planted(spec: &SynthSpec) -> Result<(Matrix, Vec<usize>)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, 0);
    let bases: Vec<Matrix> = (0..spec.k_true)
        .map(|_| random_basis(&mut rng, spec.j_true, spec.d))
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| MessiError::Parameter(format!("bad noise sigma: {e}")))?;
    let mut data = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.k_true;
        labels.push(c);
        let mut row = vec![0.0; spec.d];
        for b in bases[c].row_iter() {
            let coeff = rng.random_range(-spec.spread..=spec.spread);
            for (x, bi) in row.iter_mut().zip(b) {
                *x += coeff * bi;
            }
        }
        if spec.noise_sigma > 0.0 {
            for x in row.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
        data.extend(row);
    }
    Ok((Matrix::from_raw(spec.n, spec.d, data), labels))
}

/// Parameter budget of a target compression rate: `⌈(1 − rate) n d⌉`.
pub fn rate_to_budget(rate: f64, n: usize, d: usize) -> Result<u64> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(MessiError::Parameter(format!("compression rate {rate} outside (0, 1)")));
    }
    Ok(((1.0 - rate) * n as f64 * d as f64).ceil() as u64)
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub k_list: Vec<usize>,
    /// Absolute parameter budgets.
    pub budgets: Vec<u64>,
    pub em: EmOptions,
    /// Adds `k = 1` (the plain SVD factorization) when `k_list` lacks it.
    pub include_baseline: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.budgets.is_empty() {
            return Err(MessiError::Parameter("k list and budget list must be nonempty".into()));
        }
        if self.k_list.contains(&0) {
            return Err(MessiError::Parameter("k must be at least 1".into()));
        }
        self.em.validate()
    }
}

/// One evaluated (k, budget) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub budget: u64,
    pub row: ReportRow,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells.iter().map(|c| c.row.clone()).collect()
    }

    pub fn find(&self, k: usize, budget: u64) -> Option<&ReportRow> {
        self.cells
            .iter()
            .find(|c| c.row.k == k && c.budget == budget)
            .map(|c| &c.row)
    }
}

/// Clusters `a` at (k, j) with restarts and factors it.
pub fn compress(a: &Matrix, k: usize, j: usize, em: &EmOptions) -> Result<(MessiFactorization, Clustering)> {
    let clustering = em_multi_restart(a, k, j, em)?;
    let f = build_factorization(a, &clustering)?;
    Ok((f, clustering))
}

/// Runs every (k, budget) cell at the largest uniform `j` the budget allows.
/// Rows are ordered by `(k, budget)` whatever order the cells finish in.
pub fn run_sweep(a: &Matrix, spec: &SweepSpec) -> Result<SweepReport> {
    let cells = run_sweep_detailed(a, spec)?
        .into_iter()
        .map(|(cell, _)| cell)
        .collect();
    Ok(SweepReport { cells })
}

/// A fitted sweep cell: its factorization and clustering.
pub type FittedCell = Option<(MessiFactorization, Clustering)>;

/// [`run_sweep`], also returning the fitted model of every non-skipped cell.
pub fn run_sweep_detailed(a: &Matrix, spec: &SweepSpec) -> Result<Vec<(SweepCell, FittedCell)>> {
    spec.validate()?;
    let (n, d) = a.shape();
    let mut ks = spec.k_list.clone();
    if spec.include_baseline {
        ks.push(1);
    }
    ks.sort_unstable();
    ks.dedup();
    let mut budgets = spec.budgets.clone();
    budgets.sort_unstable();
    budgets.dedup();
    let cells: Vec<(usize, u64)> = ks
        .iter()
        .flat_map(|&k| budgets.iter().map(move |&b| (k, b)))
        .collect();

    cells
        .par_iter()
        .map(|&(k, budget)| {
            let j = match equal_budget_j(n, d, k, budget) {
                Ok(j) if j <= d && k <= n => j,
                _ => {
                    warn!("skipping k = {k}, budget = {budget}: no feasible dimension");
                    let row = ReportRow::skipped(k, budget, spec.em.seed);
                    return Ok((SweepCell { budget, row }, None));
                }
            };
            let (f, clustering) = compress(a, k, j, &spec.em)?;
            let (abs, rel) = frobenius_error(a, &reconstruct(&f))?;
            let row = ReportRow {
                k,
                dims: f.dims(),
                params: f.param_count(),
                compression_rate: f.compression_rate(),
                frobenius_error: abs,
                relative_error: rel,
                iterations: clustering.iterations,
                converged: clustering.converged,
                seed: spec.em.seed,
            };
            Ok((SweepCell { budget, row }, Some((f, clustering))))
        })
        .collect()
}
