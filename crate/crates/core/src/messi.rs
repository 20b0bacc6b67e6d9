//! The two-layer factorization built from a clustering.
//!
//! Cluster `i` owns the rows `row_ids`; their coefficients form `U_i`
//! (`n_i x j_i`) against the orthonormal basis `V_i` (`j_i x d`). Stacking the
//! `V_i` and scattering each row's coefficients into its cluster's column block
//! gives the sparse `n x Σj_i` matrix `U` with `U · V_stacked ≈ A`.

use rayon::prelude::*;

use crate::cluster::Clustering;
use crate::error::{MessiError, Result};
use crate::linalg::{orthonormality_defect, Matrix, Subspace, ORTHONORMAL_TOL};

/// One cluster's factor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Original row indices, ascending.
    pub row_ids: Vec<usize>,
    /// `n_i x j_i` coefficients, row `t` belongs to `row_ids[t]`.
    pub u: Matrix,
    /// `j_i x d` orthonormal basis.
    pub v: Matrix,
}

impl Block {
    pub fn dim(&self) -> usize {
        self.v.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessiFactorization {
    n: usize,
    d: usize,
    assignment: Vec<usize>,
    blocks: Vec<Block>,
    /// Position of each row inside its block.
    local: Vec<usize>,
}

impl MessiFactorization {
    /// Assembles a factorization from its parts, checking the structural
    /// invariants: the blocks partition `0..n`, agree with `assignment`, have
    /// consistent shapes and orthonormal bases.
    pub fn from_parts(n: usize, d: usize, assignment: Vec<usize>, blocks: Vec<Block>) -> Result<Self> {
        let k = blocks.len();
        if k == 0 {
            return Err(MessiError::Parameter("factorization needs at least one block".into()));
        }
        if assignment.len() != n {
            return Err(MessiError::Parameter(format!(
                "assignment has {} entries, expected n = {n}",
                assignment.len()
            )));
        }
        let mut local = vec![usize::MAX; n];
        for (c, block) in blocks.iter().enumerate() {
            let j = block.v.rows();
            if block.v.cols() != d {
                return Err(MessiError::Parameter(format!(
                    "block {c}: V has {} columns, expected d = {d}",
                    block.v.cols()
                )));
            }
            if block.u.shape() != (block.row_ids.len(), j) {
                return Err(MessiError::Parameter(format!(
                    "block {c}: U is {}x{}, expected {}x{j}",
                    block.u.rows(),
                    block.u.cols(),
                    block.row_ids.len()
                )));
            }
            let defect = orthonormality_defect(&block.v);
            if defect > ORTHONORMAL_TOL {
                return Err(MessiError::Parameter(format!(
                    "block {c}: V rows are not orthonormal (deviation {defect:e})"
                )));
            }
            if block.row_ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MessiError::Parameter(format!(
                    "block {c}: row ids are not strictly ascending"
                )));
            }
            for (t, &row) in block.row_ids.iter().enumerate() {
                if row >= n || local[row] != usize::MAX {
                    return Err(MessiError::Parameter(format!(
                        "block {c}: row {row} is out of range or listed twice"
                    )));
                }
                if assignment[row] != c {
                    return Err(MessiError::Parameter(format!(
                        "row {row} is stored in block {c} but assigned to {}",
                        assignment[row]
                    )));
                }
                local[row] = t;
            }
        }
        if let Some(row) = local.iter().position(|&t| t == usize::MAX) {
            return Err(MessiError::Parameter(format!(
                "row {row} belongs to no block"
            )));
        }
        Ok(Self {
            n,
            d,
            assignment,
            blocks,
            local,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::dim).collect()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.row_ids.len()).collect()
    }

    /// Stored values: `Σ n_i j_i + Σ j_i d`.
    pub fn param_count(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| ((b.row_ids.len() + self.d) * b.dim()) as u64)
            .sum()
    }

    pub fn compression_rate(&self) -> f64 {
        compression_rate(self.param_count(), self.n, self.d)
    }

    #[inline]
    fn forward_unchecked(&self, row: usize) -> Vec<f64> {
        let block = &self.blocks[self.assignment[row]];
        let coeffs = block.u.row(self.local[row]);
        let mut out = vec![0.0; self.d];
        for (basis_row, &c) in block.v.row_iter().zip(coeffs) {
            for (o, &b) in out.iter_mut().zip(basis_row) {
                *o += c * b;
            }
        }
        out
    }
}

/// Groups rows by cluster and stores each row's coordinates in its assigned
/// subspace. Row `z` reconstructs to its projection onto that subspace.
pub fn build_factorization(a: &Matrix, clustering: &Clustering) -> Result<MessiFactorization> {
    let (n, d) = a.shape();
    if clustering.q != 2.0 {
        return Err(MessiError::Parameter(format!(
            "factorization needs a q = 2 clustering (got q = {})",
            clustering.q
        )));
    }
    if clustering.assignment.len() != n {
        return Err(MessiError::Parameter(format!(
            "clustering covers {} rows, matrix has {n}",
            clustering.assignment.len()
        )));
    }
    if clustering.subspaces.len() != clustering.k {
        return Err(MessiError::Parameter("clustering has the wrong number of subspaces".into()));
    }
    if let Some(s) = clustering.subspaces.iter().find(|s| s.ambient() != d) {
        return Err(MessiError::Parameter(format!(
            "subspace lives in R^{}, matrix has {d} columns",
            s.ambient()
        )));
    }
    if let Some(&c) = clustering.assignment.iter().find(|&&c| c >= clustering.k) {
        return Err(MessiError::Parameter(format!("cluster id {c} >= k")));
    }
    let mut row_ids = vec![Vec::new(); clustering.k];
    for (row, &c) in clustering.assignment.iter().enumerate() {
        row_ids[c].push(row);
    }
    let blocks = row_ids
        .into_iter()
        .zip(&clustering.subspaces)
        .map(|(ids, subspace)| block_for(a, ids, subspace))
        .collect();
    MessiFactorization::from_parts(n, d, clustering.assignment.clone(), blocks)
}

fn block_for(a: &Matrix, row_ids: Vec<usize>, subspace: &Subspace) -> Block {
    let j = subspace.dim();
    let mut u = Vec::with_capacity(row_ids.len() * j);
    for &row in &row_ids {
        u.extend(subspace.coefficients(a.row(row)));
    }
    Block {
        u: Matrix::from_raw(row_ids.len(), j, u),
        v: subspace.basis().clone(),
        row_ids,
    }
}

/// Output row `row_index` of the compressed layer for a one-hot input.
pub fn forward(f: &MessiFactorization, row_index: usize) -> Result<Vec<f64>> {
    if row_index >= f.n {
        return Err(MessiError::Parameter(format!(
            "row index {row_index} out of range for n = {}",
            f.n
        )));
    }
    Ok(f.forward_unchecked(row_index))
}

/// Materializes the approximation `Ã`.
pub fn reconstruct(f: &MessiFactorization) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..f.n)
        .into_par_iter()
        .with_min_len(256)
        .map(|z| f.forward_unchecked(z))
        .collect();
    Matrix::from_raw(f.n, f.d, rows.concat())
}

/// Block-sparse `U` (CSR-like: one contiguous run of values per row) and the
/// stacked `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAssembly {
    n: usize,
    /// Column offset of each cluster's block (prefix sums of dims).
    pub offsets: Vec<usize>,
    /// First column of row `z`'s nonzero run.
    row_start: Vec<usize>,
    /// `values[row_ptr[z]..row_ptr[z+1]]` are row `z`'s stored entries.
    row_ptr: Vec<usize>,
    values: Vec<f64>,
    /// `(Σ j_i) x d` stacked bases.
    pub v_stacked: Matrix,
}

impl SparseAssembly {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.v_stacked.rows()
    }

    /// Structural nonzeros of `U`.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(first column, values)` of row `z`; every other column is zero.
    pub fn row_entries(&self, z: usize) -> (usize, &[f64]) {
        (self.row_start[z], &self.values[self.row_ptr[z]..self.row_ptr[z + 1]])
    }

    /// Dense copy of `U`.
    pub fn u_dense(&self) -> Matrix {
        let mut u = Matrix::zeros(self.n, self.cols());
        for z in 0..self.n {
            let (start, vals) = self.row_entries(z);
            u.row_mut(z)[start..start + vals.len()].copy_from_slice(vals);
        }
        u
    }

    /// `U · V_stacked`.
    pub fn product(&self) -> Matrix {
        let d = self.v_stacked.cols();
        let mut out = Matrix::zeros(self.n, d);
        for z in 0..self.n {
            let (start, vals) = self.row_entries(z);
            let row = out.row_mut(z);
            for (t, &c) in vals.iter().enumerate() {
                for (o, &b) in row.iter_mut().zip(self.v_stacked.row(start + t)) {
                    *o += c * b;
                }
            }
        }
        out
    }
}

pub fn assemble_sparse(f: &MessiFactorization) -> SparseAssembly {
    let dims = f.dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut total = 0;
    for &j in &dims {
        offsets.push(total);
        total += j;
    }
    let mut v_data = Vec::with_capacity(total * f.d);
    for block in &f.blocks {
        v_data.extend_from_slice(block.v.data());
    }
    let mut row_start = Vec::with_capacity(f.n);
    let mut row_ptr = Vec::with_capacity(f.n + 1);
    let mut values = Vec::new();
    row_ptr.push(0);
    for z in 0..f.n {
        let c = f.assignment[z];
        row_start.push(offsets[c]);
        values.extend_from_slice(f.blocks[c].u.row(f.local[z]));
        row_ptr.push(values.len());
    }
    SparseAssembly {
        n: f.n,
        offsets,
        row_start,
        row_ptr,
        values,
        v_stacked: Matrix::from_raw(total, f.d, v_data),
    }
}

/// Parameter count `n j + k j d` of a compressed layer with uniform dims.
///
/// `dims` must hold `k` equal entries; with unequal dims the count depends on
/// the cluster sizes, see [`MessiFactorization::param_count`].
pub fn param_count(n: usize, d: usize, k: usize, dims: &[usize]) -> Result<u64> {
    if dims.len() != k {
        return Err(MessiError::Parameter(format!(
            "{} dims given for k = {k}",
            dims.len()
        )));
    }
    let Some(&j) = dims.first() else {
        return Ok(0);
    };
    if dims.iter().any(|&x| x != j) {
        return Err(MessiError::Parameter(
            "non-uniform dims need cluster sizes; use MessiFactorization::param_count".into(),
        ));
    }
    Ok((n * j) as u64 + (d * dims.iter().sum::<usize>()) as u64)
}

/// Parameters `j (n + d)` of the rank-`j` SVD factorization.
pub fn svd_baseline_params(n: usize, d: usize, j: usize) -> u64 {
    (j as u64) * (n as u64 + d as u64)
}

/// Largest uniform `j` whose `n j + k j d` fits into `budget`.
pub fn equal_budget_j(n: usize, d: usize, k: usize, budget: u64) -> Result<usize> {
    let per_dim = n as u64 + (k as u64) * (d as u64);
    if k == 0 || budget < per_dim {
        return Err(MessiError::Parameter(format!(
            "budget {budget} cannot hold j = 1 at n = {n}, d = {d}, k = {k} (needs {per_dim})"
        )));
    }
    Ok((budget / per_dim) as usize)
}

/// `1 - params / (n d)`.
pub fn compression_rate(params: u64, n: usize, d: usize) -> f64 {
    1.0 - params as f64 / (n as f64 * d as f64)
}

/// Squared residual of every block against the rows of `a` it covers.
pub fn block_residuals(a: &Matrix, f: &MessiFactorization) -> Result<Vec<f64>> {
    if a.shape() != (f.n, f.d) {
        return Err(MessiError::Parameter(format!(
            "matrix is {}x{}, factorization is {}x{}",
            a.rows(),
            a.cols(),
            f.n,
            f.d
        )));
    }
    Ok(f.blocks
        .iter()
        .map(|b| {
            b.row_ids
                .iter()
                .map(|&row| {
                    let approx = f.forward_unchecked(row);
                    let x = a.row(row);
                    x.iter().zip(&approx).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
                })
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{em_run_from, EmOptions};
    use crate::linalg::{project, truncated_svd};

    fn planted() -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for t in 1..=4 {
            let s = t as f64;
            rows.push(vec![s, s, 0.0, 0.0]);
            labels.push(0);
            rows.push(vec![0.0, 0.0, s, -2.0 * s]);
            labels.push(1);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn golden_param_counts() {
        assert_eq!(param_count(20, 10, 2, &[3, 3]).unwrap(), 120);
        assert_eq!(param_count(120, 3, 3, &[1, 1, 1]).unwrap(), 129);
        assert_eq!(param_count(120, 3, 1, &[2]).unwrap(), 246);
        assert_eq!(svd_baseline_params(20, 10, 4), 120);
        assert_eq!(svd_baseline_params(20, 10, 0), 0);
        assert_eq!(svd_baseline_params(30522, 768, 384), 12_015_360);
        assert!(param_count(20, 10, 2, &[3]).is_err());
        assert!(param_count(20, 10, 2, &[3, 2]).is_err());
    }

    #[test]
    fn budget_inversion() {
        assert_eq!(equal_budget_j(20, 10, 2, 120).unwrap(), 3);
        assert_eq!(equal_budget_j(20, 10, 1, 120).unwrap(), 4);
        assert!(equal_budget_j(20, 10, 2, 39).is_err());
        assert!((compression_rate(60, 10, 10) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn planted_rows_reconstruct_exactly() {
        let (a, labels) = planted();
        let c = em_run_from(&a, 2, 1, &EmOptions::default(), labels).unwrap();
        let f = build_factorization(&a, &c).unwrap();
        assert_eq!(f.cluster_sizes(), vec![4, 4]);
        let rec = reconstruct(&f);
        assert!(rec.max_abs_diff(&a) < 1e-12);
        for z in 0..a.rows() {
            let row = forward(&f, z).unwrap();
            let err: f64 = row.iter().zip(a.row(z)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
        assert!(forward(&f, a.rows()).is_err());
    }

    #[test]
    fn rows_reconstruct_to_projections() {
        let (mut a, labels) = planted();
        a.set(0, 2, 0.3);
        a.set(5, 0, -0.7);
        let c = em_run_from(&a, 2, 1, &EmOptions::default(), labels).unwrap();
        let f = build_factorization(&a, &c).unwrap();
        for z in 0..a.rows() {
            let expected = project(a.row(z), &c.subspaces[c.assignment[z]]).unwrap();
            let got = forward(&f, z).unwrap();
            for (p, q) in got.iter().zip(&expected) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_cluster_matches_svd() {
        let (mut a, _) = planted();
        a.set(1, 0, 0.25);
        let c = em_run_from(&a, 1, 2, &EmOptions::default(), vec![0; a.rows()]).unwrap();
        let f = build_factorization(&a, &c).unwrap();
        let svd = truncated_svd(&a, 2).unwrap().reconstruct();
        let rec = reconstruct(&f);
        let diff: f64 = rec.data().iter().zip(svd.data()).map(|(p, q)| (p - q) * (p - q)).sum();
        assert!(diff.sqrt() <= 1e-9 * a.frobenius_norm_sq().sqrt());
        assert_eq!(f.param_count(), svd_baseline_params(a.rows(), a.cols(), 2));

        let s = assemble_sparse(&f);
        assert_eq!(s.offsets, vec![0]);
        assert_eq!(s.nnz(), a.rows() * 2);
        assert_eq!(s.u_dense().shape(), (a.rows(), 2));
    }

    #[test]
    fn sparse_pattern_follows_assignment() {
        // 7 rows, rows 3 and 5 (0-based) in the first cluster
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| {
                let s = (i + 1) as f64;
                if i == 3 || i == 5 {
                    vec![s, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
                } else {
                    vec![0.0, s, s, 0.0, 0.0, 0.0, 0.0]
                }
            })
            .collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..7).map(|i| usize::from(!(i == 3 || i == 5))).collect();
        let c = em_run_from(&a, 2, 2, &EmOptions::default(), labels.clone()).unwrap();
        let f = build_factorization(&a, &c).unwrap();
        let s = assemble_sparse(&f);
        assert_eq!(s.offsets, vec![0, 2]);
        assert_eq!(s.cols(), 4);
        for (z, &label) in labels.iter().enumerate() {
            let (start, vals) = s.row_entries(z);
            assert_eq!(vals.len(), 2);
            assert_eq!(start, if label == 0 { 0 } else { 2 });
        }
        assert!(s.product().max_abs_diff(&reconstruct(&f)) < 1e-12);
    }

    #[test]
    fn from_parts_rejects_broken_partitions() {
        let v = Matrix::identity(2);
        let block = |ids: Vec<usize>| Block {
            u: Matrix::zeros(ids.len(), 2),
            v: v.clone(),
            row_ids: ids,
        };
        assert!(MessiFactorization::from_parts(3, 2, vec![0, 0, 0], vec![block(vec![0, 1, 2])]).is_ok());
        assert!(MessiFactorization::from_parts(3, 2, vec![0, 0, 0], vec![block(vec![0, 1])]).is_err());
        assert!(MessiFactorization::from_parts(3, 2, vec![0, 0, 0], vec![block(vec![0, 1, 1])]).is_err());
        assert!(MessiFactorization::from_parts(
            3,
            2,
            vec![0, 1, 0],
            vec![block(vec![0, 2]), block(vec![1])]
        )
        .is_ok());
        assert!(MessiFactorization::from_parts(
            3,
            2,
            vec![0, 0, 0],
            vec![block(vec![0, 2]), block(vec![1])]
        )
        .is_err());
        let skew = Block {
            u: Matrix::zeros(3, 2),
            v: Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
            row_ids: vec![0, 1, 2],
        };
        assert!(MessiFactorization::from_parts(3, 2, vec![0; 3], vec![skew]).is_err());
    }

    #[test]
    fn empty_cluster_keeps_structural_params() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let blocks = vec![
            Block {
                row_ids: vec![0, 1],
                u: Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
                v: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            },
            Block {
                row_ids: vec![],
                u: Matrix::zeros(0, 1),
                v: Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap(),
            },
        ];
        let f = MessiFactorization::from_parts(2, 2, vec![0, 0], blocks).unwrap();
        assert_eq!(f.param_count(), 2 + 2 * 2);
        assert_eq!(reconstruct(&f), a);
        assert_eq!(block_residuals(&a, &f).unwrap(), vec![0.0, 0.0]);
    }
}
