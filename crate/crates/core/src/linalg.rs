//! Dense linear-algebra substrate: matrices, orthonormal subspaces, truncated
//! SVD and point-to-subspace geometry.
//!
//! Everything is computed in `f64`. Singular triplets are obtained from the
//! symmetric eigen-decomposition of the `d x d` Gram matrix `MᵀM`, solved by
//! cyclic Jacobi rotations. Rows are points; subspaces are linear (through the
//! origin), so no centering is ever applied.

use crate::error::{MessiError, Result};

/// Max-abs deviation from the identity tolerated for an orthonormal basis.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MessiError::Parameter(format!(
                "data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MessiError::Input(format!(
                "non-finite entry {} at row {}, column {}",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MessiError::Parameter("rows have unequal lengths".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, ids: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(ids.len(), self.cols, data)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(MessiError::Parameter(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `MᵀM`, the `cols x cols` Gram matrix of the rows.
    pub fn gram(&self) -> Matrix {
        gram_of_rows(self, 0..self.rows)
    }
}

/// Gram matrix `Σ xxᵀ` over the given rows of `points`.
pub(crate) fn gram_of_rows(points: &Matrix, rows: impl IntoIterator<Item = usize>) -> Matrix {
    let d = points.cols();
    let mut g = vec![0.0; d * d];
    for i in rows {
        let x = points.row(i);
        for a in 0..d {
            let xa = x[a];
            if xa == 0.0 {
                continue;
            }
            let g_row = &mut g[a * d..(a + 1) * d];
            for b in a..d {
                g_row[b] += xa * x[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            g[a * d + b] = g[b * d + a];
        }
    }
    Matrix::from_raw(d, d, g)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in nonincreasing order.
    pub values: Vec<f64>,
    /// Unit eigenvectors stored as rows, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigen-solver for a symmetric matrix.
///
/// Output ordering is deterministic: eigenvalues sort nonincreasing (stable on
/// ties) and each eigenvector's largest-magnitude component is made positive.
pub fn symmetric_eigen(sym: &Matrix) -> SymmetricEigen {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "symmetric_eigen needs a square matrix");
    let mut a = sym.data().to_vec();
    let mut v = Matrix::identity(n).into_data();

    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let floor = scale * 1e-300_f64.max(f64::EPSILON * f64::EPSILON * 1e-6);

    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                if apq.abs() <= floor
                    || apq.abs() <= 0.5 * f64::EPSILON * (app.abs() * aqq.abs()).sqrt()
                {
                    if apq != 0.0 {
                        a[p * n + q] = 0.0;
                        a[q * n + p] = 0.0;
                    }
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (out, &col) in order.iter().enumerate() {
        let row = vectors.row_mut(out);
        for (r, slot) in row.iter_mut().enumerate() {
            *slot = v[r * n + col];
        }
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
    }
    SymmetricEigen { values, vectors }
}

/// Orthonormal basis of a linear subspace of `R^d`, stored as `dim` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    /// Wraps a basis after checking that its rows are orthonormal.
    pub fn new(basis: Matrix) -> Result<Self> {
        if basis.rows() > basis.cols() {
            return Err(MessiError::Parameter(format!(
                "subspace dimension {} exceeds ambient dimension {}",
                basis.rows(),
                basis.cols()
            )));
        }
        let dev = orthonormality_defect(&basis);
        if dev > ORTHONORMAL_TOL {
            return Err(MessiError::Parameter(format!(
                "basis rows are not orthonormal (max deviation {dev:e})"
            )));
        }
        Ok(Self { basis })
    }

    pub(crate) fn from_basis_unchecked(basis: Matrix) -> Self {
        Self { basis }
    }

    /// The zero-dimensional subspace `{0}` of `R^ambient`.
    pub fn trivial(ambient: usize) -> Self {
        Self {
            basis: Matrix::zeros(0, ambient),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    #[inline]
    pub fn ambient(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Orthogonal projector `BᵀB` (`d x d`); independent of the basis sign or
    /// rotation, so use it to compare subspaces.
    pub fn projector(&self) -> Matrix {
        self.basis
            .transpose()
            .matmul(&self.basis)
            .expect("basis shapes always conform")
    }

    /// Coordinates `B x` of a point in this basis.
    pub fn coefficients(&self, point: &[f64]) -> Vec<f64> {
        self.basis.row_iter().map(|b| dot(b, point)).collect()
    }

    /// Maps basis coordinates back to the ambient space: `Bᵀ c`.
    pub fn embed(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient()];
        for (b, &c) in self.basis.row_iter().zip(coefficients) {
            for (o, &bi) in out.iter_mut().zip(b) {
                *o += c * bi;
            }
        }
        out
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.ambient() {
            return Err(MessiError::Parameter(format!(
                "point has {} coordinates, subspace lives in R^{}",
                point.len(),
                self.ambient()
            )));
        }
        Ok(())
    }

    /// Squared distance without the dimension check; hot path of EM.
    #[inline]
    pub(crate) fn dist_sq_unchecked(&self, point: &[f64]) -> f64 {
        // the whole space: exactly zero, not rounding noise
        if self.dim() == self.ambient() {
            return 0.0;
        }
        let coeffs = self.coefficients(point);
        let proj = self.embed(&coeffs);
        point
            .iter()
            .zip(&proj)
            .map(|(x, p)| (x - p) * (x - p))
            .sum()
    }
}

/// Max-abs deviation of `B Bᵀ` from the identity.
pub fn orthonormality_defect(basis: &Matrix) -> f64 {
    let j = basis.rows();
    let mut worst: f64 = 0.0;
    for a in 0..j {
        for b in a..j {
            let g = dot(basis.row(a), basis.row(b));
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// Top singular triplets of a matrix.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `n x r` left factor.
    pub left: Matrix,
    /// `r` singular values, nonincreasing.
    pub singular: Vec<f64>,
    /// `r x d` right factor with orthonormal rows.
    pub right: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular.len()
    }

    /// `left · diag(singular) · right`.
    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left.clone();
        for i in 0..scaled.rows() {
            for (v, s) in scaled.row_mut(i).iter_mut().zip(&self.singular) {
                *v *= s;
            }
        }
        scaled
            .matmul(&self.right)
            .expect("factor shapes always conform")
    }
}

/// Rank-`r` truncated SVD.
pub fn truncated_svd(m: &Matrix, r: usize) -> Result<SvdResult> {
    let (n, d) = m.shape();
    if r == 0 || r > n.min(d) {
        return Err(MessiError::Parameter(format!(
            "rank {r} outside [1, {}] for a {n}x{d} matrix",
            n.min(d)
        )));
    }
    ensure_finite(m)?;
    let eig = symmetric_eigen(&m.gram());
    let singular: Vec<f64> = eig.values[..r].iter().map(|l| l.max(0.0).sqrt()).collect();
    let right = Matrix::from_raw(r, d, eig.vectors.data()[..r * d].to_vec());
    let mut left = Matrix::zeros(n, r);
    for i in 0..n {
        let x = m.row(i);
        for (c, s) in singular.iter().enumerate() {
            if *s > 0.0 {
                left.set(i, c, dot(x, right.row(c)) / s);
            }
        }
    }
    Ok(SvdResult {
        left,
        singular,
        right,
    })
}

fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MessiError::Input("matrix contains non-finite entries".into()))
    }
}

/// Best-fit `j`-dimensional linear subspace of the rows (no centering).
pub fn best_fit_subspace(points: &Matrix, j: usize) -> Result<Subspace> {
    fit_subspace_rows(points, 0..points.rows(), j)
}

/// Best-fit subspace of a subset of rows; shared by the EM refit.
///
/// When the rows have rank below `j` the Jacobi eigenbasis of the Gram matrix
/// supplies the missing orthonormal directions, which carry zero energy.
pub(crate) fn fit_subspace_rows(
    points: &Matrix,
    rows: impl IntoIterator<Item = usize>,
    j: usize,
) -> Result<Subspace> {
    let d = points.cols();
    if j > d {
        return Err(MessiError::Parameter(format!(
            "subspace dimension {j} exceeds ambient dimension {d}"
        )));
    }
    if j == 0 {
        return Ok(Subspace::trivial(d));
    }
    let eig = symmetric_eigen(&gram_of_rows(points, rows));
    let basis = Matrix::from_raw(j, d, eig.vectors.data()[..j * d].to_vec());
    Ok(Subspace::from_basis_unchecked(basis))
}

/// Squared Euclidean distance from `point` to `subspace`.
///
/// Computed from the explicit residual `x - BᵀBx`, so it is never negative and
/// keeps full relative precision when the point nearly lies in the subspace.
pub fn dist_sq(point: &[f64], subspace: &Subspace) -> Result<f64> {
    subspace.check_point(point)?;
    Ok(subspace.dist_sq_unchecked(point))
}

/// Orthogonal projection `BᵀBx` of `point` onto `subspace`.
pub fn project(point: &[f64], subspace: &Subspace) -> Result<Vec<f64>> {
    subspace.check_point(point)?;
    Ok(subspace.embed(&subspace.coefficients(point)))
}
