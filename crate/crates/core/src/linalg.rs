//! Dense linear-algebra kernel: reduced SVD, minimum-norm least squares,
//! ridge solves and symmetric eigendecomposition.
//!
//! Decompositions are delegated to `nalgebra`. Wide and tall inputs are first
//! reduced by a thin QR factorization so the SVD itself only ever runs on a
//! `min(n, p)` square matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Column-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    /// Builds a matrix from column-major `values`.
    pub fn from_column_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at row {}, column {}",
                pos % rows.max(1),
                pos / rows.max(1)
            )));
        }
        Ok(DenseMatrix(DMatrix::from_vec(rows, cols, values)))
    }

    /// Builds a matrix from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged rows"));
        }
        let mut values = Vec::with_capacity(n * p);
        for j in 0..p {
            values.extend(rows.iter().map(|r| r[j]));
        }
        Self::from_column_major(n, p, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    /// Column-major view of all entries.
    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.rows();
        &self.0.as_slice()[j * n..(j + 1) * n]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        DenseMatrix(self.0.select_rows(idx))
    }

    /// Leading `count` columns.
    pub fn leading_columns(&self, count: usize) -> Self {
        DenseMatrix(self.0.columns(0, count).into_owned())
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        DenseMatrix(self.0.select_columns(idx))
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hstack(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows() != other.rows() {
            return Err(Error::invalid(format!(
                "cannot stack {} rows beside {} rows",
                self.rows(),
                other.rows()
            )));
        }
        let mut values = Vec::with_capacity(self.0.len() + other.0.len());
        values.extend_from_slice(self.values());
        values.extend_from_slice(other.values());
        Ok(DenseMatrix(DMatrix::from_vec(
            self.rows(),
            self.cols() + other.cols(),
            values,
        )))
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols() != other.cols() {
            return Err(Error::invalid(format!(
                "cannot stack {} columns over {} columns",
                self.cols(),
                other.cols()
            )));
        }
        let n = self.rows() + other.rows();
        let m = DMatrix::from_fn(n, self.cols(), |i, j| {
            if i < self.rows() {
                self.0[(i, j)]
            } else {
                other.0[(i - self.rows(), j)]
            }
        });
        Ok(DenseMatrix(m))
    }

    pub fn transpose(&self) -> Self {
        DenseMatrix(self.0.transpose())
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols(), v.len(), "matrix-vector shape mismatch");
        let mut out = vec![0.0; self.rows()];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(self.column(j)) {
                *o += x * vj;
            }
        }
        out
    }

    /// `self' * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows(), v.len(), "matrix-vector shape mismatch");
        (0..self.cols())
            .map(|j| dot(self.column(j), v))
            .collect()
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }
}

impl From<DMatrix<f64>> for DenseMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        DenseMatrix(m)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Relative cutoff below which singular values count as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankTolerance(f64);

impl RankTolerance {
    pub const DEFAULT_CUTOFF: f64 = 1e-10;

    pub fn new(relative_cutoff: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&relative_cutoff) {
            return Err(Error::invalid(format!(
                "rank tolerance must lie in [0, 1), got {relative_cutoff}"
            )));
        }
        Ok(RankTolerance(relative_cutoff))
    }

    pub fn relative_cutoff(self) -> f64 {
        self.0
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        RankTolerance(Self::DEFAULT_CUTOFF)
    }
}

/// Rank-truncated SVD `X = U S V'`.
#[derive(Debug, Clone)]
pub struct ReducedSvd {
    /// n x r, orthonormal columns.
    pub left: DMatrix<f64>,
    /// r positive values, descending.
    pub singular_values: Vec<f64>,
    /// p x r, orthonormal columns.
    pub right: DMatrix<f64>,
}

impl ReducedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `V S^-1 U' y`.
    pub fn pinv_apply(&self, y: &[f64]) -> Vec<f64> {
        let uty = self.left.tr_mul(&DVector::from_column_slice(y));
        let scaled = DVector::from_iterator(
            self.rank(),
            uty.iter().zip(&self.singular_values).map(|(a, s)| a / s),
        );
        (&self.right * scaled).as_slice().to_vec()
    }

    /// Reassembles `U S V'`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.left.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        DenseMatrix(us * self.right.transpose())
    }
}

/// Thin QR-reduced SVD keeping singular values above `tol * sigma_max`.
pub fn reduced_svd(x: &DenseMatrix, tol: RankTolerance) -> Result<ReducedSvd> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 || p == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    if !x.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    // Wide: X' = Q R, so X = R' Q' and an SVD of the n x n matrix R' suffices.
    // Tall: X = Q R, SVD of the p x p R.
    let (u, s, v) = if p >= n {
        let qr = x.0.transpose().qr();
        let q = qr.q();
        let small = qr.r().transpose();
        let svd = small
            .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::numerical("SVD failed to converge"))?;
        let w = svd.v_t.expect("requested V").transpose();
        (svd.u.expect("requested U"), svd.singular_values, q * w)
    } else {
        let qr = x.0.clone().qr();
        let q = qr.q();
        let small = qr.r();
        let svd = small
            .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::numerical("SVD failed to converge"))?;
        let w = svd.v_t.expect("requested V").transpose();
        (q * svd.u.expect("requested U"), svd.singular_values, w)
    };

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let smax = s[order[0]];
    let cutoff = tol.relative_cutoff() * smax;
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&j| s[j] > cutoff && s[j] > 0.0)
        .collect();

    Ok(ReducedSvd {
        left: u.select_columns(&keep),
        singular_values: keep.iter().map(|&j| s[j]).collect(),
        right: v.select_columns(&keep),
    })
}

/// Minimum-norm least-squares solution `(X'X)^+ X'y`.
pub fn min_norm_solve(x: &DenseMatrix, y: &[f64], tol: RankTolerance) -> Result<Vec<f64>> {
    if y.len() != x.rows() {
        return Err(Error::invalid(format!(
            "response has length {} but design has {} rows",
            y.len(),
            x.rows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response has non-finite entries"));
    }
    Ok(reduced_svd(x, tol)?.pinv_apply(y))
}

/// Ridge solution `(X'X + lambda I)^-1 X'y` via Cholesky on the smaller Gram
/// matrix. `lambda = 0` requires full column rank.
pub fn ridge_solve(x: &DenseMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::invalid(format!(
            "response has length {} but design has {n} rows",
            y.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let yv = DVector::from_column_slice(y);
    let m = &x.0;
    if lambda > 0.0 && p > n {
        // Dual form X'(XX' + lambda I)^-1 y.
        let mut gram = m * m.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::numerical("ridge system is not positive definite"))?;
        let alpha = chol.solve(&yv);
        return Ok(m.tr_mul(&alpha).as_slice().to_vec());
    }
    let mut gram = m.tr_mul(m);
    let scale = (0..p).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    if lambda == 0.0 {
        // Cholesky happily factors numerically singular matrices; check the
        // pivots against the diagonal scale.
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("X'X is singular; ridge with lambda = 0 needs full column rank"))?;
        let l = chol.l();
        let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot <= 1e-12 * scale {
            return Err(Error::numerical(
                "X'X is singular; ridge with lambda = 0 needs full column rank",
            ));
        }
        return Ok(chol.solve(&m.tr_mul(&yv)).as_slice().to_vec());
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("ridge system is not positive definite"))?;
    Ok(chol.solve(&m.tr_mul(&yv)).as_slice().to_vec())
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `j` pairs with `values[j]`.
    pub vectors: DenseMatrix,
}

pub fn sym_eig(a: &DenseMatrix) -> Result<SymEigen> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::invalid(format!("matrix is {}x{}, not square", n, a.cols())));
    }
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    if !a.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = a.0.amax().max(f64::MIN_POSITIVE);
    let asym = (&a.0 - a.0.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let eig = a.0.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    Ok(SymEigen {
        values: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
        vectors: DenseMatrix(eig.eigenvectors.select_columns(&order)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::normal_stream;

    fn gaussian(n: usize, p: usize, seed: u64) -> DenseMatrix {
        DenseMatrix::from_column_major(n, p, normal_stream(seed, 0, n * p, 1.0)).unwrap()
    }

    /// Gauss–Jordan with partial pivoting; independent of nalgebra.
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let piv = (c..n)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
        (0..n).map(|i| b[i] / a[i][i]).collect()
    }

    fn gram_plus(x: &DenseMatrix, lambda: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let p = x.cols();
        let a = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| dot(x.column(i), x.column(j)) + if i == j { lambda } else { 0.0 })
                    .collect()
            })
            .collect();
        (a, vec![0.0; p])
    }

    #[test]
    fn identity_svd() {
        let svd = reduced_svd(&DenseMatrix::identity(3), RankTolerance::new(1e-12).unwrap()).unwrap();
        assert_eq!(svd.rank(), 3);
        for s in &svd.singular_values {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_deficient_diagonal() {
        let x = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let svd = reduced_svd(&x, RankTolerance::new(1e-12).unwrap()).unwrap();
        assert_eq!(svd.rank(), 1);
        assert!((svd.singular_values[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn wide_reconstruction_and_orthonormality() {
        let x = gaussian(4, 9, 1);
        let svd = reduced_svd(&x, RankTolerance::default()).unwrap();
        assert_eq!(svd.rank(), 4);
        let err = (svd.reconstruct().as_matrix() - x.as_matrix()).norm();
        assert!(err < 1e-10, "reconstruction error {err}");
        let r = svd.rank();
        let gu = svd.left.tr_mul(&svd.left) - DMatrix::identity(r, r);
        let gv = svd.right.tr_mul(&svd.right) - DMatrix::identity(r, r);
        assert!(gu.amax() < 1e-8 && gv.amax() < 1e-8);
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn tall_reconstruction() {
        let x = gaussian(12, 5, 2);
        let svd = reduced_svd(&x, RankTolerance::default()).unwrap();
        assert_eq!(svd.rank(), 5);
        let err = (svd.reconstruct().as_matrix() - x.as_matrix()).norm();
        assert!(err < 1e-10 * x.frobenius());
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        let x = DenseMatrix::from(m);
        assert!(matches!(
            reduced_svd(&x, RankTolerance::default()),
            Err(Error::InvalidInput(_))
        ));
        assert!(DenseMatrix::from_column_major(1, 1, vec![f64::INFINITY]).is_err());
        assert!(RankTolerance::new(1.0).is_err());
        assert!(RankTolerance::new(-0.1).is_err());
    }

    #[test]
    fn min_norm_identity() {
        let b = min_norm_solve(&DenseMatrix::identity(2), &[3.0, -1.0], RankTolerance::default()).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-14 && (b[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn min_norm_dimension_mismatch() {
        let err = min_norm_solve(&DenseMatrix::identity(2), &[1.0], RankTolerance::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn min_norm_interpolates_wide() {
        let x = gaussian(7, 20, 3);
        let y = normal_stream(4, 0, 7, 1.0);
        let b = min_norm_solve(&x, &y, RankTolerance::default()).unwrap();
        let fit = x.mul_vec(&b);
        let resid: Vec<f64> = fit.iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!(norm(&resid) < 1e-8 * norm(&y));
    }

    #[test]
    fn min_norm_matches_normal_equations_when_tall() {
        let x = gaussian(6, 3, 5);
        let y = normal_stream(6, 0, 6, 1.0);
        let (a, _) = gram_plus(&x, 0.0);
        let oracle = solve_dense(a, x.tr_mul_vec(&y));
        let b = min_norm_solve(&x, &y, RankTolerance::default()).unwrap();
        for (u, v) in b.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }

    #[test]
    fn ridge_identity() {
        let b = ridge_solve(&DenseMatrix::identity(2), &[2.0, 2.0], 1.0).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ridge_matches_explicit_inverse() {
        let x = gaussian(8, 3, 7);
        let y = normal_stream(8, 0, 8, 1.0);
        let (a, _) = gram_plus(&x, 0.5);
        let oracle = solve_dense(a, x.tr_mul_vec(&y));
        let b = ridge_solve(&x, &y, 0.5).unwrap();
        for (u, v) in b.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_dual_form_matches_primal() {
        let x = gaussian(5, 12, 9);
        let y = normal_stream(10, 0, 5, 1.0);
        let (a, _) = gram_plus(&x, 0.3);
        let oracle = solve_dense(a, x.tr_mul_vec(&y));
        let b = ridge_solve(&x, &y, 0.3).unwrap();
        for (u, v) in b.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn ridge_shrinks_monotonically() {
        let x = gaussian(10, 4, 11);
        let y = normal_stream(12, 0, 10, 1.0);
        let norms: Vec<f64> = [0.01, 0.1, 1.0, 10.0, 100.0, 1e4, 1e6]
            .iter()
            .map(|&l| norm(&ridge_solve(&x, &y, l).unwrap()))
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
        assert!(norms.last().unwrap() < &1e-4);
    }

    #[test]
    fn ridge_rejects_singular_at_zero() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert!(matches!(ridge_solve(&x, &[1.0, 2.0, 3.0], 0.0), Err(Error::Numerical(_))));
        let wide = gaussian(2, 4, 3);
        assert!(matches!(ridge_solve(&wide, &[1.0, 2.0], 0.0), Err(Error::Numerical(_))));
        assert!(matches!(ridge_solve(&x, &[1.0, 2.0, 3.0], -1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eig_diagonal_and_identity() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!((e.vectors.get(1, 0).abs() - 1.0).abs() < 1e-14);
        assert!((e.vectors.get(0, 1).abs() - 1.0).abs() < 1e-14);
        let e = sym_eig(&DenseMatrix::identity(4)).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn eig_reconstructs_random_symmetric() {
        let b = gaussian(5, 5, 13);
        let a = DenseMatrix::from(b.as_matrix() + b.as_matrix().transpose());
        let e = sym_eig(&a).unwrap();
        let v = e.vectors.as_matrix();
        let d = DMatrix::from_diagonal(&DVector::from_vec(e.values.clone()));
        let err = (v * d * v.transpose() - a.as_matrix()).norm();
        assert!(err < 1e-8);
        assert!((v.tr_mul(v) - DMatrix::identity(5, 5)).amax() < 1e-10);
        for j in 0..5 {
            let av = a.as_matrix() * v.column(j);
            let lv = v.column(j) * e.values[j];
            assert!((av - lv).norm() < 1e-8 * e.values[0].abs().max(1.0));
        }
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::InvalidInput(_))));
    }
}
