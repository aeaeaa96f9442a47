//! Forecasting estimators: pseudo-OLS, OLS, ridge, Lasso and principal
//! component regression, plus the cross-validation plumbing they share.
//!
//! Every estimator centers `X` and `Y` and restores an intercept, so all
//! predictions are location-equivariant in `Y`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{reduced_svd, ridge_solve, DenseMatrix, RankTolerance};
use crate::seed::{derive_seed, permutation};
use crate::util::{log_space, mean};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PseudoOls,
    Ols,
    Ridge,
    Lasso,
    PcaRegression,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::PseudoOls => "pseudo_ols",
            Method::Ols => "ols",
            Method::Ridge => "ridge",
            Method::Lasso => "lasso",
            Method::PcaRegression => "pca_regression",
        })
    }
}

/// Fitting details carried alongside the coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factors: Option<usize>,
    pub standardized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Mean held-out loss for each grid value, when cross-validated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cv_curve: Vec<(f64, f64)>,
}

/// `predict(x) = intercept + x . coefficients`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub method: Method,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub metadata: FitMetadata,
}

impl LinearPredictor {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::invalid(format!(
                "row has {} entries but the predictor expects {}",
                x.len(),
                self.coefficients.len()
            )));
        }
        Ok(self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.coefficients.len() {
            return Err(Error::invalid(format!(
                "matrix has {} columns but the predictor expects {}",
                x.cols(),
                self.coefficients.len()
            )));
        }
        Ok(x.mul_vec(&self.coefficients).into_iter().map(|v| v + self.intercept).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        if p.coefficients.iter().any(|c| !c.is_finite()) || !p.intercept.is_finite() {
            return Err(Error::invalid("predictor has non-finite coefficients"));
        }
        Ok(p)
    }
}

/// Column centering and optional scaling to unit (1/n) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// 1 for constant columns and when scaling is off.
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DenseMatrix, scale: bool) -> Self {
        let mut means = Vec::with_capacity(x.cols());
        let mut scales = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let col = x.column(j);
            let first = col.first().copied().unwrap_or(0.0);
            if col.iter().all(|v| *v == first) {
                means.push(first);
                scales.push(1.0);
                continue;
            }
            let m = mean(col);
            means.push(m);
            if scale {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
                scales.push(if var > 0.0 { var.sqrt() } else { 1.0 });
            } else {
                scales.push(1.0);
            }
        }
        Standardizer { means, scales }
    }

    pub fn apply(&self, x: &DenseMatrix) -> DMatrix<f64> {
        let mut out = x.as_matrix().clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            for v in col.iter_mut() {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Coefficients on the raw scale and the matching intercept.
    pub fn unscale(&self, b: &[f64], y_mean: f64) -> (Vec<f64>, f64) {
        let coef: Vec<f64> = b.iter().zip(&self.scales).map(|(v, s)| v / s).collect();
        let shift: f64 = coef.iter().zip(&self.means).map(|(c, m)| c * m).sum();
        (coef, y_mean - shift)
    }
}

fn check_xy(x: &DenseMatrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::invalid(format!("X has {} rows but Y has {} entries", x.rows(), y.len())));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::invalid("empty design"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Y has non-finite entries"));
    }
    Ok(())
}

fn centered(y: &[f64]) -> (DVector<f64>, f64) {
    let m = mean(y);
    (DVector::from_iterator(y.len(), y.iter().map(|v| v - m)), m)
}

/// Pseudo-OLS on centered, unscaled data.
pub fn fit_pseudo_ols(x: &DenseMatrix, y: &[f64], tol: RankTolerance) -> Result<LinearPredictor> {
    fit_pseudo_ols_with(x, y, tol, false)
}

/// Pseudo-OLS `V S^-1 U' Y_c` with an optional unit-variance scaling step.
pub fn fit_pseudo_ols_with(x: &DenseMatrix, y: &[f64], tol: RankTolerance, standardize: bool) -> Result<LinearPredictor> {
    check_xy(x, y)?;
    let st = Standardizer::fit(x, standardize);
    let xc = DenseMatrix::from(st.apply(x));
    let (yc, ym) = centered(y);
    let svd = reduced_svd(&xc, tol)?;
    let b = svd.pinv_apply(yc.as_slice());
    let (coefficients, intercept) = st.unscale(&b, ym);
    Ok(LinearPredictor {
        method: Method::PseudoOls,
        intercept,
        coefficients,
        metadata: FitMetadata {
            rank: Some(svd.rank()),
            standardized: standardize,
            ..Default::default()
        },
    })
}

/// Least squares through a Householder QR of the centered design.
pub fn fit_ols(x: &DenseMatrix, y: &[f64]) -> Result<LinearPredictor> {
    check_xy(x, y)?;
    let (n, p) = (x.rows(), x.cols());
    if n <= p {
        return Err(Error::numerical(format!(
            "OLS needs more rows than columns after centering (n = {n}, p = {p})"
        )));
    }
    let st = Standardizer::fit(x, false);
    let xc = st.apply(x);
    let (yc, ym) = centered(y);
    let qr = xc.qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::numerical("design is rank deficient"));
    }
    let qty = qr.q().tr_mul(&yc);
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let (coefficients, intercept) = st.unscale(b.as_slice(), ym);
    Ok(LinearPredictor {
        method: Method::Ols,
        intercept,
        coefficients,
        metadata: FitMetadata {
            rank: Some(p),
            ..Default::default()
        },
    })
}

/// Ridge `(X'X + lambda I)^-1 X'Y` on standardized, centered data.
pub fn fit_ridge(x: &DenseMatrix, y: &[f64], lambda: f64) -> Result<LinearPredictor> {
    check_xy(x, y)?;
    let st = Standardizer::fit(x, true);
    let xs = DenseMatrix::from(st.apply(x));
    let (yc, ym) = centered(y);
    let b = ridge_solve(&xs, yc.as_slice(), lambda)?;
    let (coefficients, intercept) = st.unscale(&b, ym);
    Ok(LinearPredictor {
        method: Method::Ridge,
        intercept,
        coefficients,
        metadata: FitMetadata {
            lambda: Some(lambda),
            standardized: true,
            ..Default::default()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Shuffled partition into `folds` parts; each part is held out once.
    KFold,
    /// `folds` independent random 80/20 splits.
    EightyTwenty,
    /// Forward chaining over `folds + 1` contiguous blocks.
    TimeOrdered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_split")]
    pub split: SplitRule,
    /// Candidate tuning values; empty asks the estimator for its own grid.
    #[serde(default)]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    10
}

fn default_split() -> SplitRule {
    SplitRule::KFold
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            split: SplitRule::KFold,
            grid: Vec::new(),
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("tuning grid values must be positive and finite"));
        }
        Ok(())
    }
}

/// A training/validation index pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Row splits for `n` observations.
pub fn cv_splits(n: usize, cv: &CvConfig) -> Result<Vec<Split>> {
    cv.validate()?;
    let k = cv.folds;
    let splits: Vec<Split> = match cv.split {
        SplitRule::KFold => {
            let perm = permutation(n, cv.seed);
            (0..k)
                .map(|f| {
                    let (lo, hi) = (f * n / k, (f + 1) * n / k);
                    let mut test: Vec<usize> = perm[lo..hi].to_vec();
                    let mut train: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
                    test.sort_unstable();
                    train.sort_unstable();
                    Split { train, test }
                })
                .collect()
        }
        SplitRule::EightyTwenty => {
            let n_test = (n as f64 * 0.2).round() as usize;
            (0..k)
                .map(|f| {
                    let perm = permutation(n, derive_seed(cv.seed, &[f as u64]));
                    let mut test = perm[..n_test].to_vec();
                    let mut train = perm[n_test..].to_vec();
                    test.sort_unstable();
                    train.sort_unstable();
                    Split { train, test }
                })
                .collect()
        }
        SplitRule::TimeOrdered => {
            let blocks = k + 1;
            (0..k)
                .map(|f| {
                    let cut = (f + 1) * n / blocks;
                    let end = (f + 2) * n / blocks;
                    Split {
                        train: (0..cut).collect(),
                        test: (cut..end).collect(),
                    }
                })
                .collect()
        }
    };
    if splits.iter().any(|s| s.train.len() < 2 || s.test.is_empty()) {
        return Err(Error::invalid(format!(
            "{n} observations are too few for {k} folds of rule {:?}",
            cv.split
        )));
    }
    Ok(splits)
}

fn subset(x: &DenseMatrix, y: &[f64], idx: &[usize]) -> (DenseMatrix, Vec<f64>) {
    (x.select_rows(idx), idx.iter().map(|&i| y[i]).collect())
}

/// Index of the smallest score; ties resolved toward the larger grid value.
fn argmin_prefer_larger(grid: &[f64], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..grid.len() {
        let better = scores[i] < scores[best] || (scores[i] == scores[best] && grid[i] > grid[best]);
        if better {
            best = i;
        }
    }
    best
}

fn fold_average(per_fold: &[Vec<f64>], len: usize) -> Vec<f64> {
    (0..len)
        .map(|g| per_fold.iter().map(|f| f[g]).sum::<f64>() / per_fold.len() as f64)
        .collect()
}

/// Log-spaced ridge penalties from `1e-6 s_max^2` to `10 s_max^2` of the
/// standardized design.
pub fn ridge_auto_grid(x: &DenseMatrix, count: usize) -> Result<Vec<f64>> {
    let st = Standardizer::fit(x, true);
    let xs = DenseMatrix::from(st.apply(x));
    let svd = reduced_svd(&xs, RankTolerance::default())?;
    let top = svd.singular_values.first().copied().unwrap_or(1.0).powi(2);
    Ok(log_space(1e-6 * top, 10.0 * top, count))
}

/// Ridge with the penalty chosen by cross-validated mean squared error. One
/// SVD per fold prices the whole grid.
pub fn fit_ridge_cv(x: &DenseMatrix, y: &[f64], cv: &CvConfig) -> Result<LinearPredictor> {
    check_xy(x, y)?;
    let splits = cv_splits(x.rows(), cv)?;
    let grid = if cv.grid.is_empty() { ridge_auto_grid(x, 50)? } else { cv.grid.clone() };
    let per_fold: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let (xt, yt) = subset(x, y, &s.train);
            let (xv, yv) = subset(x, y, &s.test);
            let st = Standardizer::fit(&xt, true);
            let xs = DenseMatrix::from(st.apply(&xt));
            let (yc, ym) = centered(&yt);
            let svd = reduced_svd(&xs, RankTolerance::default())?;
            let uty = svd.left.tr_mul(&yc);
            let xv_s = st.apply(&xv);
            // Validation rows in the right singular basis.
            let xv_v = &xv_s * &svd.right;
            Ok(grid
                .iter()
                .map(|&lam| {
                    let w = DVector::from_iterator(
                        uty.len(),
                        svd.singular_values.iter().zip(uty.iter()).map(|(s, u)| s * u / (s * s + lam)),
                    );
                    let pred = &xv_v * w;
                    pred.iter().zip(&yv).map(|(p, t)| (t - ym - p).powi(2)).sum::<f64>() / yv.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let scores = fold_average(&per_fold, grid.len());
    let best = argmin_prefer_larger(&grid, &scores);
    let mut fit = fit_ridge(x, y, grid[best])?;
    fit.metadata.seed = Some(cv.seed);
    fit.metadata.cv_curve = grid.iter().copied().zip(scores).collect();
    Ok(fit)
}

/// Stopping rule for coordinate descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoControl {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoControl {
    fn default() -> Self {
        LassoControl {
            tolerance: 1e-7,
            max_sweeps: 10_000,
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate descent for `(1/2n)||y - X b||^2 + lambda ||b||_1` on a
/// centered design. Starts from `warm` when given. After each full sweep the
/// active coordinates are swept until they settle. A sweep's change is
/// `max_j (x_j'x_j / n) * delta_j^2` relative to `y'y / n`; the run ends when
/// a full sweep's change falls below `tolerance`.
pub fn lasso_solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    warm: Option<&[f64]>,
    control: LassoControl,
) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::invalid("Y length does not match X rows"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lasso penalty must be >= 0, got {lambda}")));
    }
    let nf = n as f64;
    let norms: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / nf).collect();
    let scale = (y.norm_squared() / nf).max(f64::MIN_POSITIVE);
    let mut b = match warm {
        Some(w) if w.len() == p => w.to_vec(),
        Some(_) => return Err(Error::invalid("warm start has the wrong length")),
        None => vec![0.0; p],
    };
    let mut resid = y.clone();
    for (j, bj) in b.iter().enumerate() {
        if *bj != 0.0 {
            resid.axpy(-*bj, &x.column(j), 1.0);
        }
    }

    let update = |j: usize, b: &mut [f64], resid: &mut DVector<f64>| -> f64 {
        if norms[j] == 0.0 {
            return 0.0;
        }
        let col = x.column(j);
        let old = b[j];
        let z = col.dot(resid) / nf + norms[j] * old;
        let new = soft_threshold(z, lambda) / norms[j];
        if new != old {
            resid.axpy(old - new, &col, 1.0);
            b[j] = new;
        }
        norms[j] * (new - old) * (new - old) / scale
    };

    let mut sweeps = 0;
    let mut last_change = f64::INFINITY;
    while sweeps < control.max_sweeps {
        let full: f64 = (0..p).map(|j| update(j, &mut b, &mut resid)).fold(0.0, f64::max);
        sweeps += 1;
        last_change = full;
        if full < control.tolerance {
            return Ok(b);
        }
        let active: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
        while sweeps < control.max_sweeps {
            let ch: f64 = active.iter().map(|&j| update(j, &mut b, &mut resid)).fold(0.0, f64::max);
            sweeps += 1;
            last_change = ch;
            if ch < control.tolerance {
                break;
            }
        }
    }
    Err(Error::NotConverged {
        sweeps,
        max_change: last_change,
        iterate: b,
    })
}

/// Smallest penalty at which every Lasso coefficient is zero, on the
/// standardized design: `||X_c'Y_c||_inf / n`.
pub fn lasso_lambda_max(x: &DenseMatrix, y: &[f64]) -> Result<f64> {
    check_xy(x, y)?;
    let st = Standardizer::fit(x, true);
    let xs = st.apply(x);
    let (yc, _) = centered(y);
    Ok(xs.tr_mul(&yc).amax() / x.rows() as f64)
}

/// 50 log-spaced penalties from `lambda_max` down four decades, or two when
/// `p > n`.
pub fn lasso_auto_grid(x: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let top = lasso_lambda_max(x, y)?;
    if top == 0.0 {
        return Ok(vec![1.0]);
    }
    let ratio = if x.cols() > x.rows() { 1e-2 } else { 1e-4 };
    let mut g = log_space(top * ratio, top, 50);
    g.reverse();
    Ok(g)
}

/// Lasso at a fixed penalty on standardized, centered data.
pub fn fit_lasso(x: &DenseMatrix, y: &[f64], lambda: f64) -> Result<LinearPredictor> {
    fit_lasso_with(x, y, lambda, LassoControl::default())
}

pub fn fit_lasso_with(x: &DenseMatrix, y: &[f64], lambda: f64, control: LassoControl) -> Result<LinearPredictor> {
    check_xy(x, y)?;
    let st = Standardizer::fit(x, true);
    let xs = st.apply(x);
    let (yc, ym) = centered(y);
    let b = lasso_solve(&xs, &yc, lambda, None, control)?;
    let (coefficients, intercept) = st.unscale(&b, ym);
    Ok(LinearPredictor {
        method: Method::Lasso,
        intercept,
        coefficients,
        metadata: FitMetadata {
            lambda: Some(lambda),
            standardized: true,
            ..Default::default()
        },
    })
}

/// Warm-started path over penalties sorted from large to small.
fn lasso_path(xs: &DMatrix<f64>, yc: &DVector<f64>, desc: &[f64], control: LassoControl) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(desc.len());
    for &lam in desc {
        let b = lasso_solve(xs, yc, lam, out.last().map(|v| v.as_slice()), control)?;
        out.push(b);
    }
    Ok(out)
}

/// Lasso with the penalty chosen by cross-validated mean squared error.
pub fn fit_lasso_cv(x: &DenseMatrix, y: &[f64], cv: &CvConfig) -> Result<LinearPredictor> {
    check_xy(x, y)?;
    let splits = cv_splits(x.rows(), cv)?;
    let mut grid = if cv.grid.is_empty() { lasso_auto_grid(x, y)? } else { cv.grid.clone() };
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    let control = LassoControl::default();
    let per_fold: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let (xt, yt) = subset(x, y, &s.train);
            let (xv, yv) = subset(x, y, &s.test);
            let st = Standardizer::fit(&xt, true);
            let xs = st.apply(&xt);
            let (yc, ym) = centered(&yt);
            let path = lasso_path(&xs, &yc, &grid, control)?;
            let xv_s = st.apply(&xv);
            Ok(path
                .iter()
                .map(|b| {
                    let pred = &xv_s * DVector::from_column_slice(b);
                    pred.iter().zip(&yv).map(|(p, t)| (t - ym - p).powi(2)).sum::<f64>() / yv.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let scores = fold_average(&per_fold, grid.len());
    let best = argmin_prefer_larger(&grid, &scores);
    // Refit along the path so the final solve is warm-started.
    let st = Standardizer::fit(x, true);
    let xs = st.apply(x);
    let (yc, ym) = centered(y);
    let path = lasso_path(&xs, &yc, &grid[..=best], control)?;
    let (coefficients, intercept) = st.unscale(path.last().expect("nonempty path"), ym);
    Ok(LinearPredictor {
        method: Method::Lasso,
        intercept,
        coefficients,
        metadata: FitMetadata {
            lambda: Some(grid[best]),
            standardized: true,
            seed: Some(cv.seed),
            cv_curve: grid.iter().copied().zip(scores).collect(),
            ..Default::default()
        },
    })
}

/// Information criterion for the number of principal-component factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorCriterion {
    /// `V(k) + k sigma^2 ((n+p)/(np)) ln(np/(n+p))`, `sigma^2 = V(k_max)`.
    PcP1,
    /// `ln V(k) + k ((n+p)/(np)) ln(np/(n+p))`.
    IcP1,
}

/// Factor count: fixed, or chosen by a criterion over `1..=k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaOptions {
    pub k: Option<usize>,
    pub criterion: FactorCriterion,
    /// Defaults to `min(15, n/2, p/2)`.
    pub k_max: Option<usize>,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions {
            k: None,
            criterion: FactorCriterion::PcP1,
            k_max: None,
        }
    }
}

/// Criterion values for `k = 1..=k_max` from the singular values of the
/// standardized n x p design.
pub fn factor_criterion(singular_values: &[f64], n: usize, p: usize, k_max: usize, rule: FactorCriterion) -> Vec<f64> {
    let np = (n * p) as f64;
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let v = |k: usize| -> f64 {
        let kept: f64 = singular_values.iter().take(k).map(|s| s * s).sum();
        ((total - kept) / np).max(0.0)
    };
    let g = ((n + p) as f64 / np) * (np / (n + p) as f64).ln();
    let sigma2 = v(k_max);
    (1..=k_max)
        .map(|k| match rule {
            FactorCriterion::PcP1 => v(k) + k as f64 * sigma2 * g,
            FactorCriterion::IcP1 => v(k).ln() + k as f64 * g,
        })
        .collect()
}

/// Principal-component regression. New rows are mapped to factors by least
/// squares on the estimated loadings, which folds into one linear map.
pub fn fit_pca_regression(x: &DenseMatrix, y: &[f64], k: Option<usize>) -> Result<LinearPredictor> {
    fit_pca_regression_with(x, y, PcaOptions { k, ..Default::default() })
}

pub fn fit_pca_regression_with(x: &DenseMatrix, y: &[f64], opts: PcaOptions) -> Result<LinearPredictor> {
    check_xy(x, y)?;
    let (n, p) = (x.rows(), x.cols());
    if let Some(k) = opts.k {
        if k == 0 || k > n.min(p) {
            return Err(Error::invalid(format!("factor count {k} must lie in 1..={}", n.min(p))));
        }
    }
    let st = Standardizer::fit(x, true);
    let z = DenseMatrix::from(st.apply(x));
    let (yc, ym) = centered(y);
    let svd = reduced_svd(&z, RankTolerance::default())?;
    let k = match opts.k {
        Some(k) => k,
        None => {
            let k_max = opts.k_max.unwrap_or_else(|| 15.min(n / 2).min(p / 2)).max(1).min(svd.rank());
            let crit = factor_criterion(&svd.singular_values, n, p, k_max, opts.criterion);
            let mut best = 0;
            for (i, c) in crit.iter().enumerate() {
                if *c < crit[best] {
                    best = i;
                }
            }
            best + 1
        }
    };
    if k > svd.rank() {
        return Err(Error::numerical(format!(
            "requested {k} factors but the standardized design has rank {}",
            svd.rank()
        )));
    }
    // Factors sqrt(n) U_k, loadings V_k S_k / sqrt(n); the composite map is
    // V_k S_k^-1 U_k' Y_c.
    let uty = svd.left.columns(0, k).tr_mul(&yc);
    let w = DVector::from_iterator(k, uty.iter().zip(&svd.singular_values).map(|(u, s)| u / s));
    let b = svd.right.columns(0, k) * w;
    let (coefficients, intercept) = st.unscale(b.as_slice(), ym);
    Ok(LinearPredictor {
        method: Method::PcaRegression,
        intercept,
        coefficients,
        metadata: FitMetadata {
            factors: Some(k),
            rank: Some(svd.rank()),
            standardized: true,
            ..Default::default()
        },
    })
}
