//! Population-level calculators for the working model induced by the factor
//! design, and exact conditional bias/variance of pseudo-OLS and ridge.
//!
//! Nothing here forms a p x p inverse: the induced coefficient goes through a
//! K x K system and the risk formulas only touch the rank-r factors of the
//! design's SVD.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{self, FactorModelSpec, P0Rule};
use crate::error::{Error, Result};
use crate::linalg::{reduced_svd, DenseMatrix, RankTolerance};
use crate::seed::derive_seed;

/// Covariance of the idiosyncratic vector `u_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum IdioCov {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl IdioCov {
    fn dim(&self) -> usize {
        match self {
            IdioCov::Diagonal(d) => d.len(),
            IdioCov::Full(m) => m.nrows(),
        }
    }

    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            IdioCov::Diagonal(d) => {
                let mut out = m.clone();
                for (i, di) in d.iter().enumerate() {
                    out.row_mut(i).scale_mut(*di);
                }
                out
            }
            IdioCov::Full(c) => c * m,
        }
    }

    fn solve(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            IdioCov::Diagonal(d) => {
                let mut out = m.clone();
                for (i, di) in d.iter().enumerate() {
                    out.row_mut(i).scale_mut(1.0 / di);
                }
                Ok(out)
            }
            IdioCov::Full(c) => c
                .clone()
                .cholesky()
                .map(|ch| ch.solve(m))
                .ok_or_else(|| Error::numerical("idiosyncratic covariance is not positive definite")),
        }
    }

    fn leading_block(&self, p0: usize) -> IdioCov {
        match self {
            IdioCov::Diagonal(d) => IdioCov::Diagonal(d[..p0].to_vec()),
            IdioCov::Full(c) => IdioCov::Full(c.view((0, 0), (p0, p0)).into_owned()),
        }
    }
}

/// Population quantities `(Lambda, Sigma_f, Cov(u), rho, Var(eps))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    /// p x K.
    pub loadings: DMatrix<f64>,
    /// K x K.
    pub factor_cov: DMatrix<f64>,
    pub idio_cov: IdioCov,
    pub rho: Vec<f64>,
    pub sigma_eps2: f64,
}

impl PopulationModel {
    /// Population model of a simulated design: unit factor covariance and
    /// `sigma_u^2 I` idiosyncratic covariance.
    pub fn from_spec(spec: &FactorModelSpec) -> Result<Self> {
        let lam = dgp::loadings(spec)?;
        Ok(Self::from_loadings(spec, lam.into_matrix()))
    }

    pub(crate) fn from_loadings(spec: &FactorModelSpec, loadings: DMatrix<f64>) -> Self {
        let p = loadings.nrows();
        PopulationModel {
            loadings,
            factor_cov: DMatrix::identity(spec.k, spec.k),
            idio_cov: IdioCov::Diagonal(vec![spec.sigma_u * spec.sigma_u; p]),
            rho: spec.rho.clone(),
            sigma_eps2: spec.sigma_eps * spec.sigma_eps,
        }
    }

    pub fn p(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, k) = (self.p(), self.k());
        if self.factor_cov.shape() != (k, k) {
            return Err(Error::invalid("factor covariance must be K x K"));
        }
        if self.idio_cov.dim() != p {
            return Err(Error::invalid("idiosyncratic covariance must be p x p"));
        }
        if self.rho.len() != k {
            return Err(Error::invalid("rho must have K entries"));
        }
        if !(self.sigma_eps2 >= 0.0) {
            return Err(Error::invalid("Var(eps) must be nonnegative"));
        }
        let asym = (&self.factor_cov - self.factor_cov.transpose()).amax();
        if asym > 1e-10 * self.factor_cov.amax().max(1.0) {
            return Err(Error::invalid("factor covariance is not symmetric"));
        }
        match &self.idio_cov {
            IdioCov::Diagonal(d) if d.iter().any(|v| !(*v > 0.0)) => {
                return Err(Error::invalid("idiosyncratic variances must be positive"));
            }
            IdioCov::Full(c) if (c - c.transpose()).amax() > 1e-10 * c.amax().max(1.0) => {
                return Err(Error::invalid("idiosyncratic covariance is not symmetric"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Model for the leading `p0` predictors only.
    pub fn restrict(&self, p0: usize) -> Result<Self> {
        if p0 == 0 || p0 > self.p() {
            return Err(Error::invalid(format!("cannot restrict {} predictors to {p0}", self.p())));
        }
        Ok(PopulationModel {
            loadings: self.loadings.rows(0, p0).into_owned(),
            factor_cov: self.factor_cov.clone(),
            idio_cov: self.idio_cov.leading_block(p0),
            rho: self.rho.clone(),
            sigma_eps2: self.sigma_eps2,
        })
    }

    /// `E[X_t X_t'] * m` without forming the p x p matrix.
    pub fn cov_apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let lt_m = self.loadings.tr_mul(m);
        &self.loadings * (&self.factor_cov * lt_m) + self.idio_cov.apply(m)
    }

    /// `v' E[X_t X_t'] v`.
    pub fn cov_quad(&self, v: &DVector<f64>) -> f64 {
        let lv = self.loadings.tr_mul(v);
        let common = lv.dot(&(&self.factor_cov * &lv));
        let idio = match &self.idio_cov {
            IdioCov::Diagonal(d) => v.iter().zip(d).map(|(a, s)| a * a * s).sum(),
            IdioCov::Full(c) => v.dot(&(c * v)),
        };
        common + idio
    }

    /// Dense `E[X_t X_t']`; only for small checks.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.cov_apply(&DMatrix::identity(self.p(), self.p()))
    }
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::numerical(format!("{what} is singular or not positive definite")))
}

/// Coefficient of the best linear predictor of `y_t` given `X_t`:
/// `Cov(u)^-1 Lambda (Sigma_f^-1 + Lambda' Cov(u)^-1 Lambda)^-1 rho`.
pub fn induced_beta(m: &PopulationModel) -> Result<Vec<f64>> {
    m.validate()?;
    let cinv_lam = m.idio_cov.solve(&m.loadings)?;
    let inner = spd_inverse(&m.factor_cov, "factor covariance")? + m.loadings.tr_mul(&cinv_lam);
    let rho = DVector::from_column_slice(&m.rho);
    let w = inner
        .cholesky()
        .ok_or_else(|| Error::numerical("K x K system is not positive definite"))?
        .solve(&rho);
    Ok((cinv_lam * w).as_slice().to_vec())
}

/// `Var(e_t) = Var(eps) + (rho - Lambda'beta)' Sigma_f (rho - Lambda'beta) + beta' Cov(u) beta`.
pub fn induced_resid_var(m: &PopulationModel) -> Result<f64> {
    let beta = DVector::from_vec(induced_beta(m)?);
    Ok(resid_var_with(m, &beta))
}

fn resid_var_with(m: &PopulationModel, beta: &DVector<f64>) -> f64 {
    let gap = DVector::from_column_slice(&m.rho) - m.loadings.tr_mul(beta);
    let factor_term = gap.dot(&(&m.factor_cov * &gap));
    let idio_term = match &m.idio_cov {
        IdioCov::Diagonal(d) => beta.iter().zip(d).map(|(b, s)| b * b * s).sum(),
        IdioCov::Full(c) => beta.dot(&(c * beta)),
    };
    m.sigma_eps2 + factor_term + idio_term
}

/// Conditional squared bias and variance of a linear forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParts {
    pub bias2: f64,
    pub variance: f64,
}

impl RiskParts {
    pub fn total(&self) -> f64 {
        self.bias2 + self.variance
    }
}

fn check_design(m: &PopulationModel, x: &DenseMatrix, sigma_e2: f64) -> Result<()> {
    if x.cols() != m.p() {
        return Err(Error::invalid(format!(
            "design has {} columns but the model has {} predictors",
            x.cols(),
            m.p()
        )));
    }
    if !(sigma_e2 >= 0.0 && sigma_e2.is_finite()) {
        return Err(Error::invalid("sigma_e^2 must be nonnegative"));
    }
    Ok(())
}

/// Bias^2 `beta' A E[XX'] A beta` with `A = (X'X)^+ X'X - I`, and variance
/// `sigma_e^2 tr[(X'X)^+ E[XX']]` for pseudo-OLS on design `x`.
pub fn pseudo_ols_risk(m: &PopulationModel, x: &DenseMatrix, sigma_e2: f64) -> Result<RiskParts> {
    check_design(m, x, sigma_e2)?;
    let beta = DVector::from_vec(induced_beta(m)?);
    pseudo_ols_risk_with_beta(m, &beta, x, sigma_e2)
}

fn pseudo_ols_risk_with_beta(
    m: &PopulationModel,
    beta: &DVector<f64>,
    x: &DenseMatrix,
    sigma_e2: f64,
) -> Result<RiskParts> {
    let svd = reduced_svd(x, RankTolerance::default())?;
    let v = &svd.right;
    let bias2 = if svd.rank() == m.p() {
        0.0
    } else {
        // A beta = -(I - V V') beta.
        let resid = beta - v * v.tr_mul(beta);
        m.cov_quad(&resid)
    };
    let sv = m.cov_apply(v);
    let trace: f64 = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(j, s)| v.column(j).dot(&sv.column(j)) / (s * s))
        .sum();
    Ok(RiskParts {
        bias2,
        variance: sigma_e2 * trace,
    })
}

/// Ridge bias^2 and variance on the informative block:
/// `A = (X'X + lambda I)^-1 X'X - I`,
/// `Var = sigma_e^2 tr[E[XX'] (X'X + lambda I)^-1 X'X (X'X + lambda I)^-1]`.
pub fn ridge_restricted_risk(
    m_informative: &PopulationModel,
    x_informative: &DenseMatrix,
    lambda: f64,
    sigma_e2: f64,
) -> Result<RiskParts> {
    check_design(m_informative, x_informative, sigma_e2)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let beta = DVector::from_vec(induced_beta(m_informative)?);
    let svd = reduced_svd(x_informative, RankTolerance::default())?;
    ridge_risk_from_svd(m_informative, &beta, &svd, lambda, sigma_e2)
}

fn ridge_risk_from_svd(
    m: &PopulationModel,
    beta: &DVector<f64>,
    svd: &crate::linalg::ReducedSvd,
    lambda: f64,
    sigma_e2: f64,
) -> Result<RiskParts> {
    let full_rank = svd.rank() == m.p();
    if lambda == 0.0 && !full_rank {
        return Err(Error::numerical(
            "OLS risk (lambda = 0) needs a full-column-rank informative design",
        ));
    }
    let v = &svd.right;
    let s2: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    let bias2 = if lambda == 0.0 {
        0.0
    } else {
        let vb = v.tr_mul(beta);
        let shrunk = DVector::from_iterator(vb.len(), vb.iter().zip(&s2).map(|(a, s)| a * s / (s + lambda)));
        let a_beta = v * shrunk - beta;
        m.cov_quad(&a_beta)
    };
    let sv = m.cov_apply(v);
    let trace: f64 = s2
        .iter()
        .enumerate()
        .map(|(j, s)| v.column(j).dot(&sv.column(j)) * s / ((s + lambda) * (s + lambda)))
        .sum();
    Ok(RiskParts {
        bias2,
        variance: sigma_e2 * trace,
    })
}

/// Log-spaced penalties from `1e-6 * s_max^2` to `10 * s_max^2`.
pub fn ridge_lambda_grid(x: &DenseMatrix, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::invalid("lambda grid needs at least two points"));
    }
    let svd = reduced_svd(x, RankTolerance::default())?;
    let top = svd.singular_values[0].powi(2);
    Ok(crate::util::log_space(1e-6 * top, 10.0 * top, count))
}

/// Smallest ridge risk over `grid` and the penalty attaining it.
pub fn ridge_min_risk(
    m_informative: &PopulationModel,
    x_informative: &DenseMatrix,
    grid: &[f64],
    sigma_e2: f64,
) -> Result<(f64, RiskParts)> {
    check_design(m_informative, x_informative, sigma_e2)?;
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    let beta = DVector::from_vec(induced_beta(m_informative)?);
    let svd = reduced_svd(x_informative, RankTolerance::default())?;
    let mut best: Option<(f64, RiskParts)> = None;
    for &lambda in grid {
        let r = ridge_risk_from_svd(m_informative, &beta, &svd, lambda, sigma_e2)?;
        if best.map_or(true, |(_, b)| r.total() < b.total()) {
            best = Some((lambda, r));
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// Position of `p` relative to the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Under,
    Threshold,
    Over,
}

impl Regime {
    pub fn of(p: usize, n: usize) -> Self {
        match p.cmp(&n) {
            std::cmp::Ordering::Less => Regime::Under,
            std::cmp::Ordering::Equal => Regime::Threshold,
            std::cmp::Ordering::Greater => Regime::Over,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Under => "under",
            Regime::Threshold => "threshold",
            Regime::Over => "over",
        })
    }
}

/// Monte-Carlo average of the exact conditional risk at one `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub p: usize,
    pub p0: usize,
    pub bias2: f64,
    pub variance: f64,
    /// `bias2 + variance + Var(e_t)`.
    pub mse: f64,
    pub resid_var: f64,
    pub regime: Regime,
    pub bias2_se: f64,
    pub variance_se: f64,
    pub mse_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub n: usize,
    pub replications: usize,
    pub points: Vec<RiskPoint>,
}

impl RiskCurve {
    pub const CSV_HEADER: &'static str = "p,bias2,variance,mse,regime";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for pt in &self.points {
            out.push_str(&format!("{},{},{},{},{}\n", pt.p, pt.bias2, pt.variance, pt.mse, pt.regime));
        }
        out
    }

    pub fn point(&self, p: usize) -> Option<&RiskPoint> {
        self.points.iter().find(|pt| pt.p == p)
    }
}

/// Settings for [`risk_curve_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskCurveConfig {
    pub spec: FactorModelSpec,
    pub p_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_p0_rule")]
    pub p0_rule: P0Rule,
    /// Replaces `Var(e_t)` in the variance formula when set.
    #[serde(default)]
    pub sigma_e2: Option<f64>,
}

fn default_p0_rule() -> P0Rule {
    P0Rule::Capped
}

/// Risk curve with the capped informative rule `p0(p) = min(p, spec.p0)`.
pub fn risk_curve(spec: &FactorModelSpec, p_grid: &[usize], replications: usize, seed: u64) -> Result<RiskCurve> {
    risk_curve_with(&RiskCurveConfig {
        spec: spec.clone(),
        p_grid: p_grid.to_vec(),
        replications,
        seed,
        p0_rule: P0Rule::Capped,
        sigma_e2: None,
    })
}

/// Averages [`pseudo_ols_risk`] over `replications` designs at every grid
/// point. Replication `r` uses noise seed `derive_seed(seed, [r])` for all
/// `p`, so neighbouring grid points share designs.
pub fn risk_curve_with(cfg: &RiskCurveConfig) -> Result<RiskCurve> {
    let spec = &cfg.spec;
    spec.validate()?;
    cfg.p0_rule.validate()?;
    if cfg.p_grid.is_empty() {
        return Err(Error::invalid("p grid is empty"));
    }
    if cfg.p_grid.windows(2).any(|w| w[0] >= w[1]) || cfg.p_grid[0] == 0 {
        return Err(Error::invalid("p grid must be positive and strictly ascending"));
    }
    if cfg.replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    if let Some(s) = cfg.sigma_e2 {
        if !(s >= 0.0) {
            return Err(Error::invalid("sigma_e2 override must be nonnegative"));
        }
    }
    let p_max = *cfg.p_grid.last().expect("nonempty");

    // Per-p population pieces are shared by all replications.
    struct Cell {
        p: usize,
        p0: usize,
        model: PopulationModel,
        beta: DVector<f64>,
        resid_var: f64,
        spec: FactorModelSpec,
    }
    let base_width = p_max.max(spec.p0);
    let base_spec = spec.with_dims(base_width, spec.p0);
    let base_loadings = dgp::loadings(&base_spec)?;
    let mut cells = Vec::with_capacity(cfg.p_grid.len());
    for &p in &cfg.p_grid {
        let p0 = cfg.p0_rule.informative(spec, p);
        let (cell_spec, model) = match cfg.p0_rule {
            P0Rule::Capped => {
                let lam = base_loadings.as_matrix().rows(0, p).into_owned();
                (base_spec.clone(), PopulationModel::from_loadings(spec, lam))
            }
            P0Rule::Fraction(_) => {
                let s = spec.with_dims(p, p0);
                let m = PopulationModel::from_spec(&s)?;
                (s, m)
            }
        };
        let beta = DVector::from_vec(induced_beta(&model)?);
        let resid_var = resid_var_with(&model, &beta);
        cells.push(Cell {
            p,
            p0,
            model,
            beta,
            resid_var,
            spec: cell_spec,
        });
    }

    let reps: Vec<Vec<RiskParts>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<RiskParts>> {
            let noise_seed = derive_seed(cfg.seed, &[r as u64]);
            let shared = match cfg.p0_rule {
                P0Rule::Capped => Some(
                    dgp::draw_sample(&FactorModelSpec {
                        noise_seed,
                        ..base_spec.clone()
                    })?
                    .x,
                ),
                P0Rule::Fraction(_) => None,
            };
            cells
                .iter()
                .map(|c| {
                    let x = match &shared {
                        Some(full) => full.leading_columns(c.p),
                        None => {
                            dgp::draw_sample(&FactorModelSpec {
                                noise_seed,
                                ..c.spec.clone()
                            })?
                            .x
                        }
                    };
                    let s2 = cfg.sigma_e2.unwrap_or(c.resid_var);
                    pseudo_ols_risk_with_beta(&c.model, &c.beta, &x, s2)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let r = cfg.replications as f64;
    let points = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let b: Vec<f64> = reps.iter().map(|rep| rep[i].bias2).collect();
            let v: Vec<f64> = reps.iter().map(|rep| rep[i].variance).collect();
            let t: Vec<f64> = reps.iter().map(|rep| rep[i].total()).collect();
            let (bm, bs) = crate::util::mean_and_sd(&b);
            let (vm, vs) = crate::util::mean_and_sd(&v);
            let (_, ts) = crate::util::mean_and_sd(&t);
            RiskPoint {
                p: c.p,
                p0: c.p0,
                bias2: bm,
                variance: vm,
                mse: bm + vm + c.resid_var,
                resid_var: c.resid_var,
                regime: Regime::of(c.p, spec.n),
                bias2_se: bs / r.sqrt(),
                variance_se: vs / r.sqrt(),
                mse_se: ts / r.sqrt(),
            }
        })
        .collect();

    Ok(RiskCurve {
        n: spec.n,
        replications: cfg.replications,
        points,
    })
}
