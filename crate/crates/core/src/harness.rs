//! Evaluation protocols, forecast metrics and experiment sweeps.
//!
//! Windowed protocols work on aligned rows: row `j` holds the predictors
//! observed at `j` and the target they forecast. The forecast for row `j`
//! is fit on rows strictly before `j`, so nothing at or after `j` except the
//! predictors of row `j` itself is ever read.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::TuneTrace;
use crate::dataio::Dataset;
use crate::dgp::{self, FactorModelSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_lasso, fit_lasso_cv, fit_ols, fit_pca_regression_with, fit_pseudo_ols_with, fit_ridge, fit_ridge_cv, CvConfig,
    FactorCriterion, LinearPredictor, PcaOptions,
};
use crate::linalg::{DenseMatrix, RankTolerance};
use crate::seed::{derive_seed, permutation};
use crate::util::{mean, mean_and_sd, stable_sum};

/// `1 - sum (y - yhat)^2 / sum (y - benchmark)^2` over
/// `(truth, prediction, benchmark)` triples.
pub fn oos_r2(pairs: &[(f64, f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no forecasts to score"));
    }
    let num = stable_sum(pairs.iter().map(|(t, p, _)| (t - p) * (t - p)));
    let den = stable_sum(pairs.iter().map(|(t, _, b)| (t - b) * (t - b)));
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "out-of-sample R^2 has a zero benchmark denominator".into(),
        ));
    }
    Ok(1.0 - num / den)
}

fn default_sigma() -> f64 {
    1.0
}

/// Estimator choice with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    PseudoOls {
        /// Total predictor count after appending noise columns.
        #[serde(default)]
        augment_to: Option<usize>,
        #[serde(default = "default_sigma")]
        noise_sigma: f64,
        #[serde(default)]
        standardize: bool,
    },
    Ols,
    /// Fixed `lambda`, or cross-validated when absent.
    Ridge {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        cv: CvConfig,
    },
    Lasso {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        cv: CvConfig,
    },
    Pca {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default = "default_criterion")]
        criterion: FactorCriterion,
    },
}

fn default_criterion() -> FactorCriterion {
    FactorCriterion::PcP1
}

impl MethodSpec {
    pub fn pseudo_ols() -> Self {
        MethodSpec::PseudoOls {
            augment_to: None,
            noise_sigma: 1.0,
            standardize: false,
        }
    }

    pub fn augmented(p: usize) -> Self {
        MethodSpec::PseudoOls {
            augment_to: Some(p),
            noise_sigma: 1.0,
            standardize: false,
        }
    }

    pub fn ridge_cv(cv: CvConfig) -> Self {
        MethodSpec::Ridge { lambda: None, cv }
    }

    pub fn lasso_cv(cv: CvConfig) -> Self {
        MethodSpec::Lasso { lambda: None, cv }
    }

    pub fn pca() -> Self {
        MethodSpec::Pca {
            k: None,
            criterion: FactorCriterion::PcP1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MethodSpec::PseudoOls { .. } => "pseudo_ols".into(),
            MethodSpec::Ols => "ols".into(),
            MethodSpec::Ridge { lambda: Some(_), .. } => "ridge".into(),
            MethodSpec::Ridge { lambda: None, .. } => "ridge_cv".into(),
            MethodSpec::Lasso { lambda: Some(_), .. } => "lasso".into(),
            MethodSpec::Lasso { lambda: None, .. } => "lasso_cv".into(),
            MethodSpec::Pca { .. } => "pca".into(),
        }
    }

    pub fn is_pseudo_ols(&self) -> bool {
        matches!(self, MethodSpec::PseudoOls { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::PseudoOls { noise_sigma, .. } if !(*noise_sigma > 0.0 && noise_sigma.is_finite()) => {
                Err(Error::invalid("noise_sigma must be positive"))
            }
            MethodSpec::Ridge { lambda, cv } | MethodSpec::Lasso { lambda, cv } => {
                if let Some(l) = lambda {
                    if !(*l >= 0.0 && l.is_finite()) {
                        return Err(Error::invalid("lambda must be nonnegative"));
                    }
                }
                cv.validate()
            }
            MethodSpec::Pca { k: Some(0), .. } => Err(Error::invalid("factor count must be positive")),
            _ => Ok(()),
        }
    }

    /// Fits on already-augmented data.
    pub fn fit(&self, x: &DenseMatrix, y: &[f64]) -> Result<LinearPredictor> {
        match self {
            MethodSpec::PseudoOls { standardize, .. } => fit_pseudo_ols_with(x, y, RankTolerance::default(), *standardize),
            MethodSpec::Ols => fit_ols(x, y),
            MethodSpec::Ridge { lambda: Some(l), .. } => fit_ridge(x, y, *l),
            MethodSpec::Ridge { lambda: None, cv } => fit_ridge_cv(x, y, cv),
            MethodSpec::Lasso { lambda: Some(l), .. } => fit_lasso(x, y, *l),
            MethodSpec::Lasso { lambda: None, cv } => fit_lasso_cv(x, y, cv),
            MethodSpec::Pca { k, criterion } => fit_pca_regression_with(
                x,
                y,
                PcaOptions {
                    k: *k,
                    criterion: *criterion,
                    k_max: None,
                },
            ),
        }
    }

    /// Columns appended by this method to a table with `p0` predictors.
    pub fn extra_columns(&self, p0: usize) -> Result<usize> {
        match self {
            MethodSpec::PseudoOls {
                augment_to: Some(p), ..
            } => {
                if *p < p0 {
                    Err(Error::invalid(format!("augment_to = {p} is below the {p0} real predictors")))
                } else {
                    Ok(p - p0)
                }
            }
            _ => Ok(0),
        }
    }
}

/// Rows of a table that may hold missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub index: Vec<String>,
}

impl From<&Dataset> for Panel {
    fn from(d: &Dataset) -> Self {
        Panel {
            x: d.x.as_matrix().clone(),
            y: d.y.clone(),
            index: d.index.clone(),
        }
    }
}

impl Panel {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    /// The panel with the method's noise columns appended. Missing values in
    /// the real columns are kept.
    pub fn augmented(&self, method: &MethodSpec, seed: u64) -> Result<Panel> {
        let extra = method.extra_columns(self.x.ncols())?;
        if extra == 0 {
            return Ok(self.clone());
        }
        let sigma = match method {
            MethodSpec::PseudoOls { noise_sigma, .. } => *noise_sigma,
            _ => 1.0,
        };
        let noise = dgp::noise_block(self.rows(), extra, sigma, seed)?;
        let (n, p) = self.x.shape();
        let mut x = DMatrix::zeros(n, p + extra);
        x.columns_mut(0, p).copy_from(&self.x);
        x.columns_mut(p, extra).copy_from(noise.as_matrix());
        Ok(Panel {
            x,
            y: self.y.clone(),
            index: self.index.clone(),
        })
    }

    fn finite_rows(&self, rows: &[usize]) -> Option<(DenseMatrix, Vec<f64>)> {
        let y: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let sub = self.x.select_rows(rows);
        if sub.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((DenseMatrix::from(sub), y))
    }
}

/// One forecast: `origin` is the row label of the forecast row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin: String,
    pub repetition: usize,
    pub truth: f64,
    pub prediction: f64,
    pub benchmark: f64,
}

/// Fits on `train` rows and forecasts row `target`; `None` when any value
/// involved is missing.
pub fn forecast_row(panel: &Panel, method: &MethodSpec, train: &[usize], target: usize) -> Result<Option<ForecastRecord>> {
    let Some((xt, yt)) = panel.finite_rows(train) else {
        return Ok(None);
    };
    let truth = panel.y[target];
    let row: Vec<f64> = panel.x.row(target).iter().copied().collect();
    if !truth.is_finite() || row.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let fit = method.fit(&xt, &yt)?;
    Ok(Some(ForecastRecord {
        origin: panel.index[target].clone(),
        repetition: 0,
        truth,
        prediction: fit.predict_row(&row)?,
        benchmark: mean(&yt),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Repeated random train/test partitions.
    RandomSplit { train_fraction: f64, repetitions: usize },
    /// The leading `train_fraction` of rows trains, the rest is tested.
    FixedSplit { train_fraction: f64 },
    /// Fixed-length training window ending just before each forecast row.
    RollingWindow { window: usize },
    /// Training window from the first row, starting with `initial` rows.
    ExpandingWindow { initial: usize },
}

impl Protocol {
    pub fn validate(&self, rows: usize) -> Result<()> {
        match *self {
            Protocol::RandomSplit {
                train_fraction,
                repetitions,
            } => {
                if repetitions == 0 {
                    return Err(Error::invalid("repetitions must be at least 1"));
                }
                split_size(rows, train_fraction).map(|_| ())
            }
            Protocol::FixedSplit { train_fraction } => split_size(rows, train_fraction).map(|_| ()),
            Protocol::RollingWindow { window: w } | Protocol::ExpandingWindow { initial: w } => {
                if w < 2 || w >= rows {
                    Err(Error::invalid(format!(
                        "training window must lie in 2..{rows} for {rows} rows, got {w}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::RandomSplit { .. } => "random_split",
            Protocol::FixedSplit { .. } => "fixed_split",
            Protocol::RollingWindow { .. } => "rolling_window",
            Protocol::ExpandingWindow { .. } => "expanding_window",
        }
    }
}

fn split_size(rows: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must lie in (0, 1), got {fraction}")));
    }
    let n_train = (fraction * rows as f64).round() as usize;
    if n_train < 2 || n_train >= rows {
        return Err(Error::invalid(format!(
            "train fraction {fraction} of {rows} rows leaves a degenerate split"
        )));
    }
    Ok(n_train)
}

/// Forecasts, their aggregate scores and the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub method: String,
    pub protocol: Protocol,
    /// Predictors seen by the estimator, noise columns included.
    pub p: usize,
    pub mse: f64,
    /// `None` when the benchmark denominator is zero but forecasts miss.
    pub oos_r2: Option<f64>,
    pub repetition_mse: Vec<f64>,
    pub skipped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune_trace: Option<TuneTrace>,
    pub records: Vec<ForecastRecord>,
}

impl ForecastReport {
    pub const CSV_HEADER: &'static str = "origin,truth,prediction,benchmark";

    fn assemble(
        method: &MethodSpec,
        protocol: Protocol,
        p: usize,
        records: Vec<ForecastRecord>,
        repetitions: usize,
        skipped: Vec<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("the protocol produced no forecasts"));
        }
        let sq = |r: &ForecastRecord| (r.truth - r.prediction) * (r.truth - r.prediction);
        let mse = stable_sum(records.iter().map(sq)) / records.len() as f64;
        let repetition_mse = (0..repetitions)
            .map(|k| {
                let errs: Vec<f64> = records.iter().filter(|r| r.repetition == k).map(sq).collect();
                stable_sum(errs.iter().copied()) / errs.len().max(1) as f64
            })
            .collect();
        let triples: Vec<(f64, f64, f64)> = records.iter().map(|r| (r.truth, r.prediction, r.benchmark)).collect();
        let oos_r2 = match oos_r2(&triples) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) if mse == 0.0 => Some(0.0),
            Err(Error::UndefinedMetric(m)) => {
                log::warn!("{m}");
                None
            }
            Err(e) => return Err(e),
        };
        for s in &skipped {
            log::info!("skipped forecast at {s}");
        }
        Ok(ForecastReport {
            method: method.label(),
            protocol,
            p,
            mse,
            oos_r2,
            repetition_mse,
            skipped,
            tune_trace: None,
            records,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", csv_field(&r.origin), r.truth, r.prediction, r.benchmark));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const TAG_SPLIT: u64 = 1;
const TAG_NOISE: u64 = 2;

fn run_windows(panel: &Panel, method: &MethodSpec, protocol: Protocol, seed: u64) -> Result<ForecastReport> {
    method.validate()?;
    protocol.validate(panel.rows())?;
    let data = panel.augmented(method, derive_seed(seed, &[TAG_NOISE]))?;
    let (start, rolling) = match protocol {
        Protocol::RollingWindow { window } => (window, true),
        Protocol::ExpandingWindow { initial } => (initial, false),
        _ => unreachable!("windowed protocol"),
    };
    let results: Vec<(usize, Option<ForecastRecord>)> = (start..data.rows())
        .into_par_iter()
        .map(|j| {
            let lo = if rolling { j - start } else { 0 };
            let train: Vec<usize> = (lo..j).collect();
            forecast_row(&data, method, &train, j).map(|r| (j, r))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (j, r) in results {
        match r {
            Some(rec) => records.push(rec),
            None => skipped.push(data.index[j].clone()),
        }
    }
    ForecastReport::assemble(method, protocol, data.x.ncols(), records, 1, skipped)
}

/// Rolling-window one-step forecasts.
pub fn run_rolling(data: &Dataset, method: &MethodSpec, window: usize, seed: u64) -> Result<ForecastReport> {
    run_windows(&Panel::from(data), method, Protocol::RollingWindow { window }, seed)
}

/// Expanding-window one-step forecasts.
pub fn run_expanding(data: &Dataset, method: &MethodSpec, initial: usize, seed: u64) -> Result<ForecastReport> {
    run_windows(&Panel::from(data), method, Protocol::ExpandingWindow { initial }, seed)
}

/// Windowed protocols on a panel that may contain missing values; windows
/// touching a missing value are skipped.
pub fn run_panel(panel: &Panel, method: &MethodSpec, protocol: Protocol, seed: u64) -> Result<ForecastReport> {
    match protocol {
        Protocol::RollingWindow { .. } | Protocol::ExpandingWindow { .. } => run_windows(panel, method, protocol, seed),
        _ => Err(Error::invalid("run_panel handles windowed protocols only")),
    }
}

fn split_forecasts(
    data: &Dataset,
    method: &MethodSpec,
    train: &[usize],
    test: &[usize],
    repetition: usize,
    noise_seed: u64,
) -> Result<(Vec<ForecastRecord>, usize)> {
    let panel = Panel::from(data).augmented(method, noise_seed)?;
    let (xt, yt) = panel.finite_rows(train).expect("datasets are finite");
    let fit = method.fit(&xt, &yt)?;
    let (xv, yv) = panel.finite_rows(test).expect("datasets are finite");
    let pred = fit.predict(&xv)?;
    let bench = mean(&yt);
    let recs = test
        .iter()
        .zip(yv.iter().zip(pred))
        .map(|(&i, (&truth, prediction))| ForecastRecord {
            origin: panel.index[i].clone(),
            repetition,
            truth,
            prediction,
            benchmark: bench,
        })
        .collect();
    Ok((recs, panel.x.ncols()))
}

/// Repeated random splits; repetition `k` shuffles with its own derived seed.
pub fn run_random_split(
    data: &Dataset,
    method: &MethodSpec,
    fraction: f64,
    repetitions: usize,
    seed: u64,
) -> Result<ForecastReport> {
    method.validate()?;
    let protocol = Protocol::RandomSplit {
        train_fraction: fraction,
        repetitions,
    };
    protocol.validate(data.rows())?;
    let n_train = split_size(data.rows(), fraction)?;
    let reps: Vec<(Vec<ForecastRecord>, usize)> = (0..repetitions)
        .into_par_iter()
        .map(|k| {
            let perm = permutation(data.rows(), derive_seed(seed, &[k as u64, TAG_SPLIT]));
            let mut train = perm[..n_train].to_vec();
            let mut test = perm[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            split_forecasts(data, method, &train, &test, k, derive_seed(seed, &[k as u64, TAG_NOISE]))
        })
        .collect::<Result<_>>()?;
    let p = reps.first().map(|r| r.1).unwrap_or(0);
    let records = reps.into_iter().flat_map(|r| r.0).collect();
    ForecastReport::assemble(method, protocol, p, records, repetitions, Vec::new())
}

/// Leading rows train, trailing rows test.
pub fn run_fixed_split(data: &Dataset, method: &MethodSpec, fraction: f64, seed: u64) -> Result<ForecastReport> {
    method.validate()?;
    let protocol = Protocol::FixedSplit { train_fraction: fraction };
    protocol.validate(data.rows())?;
    let n_train = split_size(data.rows(), fraction)?;
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..data.rows()).collect();
    let (records, p) = split_forecasts(data, method, &train, &test, 0, derive_seed(seed, &[TAG_NOISE]))?;
    ForecastReport::assemble(method, protocol, p, records, 1, Vec::new())
}

pub fn run_protocol(data: &Dataset, method: &MethodSpec, protocol: Protocol, seed: u64) -> Result<ForecastReport> {
    match protocol {
        Protocol::RandomSplit {
            train_fraction,
            repetitions,
        } => run_random_split(data, method, train_fraction, repetitions, seed),
        Protocol::FixedSplit { train_fraction } => run_fixed_split(data, method, train_fraction, seed),
        Protocol::RollingWindow { window } => run_rolling(data, method, window, seed),
        Protocol::ExpandingWindow { initial } => run_expanding(data, method, initial, seed),
    }
}

/// Which predictors the comparators see in a simulation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorScope {
    /// The same `p` columns as pseudo-OLS.
    AllPredictors,
    /// Only the first `min(p, p0)` columns.
    InformativeOnly,
}

/// Monte-Carlo sweep over `p` on simulated designs. Design `p` is the
/// leading `p` columns of one wide draw per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSweep {
    pub spec: FactorModelSpec,
    pub p_grid: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    pub replications: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_scope")]
    pub scope: ComparatorScope,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_size() -> usize {
    50
}

fn default_scope() -> ComparatorScope {
    ComparatorScope::AllPredictors
}

/// One `(method, p)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub p: usize,
    pub mse: f64,
    pub mse_se: f64,
    pub r2: Option<f64>,
    pub replication_mse: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ForecastReport>,
}

pub const SWEEP_CSV_HEADER: &str = "method,p,mse,r2";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let r2 = r.r2.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.method, r.p, r.mse, r2));
    }
    out
}

fn check_grid(p_grid: &[usize]) -> Result<()> {
    if p_grid.is_empty() {
        return Err(Error::invalid("p grid is empty"));
    }
    if p_grid[0] == 0 || p_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("p grid must be positive and strictly ascending"));
    }
    Ok(())
}

pub fn run_simulation_sweep(cfg: &SimulationSweep) -> Result<Vec<SweepRow>> {
    if cfg.methods.is_empty() {
        return Ok(Vec::new());
    }
    cfg.spec.validate()?;
    check_grid(&cfg.p_grid)?;
    for m in &cfg.methods {
        m.validate()?;
    }
    if cfg.replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    if cfg.test_size == 0 {
        return Err(Error::invalid("test_size must be at least 1"));
    }
    let p_max = *cfg.p_grid.last().expect("nonempty");
    let wide = cfg.spec.with_dims(p_max.max(cfg.spec.p0), cfg.spec.p0);
    let width = |m: &MethodSpec, p: usize| match (m.is_pseudo_ols(), cfg.scope) {
        (false, ComparatorScope::InformativeOnly) => p.min(cfg.spec.p0),
        _ => p,
    };

    // Per replication: (sse, sst, count) for every (method, p) cell.
    let per_rep: Vec<Vec<(f64, f64, usize)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<(f64, f64, usize)>> {
            let noise_seed = derive_seed(cfg.seed, &[r as u64]);
            let spec = FactorModelSpec { noise_seed, ..wide.clone() };
            let sample = dgp::draw_sample(&spec)?;
            let test = dgp::draw_oos(&spec, cfg.test_size, noise_seed)?;
            let ybar = mean(&sample.y);
            let sst = stable_sum(test.y.iter().map(|t| (t - ybar) * (t - ybar)));
            let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
            let mut out = Vec::with_capacity(cfg.methods.len() * cfg.p_grid.len());
            for (mi, m) in cfg.methods.iter().enumerate() {
                for &p in &cfg.p_grid {
                    let w = width(m, p);
                    let sse = match cache.get(&(mi, w)) {
                        Some(v) => *v,
                        None => {
                            let fit = m.fit(&sample.x.leading_columns(w), &sample.y)?;
                            let pred = fit.predict(&test.x.leading_columns(w))?;
                            let v = stable_sum(test.y.iter().zip(&pred).map(|(t, f)| (t - f) * (t - f)));
                            cache.insert((mi, w), v);
                            v
                        }
                    };
                    out.push((sse, sst, cfg.test_size));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let reps = cfg.replications as f64;
    for (mi, m) in cfg.methods.iter().enumerate() {
        for (pi, &p) in cfg.p_grid.iter().enumerate() {
            let cell = mi * cfg.p_grid.len() + pi;
            let mses: Vec<f64> = per_rep.iter().map(|v| v[cell].0 / v[cell].2 as f64).collect();
            let (mse, sd) = mean_and_sd(&mses);
            let sse = stable_sum(per_rep.iter().map(|v| v[cell].0));
            let sst = stable_sum(per_rep.iter().map(|v| v[cell].1));
            rows.push(SweepRow {
                method: m.label(),
                p,
                mse,
                mse_se: sd / reps.sqrt(),
                r2: (sst > 0.0).then(|| 1.0 - sse / sst),
                replication_mse: mses,
                report: None,
            });
        }
    }
    Ok(rows)
}

/// Sweep over `p` on a user table: pseudo-OLS is augmented to each `p`,
/// the comparators always use the table's own predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSweep {
    pub p_grid: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    pub protocol: Protocol,
    #[serde(default)]
    pub seed: u64,
}

pub fn run_dataset_sweep(data: &Dataset, cfg: &DatasetSweep) -> Result<Vec<SweepRow>> {
    if cfg.methods.is_empty() {
        return Ok(Vec::new());
    }
    check_grid(&cfg.p_grid)?;
    cfg.protocol.validate(data.rows())?;
    let p0 = data.x.cols();
    if cfg.p_grid[0] < p0 {
        return Err(Error::invalid(format!(
            "p grid starts at {} but the table already has {p0} predictors",
            cfg.p_grid[0]
        )));
    }
    let mut rows = Vec::new();
    for m in &cfg.methods {
        m.validate()?;
        let fixed = if m.is_pseudo_ols() {
            None
        } else {
            Some(run_protocol(data, m, cfg.protocol, cfg.seed)?)
        };
        for &p in &cfg.p_grid {
            let report = match (&fixed, m) {
                (Some(r), _) => r.clone(),
                (
                    None,
                    MethodSpec::PseudoOls {
                        noise_sigma,
                        standardize,
                        ..
                    },
                ) => {
                    let aug = MethodSpec::PseudoOls {
                        augment_to: Some(p),
                        noise_sigma: *noise_sigma,
                        standardize: *standardize,
                    };
                    run_protocol(data, &aug, cfg.protocol, derive_seed(cfg.seed, &[p as u64]))?
                }
                (None, _) => unreachable!("only pseudo-OLS is swept"),
            };
            let (_, sd) = mean_and_sd(&report.repetition_mse);
            rows.push(SweepRow {
                method: m.label(),
                p,
                mse: report.mse,
                mse_se: sd / (report.repetition_mse.len() as f64).sqrt(),
                r2: report.oos_r2,
                replication_mse: report.repetition_mse.clone(),
                report: Some(report),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::normal_stream;

    fn series(n: usize, p: usize, seed: u64) -> Dataset {
        let x = DenseMatrix::from_column_major(n, p, normal_stream(seed, 0, n * p, 1.0)).unwrap();
        let e = normal_stream(seed, 1, n, 0.5);
        let y: Vec<f64> = (0..n).map(|i| x.get(i, 0) - 0.5 * x.get(i, 1) + e[i]).collect();
        Dataset::new(
            (0..p).map(|j| format!("x{j}")).collect(),
            "y".into(),
            None,
            (1..=n).map(|i| i.to_string()).collect(),
            x,
            y,
        )
        .unwrap()
    }

    #[test]
    fn r2_arithmetic() {
        assert_eq!(oos_r2(&[(1.0, 0.5, 0.5), (2.0, 1.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(oos_r2(&[(1.0, 1.0, 0.0), (2.0, 2.0, 0.0)]).unwrap(), 1.0);
        let v = oos_r2(&[(1.0, 1.0, 0.0), (2.0, 1.0, 0.0), (3.0, 3.0, 0.0)]).unwrap();
        assert!((v - (1.0 - 1.0 / 14.0)).abs() < 1e-15);
        assert!(matches!(oos_r2(&[(1.0, 0.0, 1.0)]), Err(Error::UndefinedMetric(_))));
        assert!(oos_r2(&[]).is_err());
        let shifted = oos_r2(&[(4.0, 4.0, 3.0), (5.0, 4.0, 3.0), (6.0, 6.0, 3.0)]).unwrap();
        assert!((shifted - v).abs() < 1e-15);
    }

    #[test]
    fn rolling_single_forecast_and_constant_target() {
        let d = series(12, 3, 1);
        let r = run_rolling(&d, &MethodSpec::Ols, 11, 0).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].origin, "12");
        let mut c = d.clone();
        c.y = vec![0.3; 12];
        let r = run_rolling(&c, &MethodSpec::pseudo_ols(), 5, 0).unwrap();
        assert_eq!(r.oos_r2, Some(0.0));
        assert!(run_rolling(&d, &MethodSpec::Ols, 12, 0).is_err());
    }

    #[test]
    fn rolling_matches_manual_loop() {
        let d = series(20, 3, 2);
        let r = run_rolling(&d, &MethodSpec::Ols, 8, 0).unwrap();
        assert_eq!(r.records.len(), 12);
        for (k, rec) in r.records.iter().enumerate() {
            let j = k + 8;
            let rows: Vec<usize> = (j - 8..j).collect();
            let yt: Vec<f64> = rows.iter().map(|&i| d.y[i]).collect();
            let f = fit_ols(&d.x.select_rows(&rows), &yt).unwrap();
            assert_eq!(rec.prediction, f.predict_row(&d.x.row(j)).unwrap());
            assert_eq!(rec.benchmark, mean(&yt));
        }
        let e = run_expanding(&d, &MethodSpec::Ols, 8, 0).unwrap();
        assert_eq!(e.records.len(), 12);
        assert_eq!(e.records[0].prediction, r.records[0].prediction);
    }

    #[test]
    fn nan_windows_are_skipped() {
        let d = series(15, 2, 3);
        let mut panel = Panel::from(&d);
        panel.x[(4, 1)] = f64::NAN;
        let r = run_panel(&panel, &MethodSpec::Ols, Protocol::RollingWindow { window: 5 }, 0).unwrap();
        // Row 4 is in the windows of rows 5..=9 and is itself never a target.
        assert_eq!(r.skipped, vec!["6", "7", "8", "9", "10"]);
        assert_eq!(r.records.len(), 5);
    }

    #[test]
    fn random_split_determinism_and_errors() {
        let d = series(30, 3, 4);
        let m = MethodSpec::augmented(40);
        let a = run_random_split(&d, &m, 0.5, 3, 7).unwrap();
        assert_eq!(a, run_random_split(&d, &m, 0.5, 3, 7).unwrap());
        assert_eq!(a.repetition_mse.len(), 3);
        assert_eq!(a.p, 40);
        let mean_rep = a.repetition_mse.iter().sum::<f64>() / 3.0;
        assert!((mean_rep - a.mse).abs() < 1e-12);
        assert!(run_random_split(&d, &m, 1.0, 3, 7).is_err());
        assert!(run_random_split(&d, &m, 0.5, 0, 7).is_err());
        assert!(run_fixed_split(&d, &m, 1.0, 0).is_err());
        let f = run_fixed_split(&d, &MethodSpec::Ols, 0.8, 0).unwrap();
        assert_eq!(f.records.len(), 6);
        assert!(run_random_split(&d, &MethodSpec::augmented(2), 0.5, 1, 0).is_err());
    }

    #[test]
    fn report_csv_and_json() {
        let d = series(10, 2, 5);
        let r = run_rolling(&d, &MethodSpec::Ols, 8, 0).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("origin,truth,prediction,benchmark\n9,"));
        let back: ForecastReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn method_spec_json() {
        let m: MethodSpec = serde_json::from_str(r#"{"method":"pseudo_ols","augment_to":500}"#).unwrap();
        assert_eq!(m, MethodSpec::augmented(500));
        let r: MethodSpec = serde_json::from_str(r#"{"method":"ridge"}"#).unwrap();
        assert_eq!(r.label(), "ridge_cv");
        assert!(serde_json::from_str::<MethodSpec>(r#"{"method":"svm"}"#).is_err());
        assert!(serde_json::from_str::<MethodSpec>(r#"{"method":"pca","k":2,"extra":1}"#).is_err());
    }

    #[test]
    fn empty_method_list_gives_empty_sweep() {
        let cfg = SimulationSweep {
            spec: FactorModelSpec {
                n: 20,
                p: 10,
                p0: 10,
                k: 1,
                tau: 0.0,
                rho: vec![1.0],
                sigma_eps: 1.0,
                sigma_u: 1.0,
                loading_seed: 0,
                noise_seed: 0,
            },
            p_grid: vec![10],
            methods: vec![],
            replications: 0,
            test_size: 5,
            scope: ComparatorScope::AllPredictors,
            seed: 0,
        };
        assert!(run_simulation_sweep(&cfg).unwrap().is_empty());
        let mut bad = cfg.clone();
        bad.methods = vec![MethodSpec::pseudo_ols()];
        assert!(run_simulation_sweep(&bad).is_err());
        bad.replications = 2;
        let rows = run_simulation_sweep(&bad).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(sweep_csv(&rows).lines().next().unwrap(), "method,p,mse,r2");
    }

    #[test]
    fn informative_scope_pins_comparators() {
        let cfg = SimulationSweep {
            spec: FactorModelSpec {
                n: 40,
                p: 10,
                p0: 10,
                k: 2,
                tau: 0.0,
                rho: vec![1.0, 1.0],
                sigma_eps: 1.0,
                sigma_u: 1.0,
                loading_seed: 1,
                noise_seed: 0,
            },
            p_grid: vec![10, 30, 60],
            methods: vec![MethodSpec::pseudo_ols(), MethodSpec::Ols],
            replications: 3,
            test_size: 10,
            scope: ComparatorScope::InformativeOnly,
            seed: 3,
        };
        let rows = run_simulation_sweep(&cfg).unwrap();
        let ols: Vec<&SweepRow> = rows.iter().filter(|r| r.method == "ols").collect();
        assert_eq!(ols[0].mse, ols[2].mse);
        let pso: Vec<&SweepRow> = rows.iter().filter(|r| r.method == "pseudo_ols").collect();
        assert!((pso[0].mse - ols[0].mse).abs() < 1e-10);
        assert_ne!(pso[2].mse, ols[2].mse);
    }

    #[test]
    fn dataset_sweep_rows() {
        let d = series(30, 3, 6);
        let cfg = DatasetSweep {
            p_grid: vec![3, 20, 60],
            methods: vec![MethodSpec::pseudo_ols(), MethodSpec::Ols],
            protocol: Protocol::RollingWindow { window: 10 },
            seed: 1,
        };
        let rows = run_dataset_sweep(&d, &cfg).unwrap();
        assert_eq!(rows.len(), 6);
        assert!((rows[0].mse - rows[3].mse).abs() < 1e-10);
        assert_eq!(rows[3].mse, rows[5].mse);
        assert_eq!(rows[2].report.as_ref().unwrap().p, 60);
    }
}
