//! Noise augmentation: choose how many pure-noise columns to append through
//! `p = C n sqrt(p0)` and tune `C` by cross-validation or rolling forecasts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::augment_with_noise;
use crate::error::{Error, Result};
use crate::estimators::{cv_splits, fit_pseudo_ols, CvConfig};
use crate::linalg::{DenseMatrix, RankTolerance};
use crate::seed::derive_seed;
use crate::util::{lin_space, log_space, mean_and_sd, stable_sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridStyle {
    Linear,
    LogSpaced,
}

/// Candidate `C` values and the noise settings used to evaluate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPlan {
    pub p0: usize,
    pub n: usize,
    pub c_grid: Vec<f64>,
    pub grid_style: GridStyle,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_regenerations")]
    pub regenerations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_regenerations() -> usize {
    20
}

impl AugmentPlan {
    /// `count` values of `C` evenly spaced on `[lo, hi]`.
    pub fn linear(n: usize, p0: usize, lo: f64, hi: f64, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("C grid needs at least one point"));
        }
        let plan = AugmentPlan {
            p0,
            n,
            c_grid: lin_space(lo, hi, count),
            grid_style: GridStyle::Linear,
            noise_sigma: 1.0,
            regenerations: default_regenerations(),
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `count` values of `C` evenly spaced on a log scale over `[lo, hi]`.
    pub fn log_spaced(n: usize, p0: usize, lo: f64, hi: f64, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("C grid needs at least one point"));
        }
        if !(lo > 0.0) {
            return Err(Error::invalid("log-spaced C grid needs a positive lower end"));
        }
        let plan = AugmentPlan {
            p0,
            n,
            c_grid: log_space(lo, hi, count),
            grid_style: GridStyle::LogSpaced,
            noise_sigma: 1.0,
            regenerations: default_regenerations(),
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// 20 log-spaced values whose induced `p` spans `[max(p0, 1.2 n), 50 n]`.
    pub fn default_grid(n: usize, p0: usize, seed: u64) -> Result<Self> {
        if n == 0 || p0 == 0 {
            return Err(Error::invalid("n and p0 must be positive"));
        }
        let scale = n as f64 * (p0 as f64).sqrt();
        let p_lo = (p0 as f64).max(1.2 * n as f64);
        let p_hi = 50.0 * n as f64;
        if p_lo >= p_hi {
            return Self::log_spaced(n, p0, p_lo / scale, p_lo / scale, 1, seed);
        }
        Self::log_spaced(n, p0, p_lo / scale, p_hi / scale, 20, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p0 == 0 {
            return Err(Error::invalid("n and p0 must be positive"));
        }
        if self.c_grid.is_empty() {
            return Err(Error::invalid("C grid is empty"));
        }
        if self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("C grid values must be positive and finite"));
        }
        if self.c_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("C grid must be strictly ascending"));
        }
        if self.regenerations == 0 {
            return Err(Error::invalid("regenerations must be at least 1"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be positive"));
        }
        Ok(())
    }

    /// Total predictor count for each grid value.
    pub fn p_grid(&self) -> Vec<usize> {
        self.c_grid.iter().map(|&c| p_from_c(self, c)).collect()
    }
}

/// `round(C n sqrt(p0))`, never below `p0`.
pub fn p_from_c(plan: &AugmentPlan, c: f64) -> usize {
    let raw = (c * plan.n as f64 * (plan.p0 as f64).sqrt()).round();
    if !(raw > plan.p0 as f64) {
        return plan.p0;
    }
    raw as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    #[serde(rename = "C")]
    pub c: f64,
    pub p: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
}

/// Loss for every candidate and the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub records: Vec<TuneRecord>,
    pub chosen_c: f64,
    pub chosen_p: usize,
}

impl TuneTrace {
    pub const CSV_HEADER: &'static str = "C,p,mean_loss,std_loss,chosen";

    fn from_records(records: Vec<TuneRecord>) -> Self {
        // Strict improvement only, so ties stay with the smaller C.
        let mut best = 0;
        for (i, r) in records.iter().enumerate() {
            if r.mean_loss < records[best].mean_loss {
                best = i;
            }
        }
        TuneTrace {
            chosen_c: records[best].c,
            chosen_p: records[best].p,
            records,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let chosen = u8::from(r.c == self.chosen_c);
            out.push_str(&format!("{},{},{},{},{}\n", r.c, r.p, r.mean_loss, r.std_loss, chosen));
        }
        out
    }
}

fn check_inputs(x0: &DenseMatrix, y: &[f64], plan: &AugmentPlan) -> Result<()> {
    plan.validate()?;
    if x0.cols() != plan.p0 {
        return Err(Error::invalid(format!(
            "design has {} columns but the plan declares p0 = {}",
            x0.cols(),
            plan.p0
        )));
    }
    if x0.rows() != y.len() {
        return Err(Error::invalid("X0 and Y have different row counts"));
    }
    Ok(())
}

/// Seed of the noise block for grid index `i` and regeneration `r`.
pub fn cell_seed(plan: &AugmentPlan, i: usize, r: usize) -> u64 {
    derive_seed(plan.seed, &[i as u64, r as u64])
}

fn squared_error(pred: &[f64], truth: &[f64]) -> f64 {
    stable_sum(pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)))
}

/// Cross-validated pseudo-OLS loss for each `C`. Every `(C, r)` cell gets
/// its own noise block; the row splits are shared by all cells.
pub fn tune_c_kfold(x0: &DenseMatrix, y: &[f64], plan: &AugmentPlan, cv: &CvConfig) -> Result<TuneTrace> {
    check_inputs(x0, y, plan)?;
    let splits = cv_splits(x0.rows(), cv)?;
    let p_grid = plan.p_grid();
    let cells: Vec<(usize, usize)> = (0..p_grid.len())
        .flat_map(|i| (0..plan.regenerations).map(move |r| (i, r)))
        .collect();
    let losses: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(i, r)| -> Result<Vec<f64>> {
            let xa = augment_with_noise(x0, p_grid[i] - plan.p0, plan.noise_sigma, cell_seed(plan, i, r))?;
            splits
                .iter()
                .map(|s| {
                    let xt = xa.select_rows(&s.train);
                    let yt: Vec<f64> = s.train.iter().map(|&k| y[k]).collect();
                    let fit = fit_pseudo_ols(&xt, &yt, RankTolerance::default())?;
                    let pred = fit.predict(&xa.select_rows(&s.test))?;
                    let truth: Vec<f64> = s.test.iter().map(|&k| y[k]).collect();
                    Ok(squared_error(&pred, &truth) / truth.len() as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records = (0..p_grid.len())
        .map(|i| {
            let vals: Vec<f64> = losses[i * plan.regenerations..(i + 1) * plan.regenerations]
                .iter()
                .flatten()
                .copied()
                .collect();
            let (m, s) = mean_and_sd(&vals);
            TuneRecord {
                c: plan.c_grid[i],
                p: p_grid[i],
                mean_loss: m,
                std_loss: s,
            }
        })
        .collect();
    Ok(TuneTrace::from_records(records))
}

/// Squared one-step errors of rolling pseudo-OLS fits: row `t` is predicted
/// from a fit on rows `t - window .. t`.
pub(crate) fn rolling_errors(x: &DenseMatrix, y: &[f64], window: usize) -> Result<Vec<f64>> {
    (window..x.rows())
        .map(|t| {
            let rows: Vec<usize> = (t - window..t).collect();
            let yt: Vec<f64> = rows.iter().map(|&k| y[k]).collect();
            let fit = fit_pseudo_ols(&x.select_rows(&rows), &yt, RankTolerance::default())?;
            let e = y[t] - fit.predict_row(&x.row(t))?;
            Ok(e * e)
        })
        .collect()
}

/// Rolling-window loss for each `C`; the chosen `C` minimizes the squared
/// forecast errors summed over all regenerations and origins.
pub fn tune_c_timeseries(x0: &DenseMatrix, y: &[f64], plan: &AugmentPlan, window: usize) -> Result<TuneTrace> {
    check_inputs(x0, y, plan)?;
    if window < 2 || window >= x0.rows() {
        return Err(Error::invalid(format!(
            "window must lie in 2..{} for {} rows, got {window}",
            x0.rows(),
            x0.rows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Y has non-finite entries"));
    }
    let p_grid = plan.p_grid();
    let cells: Vec<(usize, usize)> = (0..p_grid.len())
        .flat_map(|i| (0..plan.regenerations).map(move |r| (i, r)))
        .collect();
    let per_cell: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(i, r)| {
            let xa = augment_with_noise(x0, p_grid[i] - plan.p0, plan.noise_sigma, cell_seed(plan, i, r))?;
            rolling_errors(&xa, y, window)
        })
        .collect::<Result<_>>()?;
    let records = (0..p_grid.len())
        .map(|i| {
            let block = &per_cell[i * plan.regenerations..(i + 1) * plan.regenerations];
            let count = block.iter().map(|v| v.len()).sum::<usize>() as f64;
            let total = stable_sum(block.iter().flatten().copied());
            let per_r: Vec<f64> = block
                .iter()
                .map(|v| stable_sum(v.iter().copied()) / v.len() as f64)
                .collect();
            let (_, sd) = mean_and_sd(&per_r);
            TuneRecord {
                c: plan.c_grid[i],
                p: p_grid[i],
                mean_loss: total / count,
                std_loss: sd,
            }
        })
        .collect();
    Ok(TuneTrace::from_records(records))
}

/// Appends `chosen_p - p0` noise columns spanning the training and new rows,
/// fits pseudo-OLS on the training rows and predicts the new ones.
pub fn forecast_with_augmentation(
    x0_train: &DenseMatrix,
    y_train: &[f64],
    x0_new: &DenseMatrix,
    chosen_p: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    forecast_with_augmentation_sigma(x0_train, y_train, x0_new, chosen_p, 1.0, seed)
}

pub fn forecast_with_augmentation_sigma(
    x0_train: &DenseMatrix,
    y_train: &[f64],
    x0_new: &DenseMatrix,
    chosen_p: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let p0 = x0_train.cols();
    if x0_new.cols() != p0 {
        return Err(Error::invalid(format!(
            "new rows have {} columns, training rows have {p0}",
            x0_new.cols()
        )));
    }
    if x0_train.rows() != y_train.len() {
        return Err(Error::invalid("training X and Y have different row counts"));
    }
    if chosen_p < p0 {
        return Err(Error::invalid(format!("chosen p = {chosen_p} is below p0 = {p0}")));
    }
    let n = x0_train.rows();
    let all = augment_with_noise(&x0_train.vstack(x0_new)?, chosen_p - p0, sigma, seed)?;
    let train: Vec<usize> = (0..n).collect();
    let new: Vec<usize> = (n..all.rows()).collect();
    let fit = fit_pseudo_ols(&all.select_rows(&train), y_train, RankTolerance::default())?;
    fit.predict(&all.select_rows(&new))
}
