//! Latent-factor data generating process.
//!
//! ```text
//! y_t     = rho' f_t + eps_t
//! x_{i,t} = lambda_i' f_t + u_{i,t},   lambda_i = lambda_{i,0} * p0^(-tau) for i < p0, else 0
//! ```
//!
//! All primitives are standard normal; `sigma_eps` and `sigma_u` only scale.
//! Each loading row, each idiosyncratic column, the factor path and the
//! outcome noise come from their own generator stream, so a design with `p`
//! columns is exactly the leading `p` columns of a wider design with the same
//! `p0`, `tau` and seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::seed::{self, derive_seed, normal_stream};

/// Full parameterization of the simulated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorModelSpec {
    pub n: usize,
    pub p: usize,
    pub p0: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub tau: f64,
    pub rho: Vec<f64>,
    pub sigma_eps: f64,
    pub sigma_u: f64,
    pub loading_seed: u64,
    pub noise_seed: u64,
}

impl FactorModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.k > self.p0 {
            return Err(Error::invalid(format!("K = {} exceeds p0 = {}", self.k, self.p0)));
        }
        if self.p0 > self.p {
            return Err(Error::invalid(format!("p0 = {} exceeds p = {}", self.p0, self.p)));
        }
        if !(0.0..=0.5).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1/2], got {}", self.tau)));
        }
        if self.rho.len() != self.k {
            return Err(Error::invalid(format!(
                "rho has {} entries but K = {}",
                self.rho.len(),
                self.k
            )));
        }
        if self.rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rho has non-finite entries"));
        }
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::invalid("sigma_eps must be positive"));
        }
        if !(self.sigma_u > 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::invalid("sigma_u must be positive"));
        }
        Ok(())
    }

    /// Same design with `p` total predictors and `p0` informative ones.
    pub fn with_dims(&self, p: usize, p0: usize) -> Self {
        FactorModelSpec {
            p,
            p0,
            ..self.clone()
        }
    }

    /// Loading multiplier `p0^(-tau)`.
    pub fn loading_scale(&self) -> f64 {
        (self.p0 as f64).powf(-self.tau)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One in-sample draw with its latent pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSample {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    /// n x K.
    pub factors: DenseMatrix,
    /// p x K; rows at or beyond p0 are zero.
    pub loadings: DenseMatrix,
    /// n x p.
    pub idiosyncratic: DenseMatrix,
}

/// Out-of-sample draw from the same design.
#[derive(Debug, Clone, PartialEq)]
pub struct OosDraw {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    pub factors: DenseMatrix,
}

/// Loading matrix of the spec (p x K). Row `i < p0` is drawn from stream `i`
/// of `loading_seed`.
pub fn loadings(spec: &FactorModelSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    Ok(loadings_unchecked(spec))
}

fn loadings_unchecked(spec: &FactorModelSpec) -> DenseMatrix {
    let (p, k) = (spec.p, spec.k);
    let scale = spec.loading_scale();
    let mut values = vec![0.0; p * k];
    for i in 0..spec.p0 {
        let row = normal_stream(spec.loading_seed, i as u64, k, scale);
        for (c, v) in row.into_iter().enumerate() {
            values[c * p + i] = v;
        }
    }
    DenseMatrix::from_column_major(p, k, values).expect("finite loadings")
}

fn draw_rows(
    spec: &FactorModelSpec,
    loadings: &DenseMatrix,
    rows: usize,
    seed: u64,
) -> (DenseMatrix, Vec<f64>, DenseMatrix, DenseMatrix) {
    let (p, k) = (spec.p, spec.k);
    // Factor path: row-major within one stream so prefixes in t are stable.
    let f_rowmajor = normal_stream(seed, seed::STREAM_FACTORS, rows * k, 1.0);
    let mut f_values = vec![0.0; rows * k];
    for t in 0..rows {
        for c in 0..k {
            f_values[c * rows + t] = f_rowmajor[t * k + c];
        }
    }
    let factors = DenseMatrix::from_column_major(rows, k, f_values).expect("finite");

    let eps = normal_stream(seed, seed::STREAM_OUTCOME_NOISE, rows, spec.sigma_eps);
    let y: Vec<f64> = (0..rows)
        .map(|t| {
            (0..k)
                .map(|c| factors.get(t, c) * spec.rho[c])
                .sum::<f64>()
                + eps[t]
        })
        .collect();

    let mut u_values = Vec::with_capacity(rows * p);
    for j in 0..p {
        u_values.extend(normal_stream(seed, j as u64, rows, spec.sigma_u));
    }
    let idio = DenseMatrix::from_column_major(rows, p, u_values).expect("finite");

    let common = factors.as_matrix() * loadings.as_matrix().transpose();
    let x = DenseMatrix::from(common + idio.as_matrix());
    (x, y, factors, idio)
}

/// In-sample draw of `spec.n` rows.
pub fn draw_sample(spec: &FactorModelSpec) -> Result<SimulatedSample> {
    spec.validate()?;
    let lam = loadings_unchecked(spec);
    let (x, y, factors, idiosyncratic) = draw_rows(spec, &lam, spec.n, spec.noise_seed);
    Ok(SimulatedSample {
        x,
        y,
        factors,
        loadings: lam,
        idiosyncratic,
    })
}

/// `count` out-of-sample rows. The generator is keyed by `seed` under a
/// separate domain tag, so it never collides with in-sample draws.
pub fn draw_oos(spec: &FactorModelSpec, count: usize, seed: u64) -> Result<OosDraw> {
    spec.validate()?;
    let lam = loadings_unchecked(spec);
    let (x, y, factors, _) = draw_rows(spec, &lam, count, derive_seed(seed, &[seed::TAG_OOS]));
    Ok(OosDraw { x, y, factors })
}

/// `rows x cols` block of N(0, sigma^2) noise; column `j` is stream `j` of
/// the augmentation seed.
pub fn noise_block(rows: usize, cols: usize, sigma: f64, seed: u64) -> Result<DenseMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be positive, got {sigma}")));
    }
    let base = derive_seed(seed, &[seed::TAG_AUGMENT]);
    let mut values = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        values.extend(normal_stream(base, j as u64, rows, sigma));
    }
    DenseMatrix::from_column_major(rows, cols, values)
}

/// Appends `extra` columns of i.i.d. N(0, sigma^2) noise to `x`.
pub fn augment_with_noise(x: &DenseMatrix, extra: usize, sigma: f64, seed: u64) -> Result<DenseMatrix> {
    if extra == 0 {
        return Ok(x.clone());
    }
    x.hstack(&noise_block(x.rows(), extra, sigma, seed)?)
}

/// How many of the first `p` predictors are informative when a design is
/// swept over `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum P0Rule {
    /// `min(p, spec.p0)`, loadings scaled by `spec.p0^(-tau)`; designs for
    /// different `p` are nested column prefixes of one draw.
    Capped,
    /// `max(K, round(fraction * p))`, a fresh design per `p`.
    Fraction(f64),
}

impl P0Rule {
    pub fn informative(self, spec: &FactorModelSpec, p: usize) -> usize {
        match self {
            P0Rule::Capped => spec.p0.min(p),
            P0Rule::Fraction(f) => ((f * p as f64).round() as usize).clamp(spec.k, p.max(spec.k)),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            P0Rule::Capped => Ok(()),
            P0Rule::Fraction(f) if f > 0.0 && f <= 1.0 => Ok(()),
            P0Rule::Fraction(f) => Err(Error::invalid(format!("p0 fraction must lie in (0, 1], got {f}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(n: usize, p: usize, p0: usize, k: usize, tau: f64) -> FactorModelSpec {
        FactorModelSpec {
            n,
            p,
            p0,
            k,
            tau,
            rho: vec![1.0; k],
            sigma_eps: 1.0,
            sigma_u: 1.0,
            loading_seed: 11,
            noise_seed: 22,
        }
    }

    #[test]
    fn validation() {
        assert!(spec(10, 5, 0, 1, 0.0).validate().is_err());
        assert!(spec(10, 5, 6, 1, 0.0).validate().is_err());
        assert!(spec(10, 5, 5, 1, 0.6).validate().is_err());
        let mut s = spec(10, 5, 5, 2, 0.0);
        s.rho = vec![1.0];
        assert!(s.validate().is_err());
        s = spec(10, 5, 5, 1, 0.0);
        s.sigma_u = 0.0;
        assert!(s.validate().is_err());
        assert!(spec(10, 5, 5, 1, 0.5).validate().is_ok());
    }

    #[test]
    fn json_keys_are_exact() {
        let s = spec(10, 5, 3, 2, 0.25);
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["K", "loading_seed", "n", "noise_seed", "p", "p0", "rho", "sigma_eps", "sigma_u", "tau"]
        );
        assert_eq!(FactorModelSpec::from_json(&s.to_json().unwrap()).unwrap(), s);
        assert!(FactorModelSpec::from_json(r#"{"n":1}"#).is_err());
    }

    #[test]
    fn identity_x_equals_f_lambda_plus_u() {
        let s = draw_sample(&spec(20, 15, 8, 3, 0.25)).unwrap();
        let rebuilt = s.factors.as_matrix() * s.loadings.as_matrix().transpose() + s.idiosyncratic.as_matrix();
        assert_eq!(&rebuilt, s.x.as_matrix());
        for i in 8..15 {
            for c in 0..3 {
                assert_eq!(s.loadings.get(i, c), 0.0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let sp = spec(12, 9, 4, 2, 0.0);
        assert_eq!(draw_sample(&sp).unwrap(), draw_sample(&sp).unwrap());
        assert_eq!(draw_oos(&sp, 5, 3).unwrap(), draw_oos(&sp, 5, 3).unwrap());
    }

    #[test]
    fn narrower_design_is_a_column_prefix() {
        let wide = draw_sample(&spec(10, 30, 6, 2, 0.25)).unwrap();
        let narrow = draw_sample(&spec(10, 12, 6, 2, 0.25)).unwrap();
        assert_eq!(narrow.x, wide.x.leading_columns(12));
        assert_eq!(narrow.y, wide.y);
    }

    #[test]
    fn oos_shapes_and_independence() {
        let sp = spec(10, 7, 4, 2, 0.0);
        let o = draw_oos(&sp, 50, sp.noise_seed).unwrap();
        assert_eq!((o.x.rows(), o.x.cols()), (50, 7));
        let e = draw_oos(&sp, 0, 1).unwrap();
        assert_eq!((e.x.rows(), e.x.cols(), e.y.len()), (0, 7, 0));
        let ins = draw_sample(&sp).unwrap();
        assert_ne!(o.y[..10], ins.y[..]);
    }

    #[test]
    fn augmentation_semantics() {
        let x = DenseMatrix::from_column_major(5, 2, (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(augment_with_noise(&x, 0, 1.0, 1).unwrap(), x);
        let a = augment_with_noise(&x, 3, 1.0, 1).unwrap();
        assert_eq!((a.rows(), a.cols()), (5, 5));
        assert_eq!(a.leading_columns(2), x);
        assert_eq!(a, augment_with_noise(&x, 3, 1.0, 1).unwrap());
        assert!(augment_with_noise(&x, 3, 0.0, 1).is_err());
    }

    #[test]
    fn p0_rules() {
        let s = spec(100, 1000, 90, 3, 0.0);
        assert_eq!(P0Rule::Capped.informative(&s, 50), 50);
        assert_eq!(P0Rule::Capped.informative(&s, 500), 90);
        assert_eq!(P0Rule::Fraction(0.5).informative(&s, 100), 50);
        assert_eq!(P0Rule::Fraction(0.5).informative(&s, 2), 3);
        assert!(P0Rule::Fraction(1.5).validate().is_err());
    }
}
