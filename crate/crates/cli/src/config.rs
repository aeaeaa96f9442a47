use std::path::PathBuf;

use ridgeless::augment::GridStyle;
use ridgeless::dataio::TransformSpec;
use ridgeless::estimators::CvConfig;
use ridgeless::harness::{MethodSpec, Protocol, SimulationSweep};
use ridgeless::theory::RiskCurveConfig;
use serde::{Deserialize, Serialize};

pub type TheoryConfig = RiskCurveConfig;
pub type SimulateConfig = SimulationSweep;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub index: Option<String>,
    #[serde(default)]
    pub transforms: TransformSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TuneMode {
    Kfold {
        #[serde(default)]
        cv: CvConfig,
    },
    Timeseries {
        window: usize,
    },
}

/// C-grid tuning on the leading `train_rows` rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub mode: TuneMode,
    /// Explicit grid; the default log-spaced grid when absent.
    #[serde(default)]
    pub c_grid: Option<Vec<f64>>,
    #[serde(default = "linear")]
    pub grid_style: GridStyle,
    /// Sample size in `p = C n sqrt(p0)`; the training rows (k-fold) or the
    /// window (time series) when absent.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "twenty")]
    pub regenerations: usize,
    #[serde(default = "one")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub train_rows: Option<usize>,
}

fn linear() -> GridStyle {
    GridStyle::Linear
}

fn twenty() -> usize {
    20
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub data: DataSource,
    pub tune: TuneSection,
    #[serde(default)]
    pub seed: u64,
}

/// Total predictor counts for a forecast sweep, given directly or as `C`
/// values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepGrid {
    P(Vec<usize>),
    C { values: Vec<f64>, n: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    pub data: DataSource,
    pub method: MethodSpec,
    pub protocol: Protocol,
    #[serde(default)]
    pub comparators: Vec<MethodSpec>,
    #[serde(default)]
    pub tune: Option<TuneSection>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub grid: Vec<Shape>,
    #[serde(default = "five")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn five() -> usize {
    5
}

/// Written beside every command's outputs.
#[derive(Debug, Serialize)]
pub struct Resolved<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a T,
}
