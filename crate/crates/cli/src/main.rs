use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ridgeless::augment::{p_from_c, tune_c_kfold, tune_c_timeseries, AugmentPlan, TuneTrace};
use ridgeless::dataio::{apply_transforms, load_csv, Dataset};
use ridgeless::harness::{run_dataset_sweep, run_protocol, sweep_csv, DatasetSweep, MethodSpec, Protocol};
use ridgeless::linalg::{min_norm_solve, RankTolerance};
use ridgeless::dgp::noise_block;
use ridgeless::seed::derive_seed;
use ridgeless::theory::risk_curve_with;
use ridgeless::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

mod config;

use config::{
    BenchmarkConfig, DataSource, ForecastConfig, Resolved, SimulateConfig, SweepGrid, TheoryConfig, TuneConfig,
    TuneMode, TuneSection,
};

#[derive(Parser)]
#[command(name = "ridgeless", version, about = "Noise-augmented ridgeless forecasting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for parallel maps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Exact bias/variance curve of pseudo-OLS over a p grid.
    TheoryCurve(Common),
    /// Monte-Carlo forecast sweep on simulated factor data.
    Simulate(Common),
    /// Forecast a CSV dataset under an evaluation protocol.
    Forecast(Common),
    /// Tune the noise multiplier C on a CSV dataset.
    Tune(Common),
    /// Time minimum-norm solves over (n, p) shapes.
    Benchmark(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidInput(_) | Error::Json(_) => CliError::Config(msg),
            Error::Data(_) | Error::Io { .. } | Error::Csv(_) => CliError::Data(msg),
            Error::Numerical(_) | Error::NotConverged { .. } | Error::UndefinedMetric(_) => CliError::Numerical(msg),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write(out: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    write(out, name, &(text + "\n"))
}

fn write_resolved<T: Serialize>(out: &Path, command: &str, seed: u64, config: &T) -> CliResult<()> {
    write_json(out, "resolved_config.json", &Resolved { command, seed, config })
}

fn prepare_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

/// Relative data paths are taken relative to the configuration file.
fn load_data(src: &DataSource, config_path: &Path) -> CliResult<Dataset> {
    let path = if src.path.is_relative() {
        config_path.parent().unwrap_or(Path::new(".")).join(&src.path)
    } else {
        src.path.clone()
    };
    let raw = load_csv(&path, &src.target, src.index.as_deref())?;
    Ok(apply_transforms(&raw, &src.transforms)?)
}

fn cmd_theory_curve(args: &Common) -> CliResult<()> {
    let mut cfg: TheoryConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let curve = risk_curve_with(&cfg)?;
    prepare_out(&args.out)?;
    write(&args.out, "risk_curve.csv", &curve.to_csv())?;
    write_resolved(&args.out, "theory-curve", cfg.seed, &cfg)
}

fn cmd_simulate(args: &Common) -> CliResult<()> {
    let mut cfg: SimulateConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let rows = ridgeless::harness::run_simulation_sweep(&cfg)?;
    prepare_out(&args.out)?;
    write(&args.out, "sweep.csv", &sweep_csv(&rows))?;
    write_resolved(&args.out, "simulate", cfg.seed, &cfg)
}

fn run_tune(data: &Dataset, tune: &TuneSection, seed: u64) -> CliResult<TuneTrace> {
    let rows = tune.train_rows.unwrap_or(data.rows());
    if rows == 0 || rows > data.rows() {
        return Err(CliError::Config(format!(
            "tune.train_rows = {rows} must lie in 1..={}",
            data.rows()
        )));
    }
    let train = data.select_rows(&(0..rows).collect::<Vec<_>>());
    let p0 = data.x.cols();
    let n = tune.n.unwrap_or(match &tune.mode {
        TuneMode::Kfold { .. } => rows,
        TuneMode::Timeseries { window } => *window,
    });
    let mut plan = match &tune.c_grid {
        Some(grid) => AugmentPlan {
            p0,
            n,
            c_grid: grid.clone(),
            grid_style: tune.grid_style,
            noise_sigma: tune.noise_sigma,
            regenerations: tune.regenerations,
            seed,
        },
        None => AugmentPlan::default_grid(n, p0, seed)?,
    };
    plan.noise_sigma = tune.noise_sigma;
    plan.regenerations = tune.regenerations;
    let trace = match &tune.mode {
        TuneMode::Kfold { cv } => tune_c_kfold(&train.x, &train.y, &plan, cv)?,
        TuneMode::Timeseries { window } => tune_c_timeseries(&train.x, &train.y, &plan, *window)?,
    };
    log::info!("chosen C = {} (p = {})", trace.chosen_c, trace.chosen_p);
    Ok(trace)
}

fn cmd_tune(args: &Common) -> CliResult<()> {
    let mut cfg: TuneConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let data = load_data(&cfg.data, &args.config)?;
    let trace = run_tune(&data, &cfg.tune, derive_seed(cfg.seed, &[1]))?;
    prepare_out(&args.out)?;
    write(&args.out, "tune_trace.csv", &trace.to_csv())?;
    write_json(&args.out, "tune.json", &trace)?;
    write_resolved(&args.out, "tune", cfg.seed, &cfg)
}

fn cmd_forecast(args: &Common) -> CliResult<()> {
    let mut cfg: ForecastConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let data = load_data(&cfg.data, &args.config)?;
    if matches!(cfg.protocol, Protocol::RollingWindow { .. } | Protocol::ExpandingWindow { .. })
        && cfg.data.index.is_none()
    {
        return Err(CliError::Data(
            "windowed protocols need time-ordered rows: set data.index".into(),
        ));
    }
    let mut method = cfg.method.clone();
    let trace = match &cfg.tune {
        Some(t) => {
            if t.train_rows.is_none() {
                return Err(CliError::Config("tune.train_rows is required when forecasting".into()));
            }
            let MethodSpec::PseudoOls {
                noise_sigma,
                standardize,
                ..
            } = &method
            else {
                return Err(CliError::Config("tuning applies to the pseudo_ols method only".into()));
            };
            let trace = run_tune(&data, t, derive_seed(cfg.seed, &[1]))?;
            method = MethodSpec::PseudoOls {
                augment_to: Some(trace.chosen_p),
                noise_sigma: *noise_sigma,
                standardize: *standardize,
            };
            Some(trace)
        }
        None => None,
    };
    let run_seed = derive_seed(cfg.seed, &[2]);
    prepare_out(&args.out)?;
    let trace_csv = trace.as_ref().map(TuneTrace::to_csv).unwrap_or_else(|| format!("{}\n", TuneTrace::CSV_HEADER));
    write(&args.out, "tune_trace.csv", &trace_csv)?;

    if let Some(grid) = &cfg.sweep {
        let p0 = data.x.cols();
        let p_grid = match grid {
            SweepGrid::P(v) => v.clone(),
            SweepGrid::C { values, n } => {
                let plan = AugmentPlan {
                    p0,
                    n: *n,
                    c_grid: values.clone(),
                    grid_style: ridgeless::augment::GridStyle::LogSpaced,
                    noise_sigma: 1.0,
                    regenerations: 1,
                    seed: 0,
                };
                plan.validate()?;
                let mut ps: Vec<usize> = values.iter().map(|&c| p_from_c(&plan, c)).collect();
                ps.dedup();
                ps
            }
        };
        let mut methods = vec![method.clone()];
        methods.extend(cfg.comparators.iter().cloned());
        let rows = run_dataset_sweep(
            &data,
            &DatasetSweep {
                p_grid,
                methods,
                protocol: cfg.protocol,
                seed: run_seed,
            },
        )?;
        write(&args.out, "sweep.csv", &sweep_csv(&rows))?;
        let reports: Vec<_> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
        write_json(&args.out, "sweep_reports.json", &reports)?;
    } else {
        let mut report = run_protocol(&data, &method, cfg.protocol, run_seed)?;
        report.tune_trace = trace;
        write(&args.out, "predictions.csv", &report.to_csv())?;
        write_json(&args.out, "report.json", &report)?;
        if !cfg.comparators.is_empty() {
            let mut rows = String::from(ridgeless::harness::SWEEP_CSV_HEADER);
            rows.push('\n');
            rows.push_str(&format!(
                "{},{},{},{}\n",
                report.method,
                report.p,
                report.mse,
                report.oos_r2.map(|v| v.to_string()).unwrap_or_default()
            ));
            for m in &cfg.comparators {
                let r = run_protocol(&data, m, cfg.protocol, run_seed)?;
                rows.push_str(&format!(
                    "{},{},{},{}\n",
                    r.method,
                    r.p,
                    r.mse,
                    r.oos_r2.map(|v| v.to_string()).unwrap_or_default()
                ));
            }
            write(&args.out, "comparison.csv", &rows)?;
        }
    }
    write_resolved(&args.out, "forecast", cfg.seed, &cfg)
}

fn cmd_benchmark(args: &Common) -> CliResult<()> {
    let mut cfg: BenchmarkConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if cfg.grid.is_empty() {
        return Err(CliError::Config("benchmark grid is empty".into()));
    }
    if cfg.runs < 5 {
        return Err(CliError::Config(format!("runs must be at least 5, got {}", cfg.runs)));
    }
    let mut out = String::from("n,p,median_ms\n");
    for (i, shape) in cfg.grid.iter().enumerate() {
        if shape.n == 0 || shape.p == 0 {
            return Err(CliError::Config("benchmark shapes must be nonempty".into()));
        }
        let seed = derive_seed(cfg.seed, &[i as u64]);
        let x = noise_block(shape.n, shape.p, 1.0, seed)?;
        let y: Vec<f64> = x.column(0).to_vec();
        let mut times = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            let t = Instant::now();
            let b = min_norm_solve(&x, &y, RankTolerance::default())?;
            std::hint::black_box(b);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        let med = times[times.len() / 2];
        log::info!("n = {}, p = {}: {med:.2} ms", shape.n, shape.p);
        out.push_str(&format!("{},{},{med:.3}\n", shape.n, shape.p));
    }
    prepare_out(&args.out)?;
    write(&args.out, "timings.csv", &out)?;
    write_resolved(&args.out, "benchmark", cfg.seed, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(k) = cli.workers {
        if k == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::TheoryCurve(a) => cmd_theory_curve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
