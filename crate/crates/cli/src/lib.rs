//! Command-line front end of the `bobax` library.
//!
//! The binary is a thin wrapper around [`main_with_args`]; every subcommand
//! is also callable as a function so tests can drive it in-process.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bobax::bench::{run_suite, write_atomic, ProblemSpec, SuiteConfig, SuiteOptions, SuiteOutcome};
use bobax::gp::calibrate_hyperparameters;
use bobax::optimizer::{run, RunResult};
use bobax::rng::{derive_seed, hash_label, stream, Stream};
use bobax::KernelParams;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

mod config;
mod report;

pub use config::{resolve_strategy, RunSpec};
pub use report::{cmd_pdp_report, render_svg, ReportOptions, TargetReport};

/// Bad command-line input; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "bobax", version, about = "Bayesian optimization with partial-dependence-aware acquisition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit kernel hyperparameters for an objective and write them as JSON.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Synthetic objective name, instead of a config file.
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_points: Option<usize>,
        /// Output file.
        #[arg(long, default_value = "kernel.json")]
        out: PathBuf,
    },
    /// Run one optimization and write result.json, trace.csv and archive.csv.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        problem: Option<String>,
        /// Kernel file written by `calibrate`.
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a benchmark suite described by a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Reuse trials whose records already exist.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Partial dependence CSV and SVG for a finished run.
    PdpReport {
        /// A result.json file or the directory containing it.
        result: PathBuf,
        /// Target dimensions, comma separated; repeatable. Defaults to the
        /// run's targets.
        #[arg(long = "target")]
        targets: Vec<String>,
        /// Archive size of the surrogate to report; defaults to the whole
        /// archive.
        #[arg(long)]
        evaluations: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags shared by `run` and `bench`; they take precedence over the config
/// file.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub mc_size: Option<usize>,
    #[arg(long)]
    pub n_path: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub strategy: StrategyFlags,
}

#[derive(Clone, Debug, Default, Args)]
pub struct StrategyFlags {
    /// rs, bo-ei, pvar, lcb, bax, bobax, bo-rs, bobax-prob, eibax or a-bobax.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub pi: Option<f64>,
    /// Anneal the information-gain probability of bobax-prob.
    #[arg(long)]
    pub anneal: bool,
    /// Target confidence half-width w*.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Contents of a kernel file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    #[serde(flatten)]
    pub params: KernelParams,
    pub seed: u64,
    pub n_points: usize,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn calibrate_spec(spec: &RunSpec) -> Result<KernelParams> {
    let objective = spec.problem.instantiate()?;
    // Same stream as `bench` uses for this problem under master seed `spec.seed`.
    let mut rng = stream(derive_seed(spec.seed, &[hash_label(spec.problem.name())]), Stream::Calibration, 0);
    Ok(calibrate_hyperparameters(objective.as_ref(), &spec.calibration, &mut rng)?)
}

/// Calibrates the kernel of `spec`'s objective and writes a [`KernelFile`].
pub fn cmd_calibrate(spec: &RunSpec, out: &Path) -> Result<KernelFile> {
    let params = calibrate_spec(spec)?;
    let file = KernelFile { params, seed: spec.seed, n_points: spec.calibration.n_points };
    ensure_parent(out)?;
    write_atomic(out, &serde_json::to_vec_pretty(&file)?)?;
    Ok(file)
}

/// Runs `spec` and writes its outputs and the effective config to
/// `spec.output_dir` (default `bobax-run`).
pub fn cmd_run(spec: &RunSpec) -> Result<RunResult> {
    let dir = spec.output_dir.clone().unwrap_or_else(|| PathBuf::from("bobax-run"));
    let objective = spec.problem.instantiate()?;
    let kernel = match &spec.kernel {
        Some(k) => k.clone(),
        None => {
            log::info!("calibrating kernel for {}", spec.problem.name());
            calibrate_spec(spec)?
        }
    };
    let config = spec.run_config(objective.space().dim(), kernel.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut effective = spec.clone();
    effective.kernel = Some(kernel);
    effective.output_dir = None;
    write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(&effective)?)?;
    match run(objective.as_ref(), &config) {
        Ok(result) => {
            result.write_to_dir(&dir)?;
            Ok(result)
        }
        Err(failure) => {
            failure.partial.write_to_dir(&dir)?;
            Err(anyhow::Error::new(failure).context(format!("partial results written to {}", dir.display())))
        }
    }
}

/// Reads a suite config and applies command-line flags.
pub fn resolve_suite(path: &Path, workers: Option<usize>, flags: &Overrides) -> Result<SuiteConfig> {
    let mut suite = SuiteConfig::read_json(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = flags.seed {
        suite.master_seed = s;
    }
    if let Some(b) = flags.budget {
        suite.budget = Some(b);
    }
    if let Some(g) = flags.grid_size {
        suite.grid_size = g;
    }
    if let Some(n) = flags.mc_size {
        suite.mc_size = n;
    }
    if let Some(n) = flags.n_path {
        suite.n_path = n;
    }
    if let Some(a) = flags.alpha {
        suite.alpha = a;
    }
    if let Some(t) = flags.strategy.tolerance {
        suite.tolerance = Some(t);
    }
    if let Some(out) = &flags.out {
        suite.output_dir = out.clone();
    }
    if let Some(w) = workers {
        suite.workers = w;
    }
    if flags.strategy.strategy.is_some() {
        let s = resolve_strategy(None, &flags.strategy, flags.alpha)?.expect("strategy given");
        suite.strategies = vec![s];
    }
    Ok(suite)
}

/// Runs a suite; outputs land in `suite.output_dir`.
pub fn cmd_bench(suite: &SuiteConfig, resume: bool) -> Result<SuiteOutcome> {
    Ok(run_suite(suite, SuiteOptions { resume })?)
}

fn parse_targets(raw: &[String]) -> Result<Vec<Vec<usize>>> {
    raw.iter()
        .map(|t| {
            t.split(',')
                .map(|d| d.trim().parse::<usize>().map_err(|_| UsageError(format!("invalid target {t:?}")).into()))
                .collect()
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { config, problem, seed, n_points, out } => {
            let mut spec = RunSpec::resolve(config.as_deref(), problem.as_deref(), &Overrides { seed, ..Default::default() })?;
            if let Some(n) = n_points {
                spec.calibration.n_points = n;
            }
            let file = cmd_calibrate(&spec, &out)?;
            println!("lengthscales {:?}, signal variance {}, nugget {} -> {}", file.params.lengthscales, file.params.signal_variance, file.params.nugget, out.display());
        }
        Command::Run { config, problem, kernel, overrides } => {
            let mut spec = RunSpec::resolve(config.as_deref(), problem.as_deref(), &overrides)?;
            if let Some(path) = kernel {
                let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                let file: KernelParams = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
                spec.kernel = Some(file);
            }
            let result = cmd_run(&spec)?;
            println!(
                "{} on {}: best cost {} after {} evaluations",
                result.strategy,
                result.objective,
                result.archive.best_cost().unwrap_or(f64::NAN),
                result.archive.len()
            );
        }
        Command::Bench { config, workers, resume, overrides } => {
            let suite = resolve_suite(&config, workers, &overrides)?;
            let out = cmd_bench(&suite, resume)?;
            println!(
                "{} trials ({} resumed, {} failed) -> {}",
                out.records.len(),
                out.resumed,
                out.failures,
                suite.output_dir.display()
            );
        }
        Command::PdpReport { result, targets, evaluations, alpha, out } => {
            let options = ReportOptions { targets: Some(parse_targets(&targets)?).filter(|t| !t.is_empty()), evaluations, alpha, out };
            let reports = cmd_pdp_report(&result, &options)?;
            for r in reports {
                println!("{}", r.csv.display());
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the subcommand and returns the process exit code:
/// 0 on success, 2 on usage errors, 1 otherwise.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("BOBAX_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    }
}

impl From<ProblemSpec> for RunSpec {
    fn from(p: ProblemSpec) -> Self {
        RunSpec::new(p)
    }
}
