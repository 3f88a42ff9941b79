//! Multi-problem, multi-strategy, multi-seed experiments.
//!
//! Every (problem, strategy, replication) triple is one trial. The run seed
//! depends on the problem and the replication only, so all strategies of a
//! replication share their initial design, Monte-Carlo sample and candidate
//! sets. Trials run in parallel; each one is persisted atomically, which is
//! what makes an interrupted suite resumable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{calibrate_hyperparameters, CalibrationOptions, KernelParams};
use crate::objectives::{synthetic_by_name, ExternalObjective, ExternalSpec, Objective};
use crate::optimizer::{default_n_init, run, RunConfig, RunResult, StrategySpec, BUDGET_PER_DIM};
use crate::pdp::{DEFAULT_ALPHA, DEFAULT_GRID_SIZE, DEFAULT_MC_SIZE};
use crate::rng::{derive_seed, hash_label, stream, Stream};
use crate::stats::two_sided_quantile;

mod metrics;

pub use metrics::{combined_rank, cumulative_regret, mean_metric, relative_metric, simple_regret, Metric, SummaryCell, RELATIVE_FLOOR};

/// Budget fractions at which trials are summarized.
pub const CHECKPOINTS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DL1_BASELINE: &str = "RS";
pub const REGRET_BASELINE: &str = "BO-EI";

/// A benchmark problem: a synthetic function by name, or an external worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Synthetic(String),
    External {
        name: String,
        #[serde(flatten)]
        spec: ExternalSpec,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &str {
        match self {
            ProblemSpec::Synthetic(n) => n,
            ProblemSpec::External { name, .. } => name,
        }
    }

    /// A fresh objective; external problems get their own worker process.
    pub fn instantiate(&self) -> Result<Arc<dyn Objective>> {
        match self {
            ProblemSpec::Synthetic(n) => synthetic_by_name(n),
            ProblemSpec::External { name, spec } => Ok(Arc::new(ExternalObjective::spawn(name.clone(), spec)?)),
        }
    }
}

fn default_grid() -> usize {
    DEFAULT_GRID_SIZE
}

fn default_mc() -> usize {
    DEFAULT_MC_SIZE
}

fn default_n_path() -> usize {
    crate::acquisition::DEFAULT_N_PATH
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_true() -> bool {
    true
}

fn default_workers() -> usize {
    1
}

/// Suite description, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub problems: Vec<ProblemSpec>,
    pub strategies: Vec<StrategySpec>,
    pub n_reps: usize,
    pub master_seed: u64,
    /// Overrides the default budget of `30·d` evaluations.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_mc")]
    pub mc_size: usize,
    #[serde(default = "default_n_path")]
    pub n_path: usize,
    #[serde(default)]
    pub n_candidates: Option<usize>,
    #[serde(default = "default_true")]
    pub fast_path: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Partial dependence targets; defaults to the first input.
    #[serde(default)]
    pub pdp_targets: Option<Vec<Vec<usize>>>,
    /// Half-width used for the time-to-precision column of non-adaptive
    /// strategies.
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Frozen kernel parameters per problem; missing problems are calibrated.
    #[serde(default)]
    pub kernels: BTreeMap<String, KernelParams>,
    #[serde(default)]
    pub calibration: CalibrationOptions,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl SuiteConfig {
    pub fn new(problems: Vec<ProblemSpec>, strategies: Vec<StrategySpec>, n_reps: usize, master_seed: u64, output_dir: PathBuf) -> Self {
        SuiteConfig {
            problems,
            strategies,
            n_reps,
            master_seed,
            budget: None,
            grid_size: DEFAULT_GRID_SIZE,
            mc_size: DEFAULT_MC_SIZE,
            n_path: default_n_path(),
            n_candidates: None,
            fast_path: true,
            alpha: DEFAULT_ALPHA,
            pdp_targets: None,
            tolerance: None,
            kernels: BTreeMap::new(),
            calibration: CalibrationOptions::default(),
            output_dir,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.problems.is_empty() || self.strategies.is_empty() || self.n_reps == 0 {
            return Err(Error::InvalidInput("a suite needs problems, strategies and at least one replication".into()));
        }
        let names: BTreeSet<&str> = self.problems.iter().map(|p| p.name()).collect();
        if names.len() != self.problems.len() {
            return Err(Error::InvalidInput("problem names must be unique".into()));
        }
        let labels: BTreeSet<String> = self.strategies.iter().map(|s| s.label()).collect();
        if labels.len() != self.strategies.len() {
            return Err(Error::InvalidInput("strategy labels must be unique".into()));
        }
        for s in &self.strategies {
            s.validate()?;
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Seed of replication `rep` on `problem`, shared by every strategy.
    pub fn trial_seed(&self, problem: &str, rep: usize) -> u64 {
        derive_seed(self.master_seed, &[hash_label(problem), rep as u64])
    }

    pub fn run_config(&self, strategy: &StrategySpec, dim: usize, kernel: KernelParams, seed: u64) -> RunConfig {
        let mut c = RunConfig::new(strategy.clone(), dim, seed);
        c.budget = self.budget.unwrap_or(BUDGET_PER_DIM * dim);
        c.n_init = default_n_init(dim);
        c.grid_size = self.grid_size;
        c.mc_size = self.mc_size;
        c.n_path = self.n_path;
        if let Some(n) = self.n_candidates {
            c.n_candidates = n;
        }
        c.fast_path = self.fast_path;
        c.alpha = self.alpha;
        if let Some(t) = &self.pdp_targets {
            c.pdp_targets = t.clone();
        }
        c.kernel = kernel;
        c
    }

    fn trial_dir(&self, problem: &str, strategy: &StrategySpec, rep: usize) -> PathBuf {
        self.output_dir
            .join("trials")
            .join(crate::optimizer::sanitize(problem))
            .join(strategy.file_label())
            .join(format!("rep_{rep}"))
    }
}

/// Metrics at one budget checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub fraction: f64,
    /// Archive size at the checkpoint.
    pub evaluations: usize,
    pub d_l1: Vec<Option<f64>>,
    pub rho: Vec<Option<f64>>,
    pub simple_regret: Option<f64>,
    pub cumulative_regret: Option<f64>,
    pub ci_halfwidth: f64,
    /// Wall time spent up to the checkpoint; not part of any CSV output.
    pub wall_ms: f64,
}

/// Summary of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub problem: String,
    pub strategy: String,
    pub rep: usize,
    pub seed: u64,
    pub budget: usize,
    pub n_init: usize,
    pub checkpoints: Vec<CheckpointMetrics>,
    /// First post-initial-design iteration whose mean half-width is within
    /// the tolerance; `None` when never reached or no tolerance applies.
    pub iterations_to_precision: Option<usize>,
    pub error: Option<String>,
}

/// Archive size at budget fraction `f`: `floor(f·budget)`, but never inside
/// the initial design.
pub fn checkpoint_evaluations(fraction: f64, budget: usize, n_init: usize) -> usize {
    ((fraction * budget as f64 + 1e-9).floor() as usize).clamp(n_init, budget)
}

/// First trace row whose mean half-width `q_{1−α/2}·ŝ` is at most `tolerance`.
pub fn iterations_to_precision(result: &RunResult, tolerance: f64, alpha: f64) -> Option<usize> {
    let q = two_sided_quantile(alpha);
    result.trace.iter().position(|row| {
        let (sum, n) = row.curves.iter().flat_map(|c| &c.s_hat).fold((0.0, 0usize), |(s, n), v| (s + q * v, n + 1));
        n > 0 && sum / n as f64 <= tolerance
    })
}

impl TrialRecord {
    pub fn from_run(result: &RunResult, problem: &str, rep: usize, tolerance: Option<f64>, alpha: f64) -> Result<Self> {
        let cfg = &result.config;
        if !result.is_complete() {
            return Err(Error::InvalidInput("cannot summarize an incomplete run".into()));
        }
        let cum = result.optimum.map(|o| cumulative_regret(result.archive.costs(), o));
        let mut checkpoints = Vec::with_capacity(CHECKPOINTS.len());
        for &f in &CHECKPOINTS {
            let e = checkpoint_evaluations(f, cfg.budget, cfg.n_init);
            let row = &result.trace[e - cfg.n_init];
            checkpoints.push(CheckpointMetrics {
                fraction: f,
                evaluations: e,
                d_l1: row.d_l1.clone(),
                rho: row.rho.clone(),
                simple_regret: result.optimum.map(|o| simple_regret(row.incumbent, o)),
                cumulative_regret: cum.as_ref().map(|c| c[e - 1]),
                ci_halfwidth: row.ci_halfwidth,
                wall_ms: result.trace[..=e - cfg.n_init].iter().map(|r| r.wall_ms).sum(),
            });
        }
        let precision = match cfg.strategy {
            StrategySpec::ABobax { tolerance, alpha, .. } => Some((tolerance, alpha)),
            _ => tolerance.map(|t| (t, alpha)),
        };
        Ok(TrialRecord {
            problem: problem.to_string(),
            strategy: result.strategy.clone(),
            rep,
            seed: cfg.seed,
            budget: cfg.budget,
            n_init: cfg.n_init,
            checkpoints,
            iterations_to_precision: precision.and_then(|(t, a)| iterations_to_precision(result, t, a)),
            error: None,
        })
    }

    fn failed(problem: &str, strategy: &StrategySpec, rep: usize, seed: u64, config: Option<&RunConfig>, error: String) -> Self {
        TrialRecord {
            problem: problem.to_string(),
            strategy: strategy.label(),
            rep,
            seed,
            budget: config.map_or(0, |c| c.budget),
            n_init: config.map_or(0, |c| c.n_init),
            checkpoints: Vec::new(),
            iterations_to_precision: None,
            error: Some(error),
        }
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SuiteOptions {
    /// Reuse trial records already on disk instead of recomputing them.
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutcome {
    /// One record per trial in (problem, strategy, replication) order,
    /// failed trials included.
    pub records: Vec<TrialRecord>,
    /// Kernel parameters each problem was run with.
    pub kernels: BTreeMap<String, KernelParams>,
    pub failures: usize,
    pub resumed: usize,
}

/// Calibrated or configured kernel parameters per problem.
pub fn resolve_kernels(config: &SuiteConfig) -> Result<BTreeMap<String, KernelParams>> {
    let mut out = BTreeMap::new();
    for p in &config.problems {
        let name = p.name();
        let params = match config.kernels.get(name) {
            Some(k) => k.clone(),
            None => {
                log::info!("calibrating kernel for {name}");
                let objective = p.instantiate()?;
                let seed = derive_seed(config.master_seed, &[hash_label(name)]);
                calibrate_hyperparameters(objective.as_ref(), &config.calibration, &mut stream(seed, Stream::Calibration, 0))?
            }
        };
        out.insert(name.to_string(), params);
    }
    Ok(out)
}

struct Trial<'a> {
    problem: &'a ProblemSpec,
    strategy: &'a StrategySpec,
    rep: usize,
}

fn execute(config: &SuiteConfig, kernels: &BTreeMap<String, KernelParams>, trial: &Trial<'_>, resume: bool) -> Result<(TrialRecord, bool)> {
    let name = trial.problem.name();
    let dir = config.trial_dir(name, trial.strategy, trial.rep);
    let record_path = dir.join("record.json");
    if resume && record_path.exists() {
        if let Ok(bytes) = fs::read(&record_path) {
            if let Ok(record) = serde_json::from_slice::<TrialRecord>(&bytes) {
                return Ok((record, true));
            }
        }
        log::warn!("unreadable record {}, recomputing", record_path.display());
    }
    fs::create_dir_all(&dir)?;
    let seed = config.trial_seed(name, trial.rep);
    let record = match trial.problem.instantiate() {
        Err(e) => TrialRecord::failed(name, trial.strategy, trial.rep, seed, None, e.to_string()),
        Ok(objective) => {
            let run_config = config.run_config(trial.strategy, objective.space().dim(), kernels[name].clone(), seed);
            match run(objective.as_ref(), &run_config) {
                Ok(result) => {
                    write_atomic(&dir.join("result.json"), &serde_json::to_vec_pretty(&result)?)?;
                    let mut trace = Vec::new();
                    result.write_trace_csv(&mut trace)?;
                    write_atomic(&dir.join("trace.csv"), &trace)?;
                    TrialRecord::from_run(&result, name, trial.rep, config.tolerance, config.alpha)?
                }
                Err(failure) => {
                    log::warn!("{name} / {} / rep {}: {failure}", trial.strategy, trial.rep);
                    write_atomic(&dir.join("result.json"), &serde_json::to_vec_pretty(&failure.partial)?)?;
                    TrialRecord::failed(name, trial.strategy, trial.rep, seed, Some(&run_config), failure.to_string())
                }
            }
        }
    };
    write_atomic(&record_path, &serde_json::to_vec_pretty(&record)?)?;
    Ok((record, false))
}

/// Runs every (problem × strategy × replication) trial and writes all suite
/// outputs into `config.output_dir`.
pub fn run_suite(config: &SuiteConfig, options: SuiteOptions) -> Result<SuiteOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let kernels = resolve_kernels(config)?;
    let mut snapshot = config.clone();
    snapshot.kernels = kernels.clone();
    write_atomic(&config.output_dir.join("config.json"), &serde_json::to_vec_pretty(&snapshot)?)?;

    let trials: Vec<Trial<'_>> = config
        .problems
        .iter()
        .flat_map(|p| config.strategies.iter().flat_map(move |s| (0..config.n_reps).map(move |rep| Trial { problem: p, strategy: s, rep })))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(TrialRecord, bool)>> =
        pool.install(|| trials.par_iter().map(|t| execute(config, &kernels, t, options.resume)).collect());
    let mut records = Vec::with_capacity(results.len());
    let mut resumed = 0;
    for r in results {
        let (record, reused) = r?;
        resumed += usize::from(reused);
        records.push(record);
    }
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        log::warn!("{failures} of {} trials failed and are excluded from the summaries", records.len());
    }
    write_outputs(config, &records)?;
    Ok(SuiteOutcome { records, kernels, failures, resumed })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn percent(f: f64) -> String {
    format!("{}", (f * 100.0).round() as u32)
}

/// Long-format CSV: one row per (trial, checkpoint, metric, target).
pub fn write_records_csv<W: Write>(records: &[TrialRecord], pdp_targets: &[Vec<usize>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["problem", "strategy", "rep", "seed", "checkpoint", "evaluations", "metric", "target", "value"])?;
    let labels: Vec<String> = pdp_targets.iter().map(|t| crate::optimizer::target_label(t)).collect();
    for r in records {
        let head = [r.problem.clone(), r.strategy.clone(), r.rep.to_string(), r.seed.to_string()];
        let mut row = |cp: String, evals: String, metric: &str, target: &str, value: String| {
            let mut rec: Vec<String> = head.to_vec();
            rec.extend([cp, evals, metric.to_string(), target.to_string(), value]);
            w.write_record(&rec)
        };
        if let Some(e) = &r.error {
            row(String::new(), String::new(), "failed", "", e.replace('\n', " "))?;
            continue;
        }
        for c in &r.checkpoints {
            let cp = percent(c.fraction);
            let ev = c.evaluations.to_string();
            for (l, v) in labels.iter().zip(&c.d_l1) {
                row(cp.clone(), ev.clone(), "d_l1", l, cell(*v))?;
            }
            for (l, v) in labels.iter().zip(&c.rho) {
                row(cp.clone(), ev.clone(), "rho", l, cell(*v))?;
            }
            row(cp.clone(), ev.clone(), "simple_regret", "", cell(c.simple_regret))?;
            row(cp.clone(), ev.clone(), "cumulative_regret", "", cell(c.cumulative_regret))?;
            row(cp.clone(), ev.clone(), "ci_halfwidth", "", c.ci_halfwidth.to_string())?;
        }
        row(String::new(), String::new(), "iterations_to_precision", "", r.iterations_to_precision.map(|v| v.to_string()).unwrap_or_default())?;
    }
    w.flush()?;
    Ok(())
}

/// Summary table with one row per (strategy, checkpoint) in suite order.
pub fn write_summary_csv<W: Write>(strategies: &[String], cells: Option<&[SummaryCell]>, value_name: &str, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "checkpoint", value_name, &format!("{value_name}_by_problem"), "n", "n_fallback"])?;
    for s in strategies {
        for (cp, f) in CHECKPOINTS.iter().enumerate() {
            let found = cells.and_then(|c| c.iter().find(|x| &x.strategy == s && x.checkpoint == cp));
            w.write_record([
                s.clone(),
                percent(*f),
                cell(found.and_then(|c| c.mean)),
                cell(found.and_then(|c| c.mean_by_problem)),
                found.map_or(0, |c| c.n).to_string(),
                found.map_or(0, |c| c.n_fallback).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(config: &SuiteConfig, records: &[TrialRecord]) -> Result<()> {
    let out = &config.output_dir;
    let targets = config.pdp_targets.clone().unwrap_or_else(|| vec![vec![0]]);
    let mut buf = Vec::new();
    write_records_csv(records, &targets, &mut buf)?;
    write_atomic(&out.join("records.csv"), &buf)?;

    let labels: Vec<String> = config.strategies.iter().map(|s| s.label()).collect();
    let summaries = [
        ("summary_dl1.csv", "relative_d_l1", relative_metric(records, Metric::DL1, DL1_BASELINE)),
        ("summary_regret.csv", "relative_regret", relative_metric(records, Metric::SimpleRegret, REGRET_BASELINE)),
        ("summary_combined_rank.csv", "combined_rank", Ok(combined_rank(records))),
        ("summary_mean_dl1.csv", "mean_d_l1", Ok(mean_metric(records, Metric::DL1))),
        ("summary_mean_regret.csv", "mean_regret", Ok(mean_metric(records, Metric::SimpleRegret))),
    ];
    for (file, name, cells) in summaries {
        let cells = match cells {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("{file}: {e}");
                None
            }
        };
        let mut buf = Vec::new();
        write_summary_csv(&labels, cells.as_deref(), name, &mut buf)?;
        write_atomic(&out.join(file), &buf)?;
    }
    Ok(())
}
