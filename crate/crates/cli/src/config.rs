use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bobax::bench::ProblemSpec;
use bobax::gp::CalibrationOptions;
use bobax::optimizer::{default_n_init, RunConfig, StrategySpec, BUDGET_PER_DIM};
use bobax::pdp::{SHatMode, DEFAULT_ALPHA, DEFAULT_GRID_SIZE, DEFAULT_MC_SIZE};
use bobax::acquisition::{DEFAULT_CANDIDATES, DEFAULT_N_PATH};
use bobax::KernelParams;
use serde::{Deserialize, Serialize};

use crate::{Overrides, StrategyFlags, UsageError};

fn default_strategy() -> StrategySpec {
    StrategySpec::BoEi
}

fn default_grid() -> usize {
    DEFAULT_GRID_SIZE
}

fn default_mc() -> usize {
    DEFAULT_MC_SIZE
}

fn default_n_path() -> usize {
    DEFAULT_N_PATH
}

fn default_candidates() -> usize {
    DEFAULT_CANDIDATES
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_true() -> bool {
    true
}

/// A single run as read from `--config` and echoed as `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub problem: ProblemSpec,
    #[serde(default = "default_strategy")]
    pub strategy: StrategySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub n_init: Option<usize>,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_mc")]
    pub mc_size: usize,
    #[serde(default = "default_n_path")]
    pub n_path: usize,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_true")]
    pub fast_path: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub s_hat: SHatMode,
    #[serde(default)]
    pub pdp_targets: Option<Vec<Vec<usize>>>,
    /// Frozen kernel parameters; calibrated when absent.
    #[serde(default)]
    pub kernel: Option<KernelParams>,
    #[serde(default)]
    pub calibration: CalibrationOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(problem: ProblemSpec) -> Self {
        serde_json::from_value(serde_json::json!({ "problem": problem })).expect("defaults deserialize")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
    }

    /// File values with command-line flags applied on top.
    pub fn resolve(config: Option<&Path>, problem: Option<&str>, flags: &Overrides) -> Result<Self> {
        let mut spec = match (config, problem) {
            (Some(path), _) => RunSpec::read(path)?,
            (None, Some(name)) => RunSpec::new(ProblemSpec::Synthetic(name.to_string())),
            (None, None) => return Err(UsageError("either --config or --problem is required".into()).into()),
        };
        if let Some(name) = problem {
            spec.problem = ProblemSpec::Synthetic(name.to_string());
        }
        if let Some(s) = flags.seed {
            spec.seed = s;
        }
        if let Some(b) = flags.budget {
            spec.budget = Some(b);
        }
        if let Some(g) = flags.grid_size {
            spec.grid_size = g;
        }
        if let Some(n) = flags.mc_size {
            spec.mc_size = n;
        }
        if let Some(n) = flags.n_path {
            spec.n_path = n;
        }
        if let Some(a) = flags.alpha {
            spec.alpha = a;
        }
        if let Some(out) = &flags.out {
            spec.output_dir = Some(out.clone());
        }
        if let Some(s) = resolve_strategy(Some(&spec.strategy), &flags.strategy, flags.alpha)? {
            spec.strategy = s;
        }
        Ok(spec)
    }

    pub fn run_config(&self, dim: usize, kernel: KernelParams) -> RunConfig {
        let mut c = RunConfig::new(self.strategy.clone(), dim, self.seed);
        c.budget = self.budget.unwrap_or(BUDGET_PER_DIM * dim);
        c.n_init = self.n_init.unwrap_or_else(|| default_n_init(dim));
        c.grid_size = self.grid_size;
        c.mc_size = self.mc_size;
        c.n_path = self.n_path;
        c.n_candidates = self.n_candidates;
        c.fast_path = self.fast_path;
        c.alpha = self.alpha;
        c.s_hat = self.s_hat;
        if let Some(t) = &self.pdp_targets {
            c.pdp_targets = t.clone();
        }
        c.kernel = kernel;
        c
    }
}

fn need<T: Copy>(flag: Option<T>, inherited: Option<T>, name: &str, strategy: &str) -> Result<T> {
    flag.or(inherited).ok_or_else(|| UsageError(format!("--{name} is required for strategy {strategy}")).into())
}

fn unused(flags: &StrategyFlags, allowed: &[&str], strategy: &str) -> Result<()> {
    let given = [
        ("k", flags.k.is_some()),
        ("tau", flags.tau.is_some()),
        ("beta", flags.beta.is_some()),
        ("pi", flags.pi.is_some()),
        ("tolerance", flags.tolerance.is_some()),
        ("anneal", flags.anneal),
    ];
    match given.iter().find(|(n, set)| *set && !allowed.contains(n)) {
        Some((n, _)) => Err(UsageError(format!("--{n} does not apply to strategy {strategy}")).into()),
        None => Ok(()),
    }
}

/// Builds the strategy named by `--strategy`, or applies parameter flags to
/// `base`. Parameters missing from the flags are taken from `base` when it
/// is of the same kind. `alpha` only affects a-BOBAX.
pub fn resolve_strategy(base: Option<&StrategySpec>, flags: &StrategyFlags, alpha: Option<f64>) -> Result<Option<StrategySpec>> {
    let name = match (&flags.strategy, base) {
        (Some(n), _) => n.to_ascii_lowercase().replace('_', "-"),
        (None, Some(b)) => kind_name(b).to_string(),
        (None, None) => return Ok(None),
    };
    let inherited = base.filter(|b| kind_name(b) == name);
    let (bk, btau, bbeta, bpi, btol, balpha) = match inherited {
        Some(StrategySpec::Bobax { k }) | Some(StrategySpec::BoRs { k }) => (Some(*k), None, None, None, None, None),
        Some(StrategySpec::Lcb { tau, .. }) => (None, Some(*tau), None, None, None, None),
        Some(StrategySpec::Eibax { beta }) => (None, None, Some(*beta), None, None, None),
        Some(StrategySpec::BobaxProb { pi, .. }) => (None, None, None, Some(*pi), None, None),
        Some(StrategySpec::ABobax { k, tolerance, alpha, .. }) => (Some(*k), None, None, None, Some(*tolerance), Some(*alpha)),
        _ => (None, None, None, None, None, None),
    };
    let s = match name.as_str() {
        "rs" => {
            unused(flags, &[], &name)?;
            StrategySpec::Rs
        }
        "bo-ei" | "ei" => {
            unused(flags, &[], &name)?;
            StrategySpec::BoEi
        }
        "pvar" => {
            unused(flags, &[], &name)?;
            StrategySpec::Pvar
        }
        "bax" => {
            unused(flags, &[], &name)?;
            StrategySpec::Bax
        }
        "lcb" => {
            unused(flags, &["tau"], &name)?;
            let term = match inherited {
                Some(StrategySpec::Lcb { term, .. }) => *term,
                _ => Default::default(),
            };
            StrategySpec::Lcb { tau: need(flags.tau, btau, "tau", &name)?, term }
        }
        "bobax" => {
            unused(flags, &["k"], &name)?;
            StrategySpec::Bobax { k: need(flags.k, bk, "k", &name)? }
        }
        "bo-rs" => {
            unused(flags, &["k"], &name)?;
            StrategySpec::BoRs { k: need(flags.k, bk, "k", &name)? }
        }
        "bobax-prob" => {
            unused(flags, &["pi", "anneal"], &name)?;
            let anneal = flags.anneal || matches!(inherited, Some(StrategySpec::BobaxProb { anneal: true, .. }));
            StrategySpec::BobaxProb { pi: need(flags.pi, bpi, "pi", &name)?, anneal }
        }
        "eibax" => {
            unused(flags, &["beta"], &name)?;
            StrategySpec::Eibax { beta: need(flags.beta, bbeta, "beta", &name)? }
        }
        "a-bobax" => {
            unused(flags, &["k", "tolerance"], &name)?;
            let reentrant = matches!(inherited, Some(StrategySpec::ABobax { reentrant: true, .. }));
            StrategySpec::ABobax {
                k: need(flags.k, bk, "k", &name)?,
                tolerance: need(flags.tolerance, btol, "tolerance", &name)?,
                alpha: alpha.or(balpha).unwrap_or(DEFAULT_ALPHA),
                reentrant,
            }
        }
        other => {
            return Err(UsageError(format!(
                "unknown strategy {other:?}; expected one of rs, bo-ei, pvar, lcb, bax, bobax, bo-rs, bobax-prob, eibax, a-bobax"
            ))
            .into())
        }
    };
    s.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(Some(s))
}

fn kind_name(s: &StrategySpec) -> &'static str {
    match s {
        StrategySpec::Rs => "rs",
        StrategySpec::BoEi => "bo-ei",
        StrategySpec::Pvar => "pvar",
        StrategySpec::Lcb { .. } => "lcb",
        StrategySpec::Bax => "bax",
        StrategySpec::Bobax { .. } => "bobax",
        StrategySpec::BoRs { .. } => "bo-rs",
        StrategySpec::BobaxProb { .. } => "bobax-prob",
        StrategySpec::Eibax { .. } => "eibax",
        StrategySpec::ABobax { .. } => "a-bobax",
    }
}
