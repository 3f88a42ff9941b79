//! The sequential optimization loop and its proposal strategies.
//!
//! A run evaluates a uniform initial design, then proposes one configuration
//! per iteration until the evaluation budget is spent. After every refit it
//! records the incumbent, the partial dependence estimates for all tracked
//! targets and, for objectives with a known closed form, their distance to the
//! ground truth computed on the same grid and Monte-Carlo sample.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    eibax_score, eig_pdp, expected_improvement, lcb_score, optimize_acquisition, posterior_variance_score,
    EigConfig, DEFAULT_CANDIDATES, DEFAULT_N_PATH,
};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::gp::{GpModel, KernelParams};
use crate::objectives::{eval_internal, ground_truth_on_path, Objective};
use crate::pdp::{
    d_l1, estimate_pdp_with, joint_execution_path, spearman_rank_corr, ExecutionPath, McSample, PdpEstimate, SHatMode,
    DEFAULT_ALPHA, DEFAULT_GRID_SIZE, DEFAULT_MC_SIZE,
};
use crate::rng::{derive_seed, stream, Stream};
use crate::space::SearchSpace;
use crate::stats::two_sided_quantile;

mod result;
mod strategy;

pub use result::{Curve, RunFailure, RunResult, TraceRow};
pub use strategy::{ProposalKind, StrategySpec};
pub(crate) use result::target_label;
pub(crate) use strategy::sanitize;

/// Evaluations per input dimension when no budget is given.
pub const BUDGET_PER_DIM: usize = 30;

/// Initial design size for a `dim`-dimensional problem: `max(2·dim, 4)`.
pub fn default_n_init(dim: usize) -> usize {
    (2 * dim).max(4)
}

fn default_true() -> bool {
    true
}

fn default_candidates() -> usize {
    DEFAULT_CANDIDATES
}

/// Everything that determines a run besides the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: StrategySpec,
    /// Total evaluations, initial design included.
    pub budget: usize,
    pub n_init: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub mc_size: usize,
    pub n_path: usize,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_true")]
    pub fast_path: bool,
    pub kernel: KernelParams,
    pub alpha: f64,
    #[serde(default)]
    pub s_hat: SHatMode,
    /// Index sets `S` whose partial dependence is estimated and targeted by
    /// the information gain.
    pub pdp_targets: Vec<Vec<usize>>,
    /// Added to the post-initial-design iteration index before the periodic
    /// strategies take it modulo `k`.
    #[serde(default)]
    pub counter_origin: u64,
}

impl RunConfig {
    /// Defaults for a `dim`-dimensional problem: budget `30·dim`, `G = n =
    /// n_path = 20`, the partial dependence on the first input, and a unit
    /// signal-variance kernel with lengthscale 0.2 in internal coordinates.
    pub fn new(strategy: StrategySpec, dim: usize, seed: u64) -> Self {
        RunConfig {
            strategy,
            budget: BUDGET_PER_DIM * dim,
            n_init: default_n_init(dim),
            seed,
            grid_size: DEFAULT_GRID_SIZE,
            mc_size: DEFAULT_MC_SIZE,
            n_path: DEFAULT_N_PATH,
            n_candidates: DEFAULT_CANDIDATES,
            fast_path: true,
            kernel: KernelParams::isotropic(dim, 0.2, 1.0, 1e-6).expect("default kernel is valid"),
            alpha: DEFAULT_ALPHA,
            s_hat: SHatMode::default(),
            pdp_targets: vec![vec![0]],
            counter_origin: 0,
        }
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        self.strategy.validate()?;
        self.kernel.validate()?;
        if self.kernel.dim() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: self.kernel.dim() });
        }
        if self.n_init == 0 || self.budget <= self.n_init {
            return bad(format!("need budget > n_init >= 1, got budget={} n_init={}", self.budget, self.n_init));
        }
        if self.grid_size < 2 || self.mc_size == 0 || self.n_path == 0 || self.n_candidates == 0 {
            return bad("grid_size must be >= 2 and mc_size, n_path, n_candidates >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.pdp_targets.is_empty() {
            return bad("at least one partial dependence target is required".into());
        }
        for t in &self.pdp_targets {
            if t.is_empty() || t.iter().any(|&j| j >= space.dim()) {
                return bad(format!("invalid partial dependence target {t:?}"));
            }
            let mut sorted = t.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != t.len() {
                return bad(format!("repeated dimension in target {t:?}"));
            }
        }
        Ok(())
    }

    /// Seed of the run's Monte-Carlo sample.
    pub fn mc_seed(&self) -> u64 {
        derive_seed(self.seed, &[Stream::McSample as u64])
    }

    pub fn mc_sample(&self, dim: usize) -> McSample {
        McSample::draw(dim, self.mc_size, self.mc_seed())
    }

    /// The joint execution path over all targets.
    pub fn execution_path(&self, space: &SearchSpace) -> Result<ExecutionPath> {
        joint_execution_path(space, &self.pdp_targets, self.grid_size, &self.mc_sample(space.dim()))
    }

    pub fn iterations(&self) -> usize {
        self.budget - self.n_init
    }
}

/// Evaluates `n_init` uniform points drawn from `rng`.
pub fn initial_design<R: Rng + ?Sized>(objective: &dyn Objective, n_init: usize, rng: &mut R) -> Result<Archive> {
    if n_init == 0 {
        return Err(Error::InvalidInput("n_init must be at least 1".into()));
    }
    let mut archive = Archive::new(objective.space().dim());
    extend_design(objective, &mut archive, n_init, rng)?;
    Ok(archive)
}

fn extend_design<R: Rng + ?Sized>(objective: &dyn Objective, archive: &mut Archive, n: usize, rng: &mut R) -> Result<()> {
    for _ in 0..n {
        let u = objective.space().sample_internal(rng);
        let y = eval_internal(objective, &u)?;
        archive.push(u, y)?;
    }
    Ok(())
}

/// True iff the mean confidence half-width `q_{1−α/2}·ŝ` over all grid points
/// of `estimates` is at most `w_star`.
pub fn check_adaptive_constraint(estimates: &[PdpEstimate], w_star: f64, alpha: f64) -> bool {
    let q = two_sided_quantile(alpha);
    let (sum, count) = estimates.iter().flat_map(|e| &e.s_hat).fold((0.0, 0usize), |(s, c), v| (s + q * v, c + 1));
    count > 0 && sum / count as f64 <= w_star
}

/// State the strategies read when proposing the next configuration.
pub struct ProposalContext<'a> {
    pub space: &'a SearchSpace,
    pub model: &'a GpModel,
    pub archive: &'a Archive,
    /// Post-initial-design iteration, starting at 0.
    pub iteration: usize,
    /// Number of post-initial-design iterations in the run.
    pub total_iterations: usize,
    pub counter_origin: u64,
    /// 1 or 2; only a-BOBAX leaves phase 1.
    pub phase: u8,
    pub eig: &'a EigConfig,
    pub seed: u64,
    pub n_candidates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    /// Internal coordinates.
    pub point: Vec<f64>,
    pub kind: ProposalKind,
    /// Winning acquisition value; `None` for random proposals.
    pub score: Option<f64>,
}

/// The acquisition `strategy` uses at the context's iteration.
pub fn proposal_kind(strategy: &StrategySpec, ctx: &ProposalContext<'_>) -> ProposalKind {
    let t = ctx.iteration as u64 + ctx.counter_origin;
    let periodic = |k: u64| if t % k == 0 { ProposalKind::Eig } else { ProposalKind::Ei };
    match *strategy {
        StrategySpec::Rs => ProposalKind::Random,
        StrategySpec::BoEi => ProposalKind::Ei,
        StrategySpec::Pvar => ProposalKind::Variance,
        StrategySpec::Lcb { .. } => ProposalKind::Lcb,
        StrategySpec::Bax => ProposalKind::Eig,
        StrategySpec::Bobax { k } => periodic(k),
        StrategySpec::BoRs { k } => {
            if (t + 1) % k == 0 {
                ProposalKind::Random
            } else {
                ProposalKind::Ei
            }
        }
        StrategySpec::BobaxProb { pi, anneal } => {
            let pi_t = if anneal { pi * (1.0 - ctx.iteration as f64 / ctx.total_iterations as f64) } else { pi };
            // p lies in (0, 1], so pi = 0 never and pi = 1 always picks the gain.
            let p = 1.0 - stream(ctx.seed, Stream::Coin, ctx.iteration as u64).random::<f64>();
            if p <= pi_t {
                ProposalKind::Eig
            } else {
                ProposalKind::Ei
            }
        }
        StrategySpec::Eibax { .. } => ProposalKind::Eibax,
        StrategySpec::ABobax { k, .. } => {
            if ctx.phase >= 2 {
                ProposalKind::Ei
            } else {
                periodic(k)
            }
        }
    }
}

/// Next configuration under `strategy`.
///
/// Random numbers come from streams keyed by the run seed and iteration, so a
/// proposal can be recomputed from the archive alone.
pub fn propose(strategy: &StrategySpec, ctx: &ProposalContext<'_>) -> Result<Proposal> {
    let kind = proposal_kind(strategy, ctx);
    let it = ctx.iteration as u64;
    if kind == ProposalKind::Random {
        let point = ctx.space.sample_internal(&mut stream(ctx.seed, Stream::RandomProposal, it));
        return Ok(Proposal { point, kind, score: None });
    }
    let best = ctx.archive.best_cost().ok_or_else(|| Error::InvalidInput("archive is empty".into()))?;
    let model = ctx.model;
    let mut path_rng = stream(ctx.seed, Stream::PathSamples, it);
    let score = |batch: &DMatrix<f64>| match (kind, strategy) {
        (ProposalKind::Ei, _) => expected_improvement(model, batch, best),
        (ProposalKind::Variance, _) => posterior_variance_score(model, batch),
        (ProposalKind::Lcb, StrategySpec::Lcb { tau, term }) => lcb_score(model, batch, *tau, *term),
        (ProposalKind::Eig, _) => eig_pdp(model, batch, ctx.eig, &mut path_rng),
        (ProposalKind::Eibax, StrategySpec::Eibax { beta }) => {
            eibax_score(model, batch, best, ctx.eig, *beta, ctx.archive.len(), &mut path_rng)
        }
        _ => unreachable!("proposal kind {kind:?} does not belong to {strategy:?}"),
    };
    let mut cand_rng = stream(ctx.seed, Stream::Candidates, it);
    let choice = optimize_acquisition(score, ctx.space, ctx.n_candidates, &mut cand_rng)?;
    Ok(Proposal { point: choice.point, kind, score: Some(choice.score) })
}

struct Tracker<'a> {
    config: &'a RunConfig,
    path: &'a ExecutionPath,
    truth: Option<&'a [Vec<f64>]>,
}

impl Tracker<'_> {
    fn estimates(&self, model: &GpModel) -> Result<Vec<PdpEstimate>> {
        self.config
            .pdp_targets
            .iter()
            .map(|t| estimate_pdp_with(model, self.path, t, self.config.alpha, self.config.s_hat))
            .collect()
    }

    fn row(&self, iteration: usize, archive: &Archive, estimates: &[PdpEstimate], proposal: ProposalKind, phase: u8) -> Result<TraceRow> {
        let (d, rho) = match self.truth {
            Some(truth) => {
                let mut d = Vec::with_capacity(estimates.len());
                let mut rho = Vec::with_capacity(estimates.len());
                for (e, t) in estimates.iter().zip(truth) {
                    d.push(Some(d_l1(e, t)?));
                    rho.push(if t.len() >= 3 { spearman_rank_corr(e, t)? } else { None });
                }
                (d, rho)
            }
            None => (vec![None; estimates.len()], vec![None; estimates.len()]),
        };
        Ok(TraceRow {
            iteration,
            evaluations: archive.len(),
            incumbent: archive.best_cost().expect("archive is non-empty"),
            proposal,
            phase,
            d_l1: d,
            rho,
            ci_halfwidth: crate::pdp::mean_ci_halfwidth(estimates)?,
            curves: estimates.iter().map(Curve::from_estimate).collect(),
            wall_ms: 0.0,
        })
    }
}

fn update_phase(strategy: &StrategySpec, phase: u8, estimates: &[PdpEstimate]) -> u8 {
    match *strategy {
        StrategySpec::ABobax { tolerance, alpha, reentrant, .. } => {
            if phase >= 2 && !reentrant {
                2
            } else if check_adaptive_constraint(estimates, tolerance, alpha) {
                2
            } else {
                1
            }
        }
        _ => 1,
    }
}

/// Executes one optimization run.
///
/// On an objective or numerical failure the partial result (archive and trace
/// up to the failure) is returned inside the error.
pub fn run(objective: &dyn Objective, config: &RunConfig) -> std::result::Result<RunResult, RunFailure> {
    let space = objective.space().clone();
    let mc = config.mc_sample(space.dim());
    let mut result = RunResult {
        objective: objective.name().to_string(),
        strategy: config.strategy.label(),
        config: config.clone(),
        space: space.clone(),
        archive: Archive::new(space.dim()),
        proposals: Vec::new(),
        mc: mc.clone(),
        trace: Vec::new(),
        final_estimates: Vec::new(),
        ground_truth: None,
        optimum: objective.optimum().map(|o| o.value),
        error: None,
    };
    match run_into(objective, config, &mut result) {
        Ok(()) => Ok(result),
        Err(error) => {
            result.error = Some(error.to_string());
            Err(RunFailure { error, partial: Box::new(result) })
        }
    }
}

fn run_into(objective: &dyn Objective, config: &RunConfig, result: &mut RunResult) -> Result<()> {
    let space = &result.space;
    config.validate(space)?;
    let path = Arc::new(joint_execution_path(space, &config.pdp_targets, config.grid_size, &result.mc)?);
    if objective.has_ground_truth() {
        let truth = (0..path.segments().len()).map(|s| ground_truth_on_path(objective, &path, s)).collect::<Result<Vec<_>>>()?;
        result.ground_truth = Some(truth);
    }
    let eig = EigConfig { n_path: config.n_path, path: Arc::clone(&path), fast_path: config.fast_path };

    let start = Instant::now();
    let design = extend_design(objective, &mut result.archive, config.n_init, &mut stream(config.seed, Stream::InitialDesign, 0));
    result.proposals = vec![ProposalKind::Init; result.archive.len()];
    design?;
    let tracker = Tracker { config, path: &path, truth: result.ground_truth.as_deref() };
    let mut model = GpModel::fit(&result.archive, &config.kernel)?;
    let mut estimates = tracker.estimates(&model)?;
    let mut phase = update_phase(&config.strategy, 1, &estimates);
    let mut row = tracker.row(0, &result.archive, &estimates, ProposalKind::Init, phase)?;
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    result.trace.push(row);

    let total = config.iterations();
    for it in 0..total {
        let start = Instant::now();
        let ctx = ProposalContext {
            space,
            model: &model,
            archive: &result.archive,
            iteration: it,
            total_iterations: total,
            counter_origin: config.counter_origin,
            phase,
            eig: &eig,
            seed: config.seed,
            n_candidates: config.n_candidates,
        };
        let proposal = propose(&config.strategy, &ctx)?;
        log::debug!("{} iteration {it}: {:?} score {:?}", config.strategy, proposal.kind, proposal.score);
        let y = eval_internal(objective, &proposal.point)?;
        result.archive.push(proposal.point, y)?;
        result.proposals.push(proposal.kind);
        model = GpModel::fit(&result.archive, &config.kernel)?;
        estimates = tracker.estimates(&model)?;
        phase = update_phase(&config.strategy, phase, &estimates);
        let mut row = tracker.row(it + 1, &result.archive, &estimates, proposal.kind, phase)?;
        row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        result.trace.push(row);
    }
    result.final_estimates = estimates;
    Ok(())
}

#[cfg(test)]
mod tests;
