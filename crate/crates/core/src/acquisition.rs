//! Acquisition functions and the random-candidate acquisition optimizer.
//!
//! Every score is "larger is better". Minimization is assumed throughout, so
//! the incumbent is the lowest observed cost.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::gp::{GpModel, TargetTransform};
use crate::pdp::ExecutionPath;
use crate::space::SearchSpace;
use crate::stats::{normal_cdf, normal_pdf};

/// Number of random candidates scored per proposal.
pub const DEFAULT_CANDIDATES: usize = 1500;
/// Posterior samples of the execution path used by the general estimator.
pub const DEFAULT_N_PATH: usize = 20;
/// Standardized variances are floored here before taking logs; equal to the
/// first jitter step, i.e. the resolution of a jittered conditioning.
pub const VARIANCE_FLOOR: f64 = 1e-10;
/// Information gains down to `-EIG_TOLERANCE` are treated as rounding noise.
pub const EIG_TOLERANCE: f64 = 1e-9;

const SIGMA_EPS: f64 = 1e-12;

/// Expected improvement over `best` for a Gaussian with the given moments.
pub fn ei_from_moments(mean: f64, sd: f64, best: f64) -> f64 {
    let gap = best - mean;
    if sd < SIGMA_EPS {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

pub fn expected_improvement(model: &GpModel, batch: &DMatrix<f64>, best_cost: f64) -> Result<DVector<f64>> {
    let (mean, var) = model.predict_marginal(batch)?;
    Ok(mean.zip_map(&var, |m, v| ei_from_moments(m, v.sqrt(), best_cost)))
}

/// Which uncertainty term the confidence-bound score weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyTerm {
    #[default]
    Variance,
    StdDev,
}

/// Confidence-bound score `−μ(λ) + τ·σ²(λ)` (or `τ·σ` with [`UncertaintyTerm::StdDev`]).
pub fn lcb_score(model: &GpModel, batch: &DMatrix<f64>, tau: f64, term: UncertaintyTerm) -> Result<DVector<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!("tau must be non-negative, got {tau}")));
    }
    let (mean, var) = model.predict_marginal(batch)?;
    Ok(mean.zip_map(&var, |m, v| {
        let u = match term {
            UncertaintyTerm::Variance => v,
            UncertaintyTerm::StdDev => v.sqrt(),
        };
        -m + tau * u
    }))
}

pub fn posterior_variance_score(model: &GpModel, batch: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(model.predict_marginal(batch)?.1)
}

/// Settings for the information gain about a partial-dependence execution path.
#[derive(Clone, Debug)]
pub struct EigConfig {
    pub n_path: usize,
    pub path: Arc<ExecutionPath>,
    /// Compute the conditioned entropy once from the path locations instead of
    /// re-fitting on `n_path` sampled paths. Both give the same value because
    /// the path locations do not depend on the sampled function values.
    pub fast_path: bool,
}

impl EigConfig {
    pub fn new(path: Arc<ExecutionPath>) -> Self {
        EigConfig { n_path: DEFAULT_N_PATH, path, fast_path: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_path == 0 {
            return Err(Error::InvalidInput("n_path must be at least 1".into()));
        }
        if self.path.is_empty() {
            return Err(Error::InvalidInput("execution path is empty".into()));
        }
        Ok(())
    }
}

/// Entropy terms behind the information gain, per candidate, up to the
/// common `½·log(2πe)` constant.
#[derive(Clone, Debug)]
pub struct EigTerms {
    /// `½·log σ²_T(x)`.
    pub prior: DVector<f64>,
    /// `½·log σ²_{T ∪ path}(x)`, one vector per sampled path (a single vector
    /// on the fast path).
    pub conditioned: Vec<DVector<f64>>,
}

impl EigTerms {
    /// `prior − mean(conditioned)`, before clamping.
    pub fn gain(&self) -> DVector<f64> {
        let k = self.conditioned.len() as f64;
        let mut mean = DVector::zeros(self.prior.len());
        for c in &self.conditioned {
            mean += c;
        }
        &self.prior - mean / k
    }
}

fn half_log(v: f64) -> f64 {
    0.5 * v.max(VARIANCE_FLOOR).ln()
}

/// Entropy terms of the execution-path information gain at each row of `batch`.
pub fn eig_terms<R: Rng + ?Sized>(model: &GpModel, batch: &DMatrix<f64>, cfg: &EigConfig, rng: &mut R) -> Result<EigTerms> {
    cfg.validate()?;
    ensure_dim(model.dim(), cfg.path.dim())?;
    if cfg.fast_path {
        let (prior, cond) = model.standardized_conditioned(cfg.path.points(), batch)?;
        return Ok(EigTerms { prior: prior.map(half_log), conditioned: vec![cond.map(half_log)] });
    }
    let (_, prior) = model.standardized_marginal(batch)?;
    let samples = model.sample_posterior(cfg.path.points(), cfg.n_path, rng)?;
    let t = model.n_train();
    let p = cfg.path.len();
    let d = model.dim();
    let mut inputs = DMatrix::zeros(t + p, d);
    inputs.rows_mut(0, t).copy_from(model.train_inputs());
    inputs.rows_mut(t, p).copy_from(cfg.path.points());
    let mut conditioned = Vec::with_capacity(cfg.n_path);
    for j in 0..cfg.n_path {
        let mut targets = DVector::zeros(t + p);
        targets.rows_mut(0, t).copy_from(model.train_targets());
        targets.rows_mut(t, p).copy_from(&samples.row(j).transpose());
        let augmented = GpModel::fit_data(
            inputs.clone(),
            targets,
            model.params(),
            TargetTransform::Fixed(model.scaling()),
        )?;
        let (_, var) = augmented.standardized_marginal(batch)?;
        conditioned.push(var.map(half_log));
    }
    Ok(EigTerms { prior: prior.map(half_log), conditioned })
}

/// Expected information gain about the execution path, before clamping.
pub fn eig_pdp_unclamped<R: Rng + ?Sized>(
    model: &GpModel,
    batch: &DMatrix<f64>,
    cfg: &EigConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(eig_terms(model, batch, cfg, rng)?.gain())
}

/// Expected information gain about the partial-dependence execution path at
/// each row of `batch`, clamped at zero.
pub fn eig_pdp<R: Rng + ?Sized>(model: &GpModel, batch: &DMatrix<f64>, cfg: &EigConfig, rng: &mut R) -> Result<DVector<f64>> {
    let gain = eig_pdp_unclamped(model, batch, cfg, rng)?;
    if let Some(bad) = gain.iter().find(|&&g| g < -EIG_TOLERANCE) {
        return Err(Error::Numerical(format!("information gain {bad} is negative beyond tolerance")));
    }
    Ok(gain.map(|g| g.max(0.0)))
}

/// Min-max scaling to `[0, 1]`; a constant batch maps to all ones.
pub fn minmax_scale(values: &DVector<f64>) -> DVector<f64> {
    let lo = values.min();
    let hi = values.max();
    if !(hi > lo) {
        return DVector::from_element(values.len(), 1.0);
    }
    values.map(|v| (v - lo) / (hi - lo))
}

/// `EI · scaled_EIG^(β/t)` from precomputed EI and raw EIG values.
pub fn eibax_combine(ei: &DVector<f64>, eig: &DVector<f64>, beta: f64, t: usize) -> DVector<f64> {
    let exponent = beta / t as f64;
    ei.zip_map(&minmax_scale(eig), |e, g| e * g.powf(exponent))
}

/// Multiplicative blend of expected improvement and path information gain,
/// with the gain's influence decaying as `β/t`.
pub fn eibax_score<R: Rng + ?Sized>(
    model: &GpModel,
    batch: &DMatrix<f64>,
    best_cost: f64,
    cfg: &EigConfig,
    beta: f64,
    t: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(beta > 0.0) || t == 0 {
        return Err(Error::InvalidInput(format!("need beta > 0 and t >= 1, got beta={beta}, t={t}")));
    }
    let ei = expected_improvement(model, batch, best_cost)?;
    let eig = eig_pdp(model, batch, cfg, rng)?;
    Ok(eibax_combine(&ei, &eig, beta, t))
}

/// Uniform candidates in internal coordinates, one per row, drawn row-major.
pub fn draw_candidates<R: Rng + ?Sized>(space: &SearchSpace, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = space.dim();
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = rng.random::<f64>();
        }
    }
    m
}

/// Index of the largest finite score; ties go to the lowest index.
pub fn argmax_finite(scores: &DVector<f64>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionChoice {
    /// Winning candidate in internal coordinates.
    pub point: Vec<f64>,
    pub score: f64,
    pub index: usize,
}

/// Scores `n_cand` uniform candidates with `score_fn` and returns the best.
pub fn optimize_acquisition<F, R>(mut score_fn: F, space: &SearchSpace, n_cand: usize, rng: &mut R) -> Result<AcquisitionChoice>
where
    F: FnMut(&DMatrix<f64>) -> Result<DVector<f64>>,
    R: Rng + ?Sized,
{
    if n_cand == 0 {
        return Err(Error::InvalidInput("need at least one candidate".into()));
    }
    let candidates = draw_candidates(space, n_cand, rng);
    let scores = score_fn(&candidates)?;
    ensure_dim(n_cand, scores.len())?;
    let index = argmax_finite(&scores).ok_or_else(|| Error::Optimizer("every candidate scored non-finite".into()))?;
    Ok(AcquisitionChoice { point: candidates.row(index).iter().copied().collect(), score: scores[index], index })
}

#[cfg(test)]
mod tests;
