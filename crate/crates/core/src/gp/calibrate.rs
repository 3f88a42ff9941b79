//! One-off kernel hyperparameter calibration.
//!
//! Hyperparameters are fitted once per objective by maximum likelihood on a
//! uniform random sample and then frozen for every run, strategy and seed of
//! an experiment. The optimizer is a multi-start coordinate search over the
//! log-parameters inside fixed bounds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{lml_from_parts, KernelParams, TargetScaling};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::objectives::{eval_internal, Objective};

/// Box constraints for the likelihood search. Lengthscales are in unit-cube
/// units, variances in standardized target units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBounds {
    pub lengthscale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub nugget: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds { lengthscale: (1e-2, 1e1), signal_variance: (1e-2, 1e2), nugget: (1e-8, 1e-2) }
    }
}

impl ParamBounds {
    /// Bounds on the log-parameter vector `[log ℓ₁ … log ℓ_d, log σ², log ν]`.
    pub fn log_box(&self, dim: usize) -> Vec<(f64, f64)> {
        let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
        let mut out = vec![ln(self.lengthscale); dim];
        out.push(ln(self.signal_variance));
        out.push(ln(self.nugget));
        out
    }

    /// `params` with every entry clamped into the bounds.
    pub fn clamp(&self, params: KernelParams) -> KernelParams {
        let c = |v: f64, (a, b): (f64, f64)| v.clamp(a, b);
        KernelParams {
            lengthscales: params.lengthscales.iter().map(|&l| c(l, self.lengthscale)).collect(),
            signal_variance: c(params.signal_variance, self.signal_variance),
            nugget: c(params.nugget, self.nugget),
        }
    }

    pub fn params_from_log(theta: &[f64]) -> KernelParams {
        let d = theta.len() - 2;
        KernelParams {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
            nugget: theta[d + 1].exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub n_points: usize,
    pub restarts: usize,
    pub bounds: ParamBounds,
    /// Coordinate steps (log units) below which a restart stops.
    pub step_tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            n_points: 200,
            restarts: 20,
            bounds: ParamBounds::default(),
            step_tolerance: 1e-3,
            max_sweeps: 200,
        }
    }
}

/// Evaluates `objective` on `options.n_points` uniform configurations and
/// returns the likelihood-maximizing kernel parameters for that sample.
pub fn calibrate_hyperparameters<R: Rng + ?Sized>(
    objective: &dyn Objective,
    options: &CalibrationOptions,
    rng: &mut R,
) -> Result<KernelParams> {
    if options.n_points == 0 {
        return Err(Error::InvalidInput("calibration needs at least one point".into()));
    }
    let space = objective.space();
    let mut archive = Archive::new(space.dim());
    for _ in 0..options.n_points {
        let u = space.sample_internal(rng);
        let y = eval_internal(objective, &u)?;
        archive.push(u, y)?;
    }
    maximize_likelihood(&archive, options, rng)
}

/// Multi-start coordinate search for the kernel parameters maximizing the
/// log marginal likelihood of the archive's standardized targets.
pub fn maximize_likelihood<R: Rng + ?Sized>(
    archive: &Archive,
    options: &CalibrationOptions,
    rng: &mut R,
) -> Result<KernelParams> {
    if archive.is_empty() {
        return Err(Error::InvalidInput("cannot calibrate on an empty archive".into()));
    }
    let inputs = archive.inputs();
    let scaling = TargetScaling::standardizing(archive.costs());
    let y = archive.targets().map(|v| scaling.forward(v));
    let bounds = options.bounds.log_box(archive.dim());

    let mut best: Option<(f64, Vec<f64>)> = None;
    for restart in 0..options.restarts.max(1) {
        let start: Vec<f64> = if restart == 0 {
            bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect()
        } else {
            bounds.iter().map(|&(a, b)| rng.random_range(a..=b)).collect()
        };
        let (value, theta) = coordinate_search(&inputs, &y, &bounds, start, options);
        if best.as_ref().map_or(true, |(v, _)| value > *v) {
            best = Some((value, theta));
        }
    }
    match best {
        Some((v, theta)) if v.is_finite() => Ok(options.bounds.clamp(ParamBounds::params_from_log(&theta))),
        _ => Err(Error::Numerical("likelihood is not finite anywhere in the search box".into())),
    }
}

fn objective_at(inputs: &DMatrix<f64>, y: &DVector<f64>, theta: &[f64]) -> f64 {
    lml_from_parts(inputs, y, &ParamBounds::params_from_log(theta)).unwrap_or(f64::NEG_INFINITY)
}

fn coordinate_search(
    inputs: &DMatrix<f64>,
    y: &DVector<f64>,
    bounds: &[(f64, f64)],
    mut theta: Vec<f64>,
    options: &CalibrationOptions,
) -> (f64, Vec<f64>) {
    let mut value = objective_at(inputs, y, &theta);
    let mut steps: Vec<f64> = bounds.iter().map(|(a, b)| 0.25 * (b - a)).collect();
    for _ in 0..options.max_sweeps {
        let mut improved = false;
        for j in 0..theta.len() {
            for dir in [1.0, -1.0] {
                let (lo, hi) = bounds[j];
                let cand = (theta[j] + dir * steps[j]).clamp(lo, hi);
                if cand == theta[j] {
                    continue;
                }
                let mut trial = theta.clone();
                trial[j] = cand;
                let v = objective_at(inputs, y, &trial);
                if v > value {
                    theta = trial;
                    value = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
            if steps.iter().all(|&s| s < options.step_tolerance) {
                break;
            }
        }
    }
    (value, theta)
}
