//! Black-box objectives: synthetic test functions with known optima, closure
//! objectives, and external workers spoken to over a line protocol.

mod external;
mod synthetic;

pub use external::{ExternalObjective, ExternalSpec, DEFAULT_TIMEOUT_SECS};
pub use synthetic::{Synthetic, SyntheticObjective};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdp::{ExecutionPath, McSample, PdpGrid};
use crate::space::SearchSpace;

/// Known global minimum of a synthetic objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub value: f64,
    /// Minimizers in external coordinates.
    pub points: Vec<Vec<f64>>,
}

/// A cost function `c: Λ → ℝ` to be minimized.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn space(&self) -> &SearchSpace;

    /// Cost at an external configuration. Callers go through [`eval`], which
    /// checks bounds and finiteness first.
    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    fn optimum(&self) -> Option<&Optimum> {
        None
    }

    /// Whether evaluating the objective on a full execution path is cheap
    /// enough to serve as ground truth for partial dependence.
    fn has_ground_truth(&self) -> bool {
        true
    }
}

/// Evaluates `objective` at the external configuration `x`.
pub fn eval(objective: &dyn Objective, x: &[f64]) -> Result<f64> {
    let space = objective.space();
    if x.len() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), found: x.len() });
    }
    if !space.contains(x) {
        return Err(Error::InvalidInput(format!("{x:?} lies outside the bounds of {}", objective.name())));
    }
    let y = objective.evaluate(x)?;
    if !y.is_finite() {
        return Err(Error::Evaluation { config: x.to_vec(), reason: format!("non-finite cost {y}") });
    }
    Ok(y)
}

/// Evaluates at an internal (unit-cube) configuration.
pub fn eval_internal(objective: &dyn Objective, u: &[f64]) -> Result<f64> {
    let x = objective.space().to_external(u)?;
    eval(objective, &x)
}

type CostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Objective backed by a closure over external coordinates.
pub struct FnObjective {
    name: String,
    space: SearchSpace,
    f: Box<CostFn>,
    optimum: Option<Optimum>,
}

impl FnObjective {
    pub fn new(name: impl Into<String>, space: SearchSpace, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FnObjective { name: name.into(), space, f: Box::new(f), optimum: None }
    }

    pub fn with_optimum(mut self, optimum: Optimum) -> Self {
        self.optimum = Some(optimum);
        self
    }
}

impl Objective for FnObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }

    fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }
}

/// Objective lookup by name: `branin`, `camelback`, `styblinski_tang`
/// (optionally `styblinski_tang_<d>`), `hartmann3`, `hartmann6`.
pub fn synthetic_by_name(name: &str) -> Result<Arc<dyn Objective>> {
    Ok(Arc::new(SyntheticObjective::new(Synthetic::from_name(name)?)))
}

/// Partial dependence of the true objective on the dimensions of `grid`,
/// averaged over the same Monte-Carlo sample the surrogate estimate uses.
pub fn ground_truth_pdp(objective: &dyn Objective, grid: &PdpGrid, mc: &McSample) -> Result<Vec<f64>> {
    let path = ExecutionPath::single(grid, mc)?;
    ground_truth_on_path(objective, &path, 0)
}

/// Ground-truth partial dependence for segment `segment` of `path`.
pub fn ground_truth_on_path(objective: &dyn Objective, path: &ExecutionPath, segment: usize) -> Result<Vec<f64>> {
    let seg = path
        .segments()
        .get(segment)
        .ok_or_else(|| Error::InvalidInput(format!("path has no segment {segment}")))?;
    let n = seg.n_mc;
    let mut out = Vec::with_capacity(seg.grid.len());
    for g in 0..seg.grid.len() {
        let mut acc = 0.0;
        for i in 0..n {
            let row = path.points().row(seg.start + g * n + i);
            let u: Vec<f64> = row.iter().copied().collect();
            acc += eval_internal(objective, &u)?;
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}
