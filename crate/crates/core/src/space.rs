//! Continuous box search spaces.
//!
//! Configurations live in two coordinate systems. *External* coordinates are
//! what an objective sees. *Internal* coordinates map every dimension onto
//! `[0, 1]`, after a natural-log transform for log-scaled dimensions. All
//! modelling (GP inputs, grids, Monte-Carlo samples, candidates) happens in
//! internal coordinates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Relative slack accepted by [`SearchSpace::contains`].
const BOUNDS_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    log_scale: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default)]
    log_scale: Vec<bool>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        let log_scale = if raw.log_scale.is_empty() {
            vec![false; raw.lower.len()]
        } else {
            raw.log_scale
        };
        SearchSpace::new(raw.lower, raw.upper, log_scale)
    }
}

impl From<SearchSpace> for RawSpace {
    fn from(s: SearchSpace) -> Self {
        RawSpace { lower: s.lower, upper: s.upper, log_scale: s.log_scale }
    }
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, log_scale: Vec<bool>) -> Result<Self> {
        ensure_dim(lower.len(), upper.len())?;
        ensure_dim(lower.len(), log_scale.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidInput("search space needs at least one dimension".into()));
        }
        for j in 0..lower.len() {
            let (lo, hi) = (lower[j], upper[j]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "dimension {j}: bounds [{lo}, {hi}] are not an interval"
                )));
            }
            if log_scale[j] && lo <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "dimension {j}: log scale requires a positive lower bound, got {lo}"
                )));
            }
        }
        Ok(SearchSpace { lower, upper, log_scale })
    }

    /// Linear-scale box from `(lower, upper)` pairs.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let (lower, upper) = bounds.iter().copied().unzip();
        SearchSpace::new(lower, upper, vec![false; bounds.len()])
    }

    /// The unit cube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        SearchSpace::new(vec![0.0; dim], vec![1.0; dim], vec![false; dim])
            .expect("unit cube is a valid space")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn log_scale(&self) -> &[bool] {
        &self.log_scale
    }

    fn transformed_bounds(&self, j: usize) -> (f64, f64) {
        if self.log_scale[j] {
            (self.lower[j].ln(), self.upper[j].ln())
        } else {
            (self.lower[j], self.upper[j])
        }
    }

    /// Maps one internal coordinate of dimension `j` to external units.
    pub fn coord_to_external(&self, j: usize, u: f64) -> f64 {
        let (lo, hi) = self.transformed_bounds(j);
        let t = lo + u * (hi - lo);
        let x = if self.log_scale[j] { t.exp() } else { t };
        // Endpoints must map back exactly so that bound checks never fail on
        // the last ulp of a log transform.
        if u <= 0.0 {
            self.lower[j]
        } else if u >= 1.0 {
            self.upper[j]
        } else {
            x.clamp(self.lower[j], self.upper[j])
        }
    }

    pub fn coord_to_internal(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = self.transformed_bounds(j);
        let t = if self.log_scale[j] { x.ln() } else { x };
        (t - lo) / (hi - lo)
    }

    pub fn to_external(&self, internal: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), internal.len())?;
        Ok(internal.iter().enumerate().map(|(j, &u)| self.coord_to_external(j, u)).collect())
    }

    pub fn to_internal(&self, external: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), external.len())?;
        if !self.contains(external) {
            return Err(Error::InvalidInput(format!("{external:?} lies outside the search space")));
        }
        Ok(external.iter().enumerate().map(|(j, &x)| self.coord_to_internal(j, x)).collect())
    }

    /// Whether an external configuration lies inside the bounds.
    pub fn contains(&self, external: &[f64]) -> bool {
        external.len() == self.dim()
            && external.iter().enumerate().all(|(j, &x)| {
                let slack = BOUNDS_SLACK * (self.upper[j] - self.lower[j]).abs().max(1.0);
                x.is_finite() && x >= self.lower[j] - slack && x <= self.upper[j] + slack
            })
    }

    /// Uniform draw in internal coordinates.
    pub fn sample_internal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random::<f64>()).collect()
    }
}
