use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Append-only record of evaluated configurations (internal coordinates) and
/// their costs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    dim: usize,
    points: Vec<Vec<f64>>,
    costs: Vec<f64>,
    incumbent: Option<usize>,
}

impl Archive {
    pub fn new(dim: usize) -> Self {
        Archive { dim, ..Default::default() }
    }

    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (Vec<f64>, f64)>) -> Result<Self> {
        let mut archive = Archive::new(dim);
        for (x, y) in pairs {
            archive.push(x, y)?;
        }
        Ok(archive)
    }

    pub fn push(&mut self, point: Vec<f64>, cost: f64) -> Result<()> {
        ensure_dim(self.dim, point.len())?;
        if !cost.is_finite() || point.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite archive entry {point:?} -> {cost}")));
        }
        let better = self.incumbent.map_or(true, |i| cost < self.costs[i]);
        self.points.push(point);
        self.costs.push(cost);
        if better {
            self.incumbent = Some(self.costs.len() - 1);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn incumbent_index(&self) -> Option<usize> {
        self.incumbent
    }

    pub fn best_cost(&self) -> Option<f64> {
        self.incumbent.map(|i| self.costs[i])
    }

    pub fn best_point(&self) -> Option<&[f64]> {
        self.incumbent.map(|i| self.points[i].as_slice())
    }

    /// The first `n` entries, i.e. the archive as it was after `n` evaluations.
    pub fn prefix(&self, n: usize) -> Archive {
        let n = n.min(self.len());
        let mut out = Archive::new(self.dim);
        for i in 0..n {
            out.push(self.points[i].clone(), self.costs[i]).expect("entries were validated");
        }
        out
    }

    /// Inputs as a `len × dim` matrix.
    pub fn inputs(&self) -> DMatrix<f64> {
        points_to_matrix(self.dim, &self.points)
    }

    pub fn targets(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.costs)
    }
}

pub(crate) fn points_to_matrix(dim: usize, points: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), dim, |i, j| points[i][j])
}
