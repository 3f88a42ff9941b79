//! Partial dependence with explicit execution paths.
//!
//! The partial dependence of a surrogate on the dimensions `S` is estimated on
//! an equidistant grid over `S`, averaging posterior means over a fixed
//! Monte-Carlo sample of the complement dimensions. The set of locations the
//! estimator queries (every grid point combined with every Monte-Carlo point)
//! is its *execution path*. The path depends only on the grid and the sample,
//! never on function values, which is what makes the information-gain
//! computation in [`crate::acquisition`] cheap.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::gp::GpModel;
use crate::space::SearchSpace;
use crate::stats::{spearman, two_sided_quantile};

pub const DEFAULT_GRID_SIZE: usize = 20;
pub const DEFAULT_MC_SIZE: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Uniform Monte-Carlo sample over the whole box in internal coordinates.
///
/// Full-dimensional points are stored; a path for the dimensions `S` only
/// reads the complement coordinates, so one sample serves every target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSample {
    points: DMatrix<f64>,
    seed: u64,
}

impl McSample {
    pub fn draw(dim: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = DMatrix::zeros(n, dim);
        for i in 0..n {
            for j in 0..dim {
                points[(i, j)] = rng.random::<f64>();
            }
        }
        McSample { points, seed }
    }

    pub fn from_points(points: DMatrix<f64>, seed: u64) -> Self {
        McSample { points, seed }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }
}

/// Cartesian grid over the dimensions `dims` in internal coordinates. Points
/// are ordered with the first axis varying slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpGrid {
    dims: Vec<usize>,
    axes: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
}

impl PdpGrid {
    pub fn from_axes(dims: Vec<usize>, axes: Vec<Vec<f64>>) -> Result<Self> {
        ensure_dim(dims.len(), axes.len())?;
        if dims.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(Error::InvalidInput("grid needs at least one dimension and point".into()));
        }
        let mut sorted = dims.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != dims.len() {
            return Err(Error::InvalidInput(format!("grid dimensions {dims:?} repeat")));
        }
        let mut points: Vec<Vec<f64>> = vec![vec![]];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(PdpGrid { dims, axes, points })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Internal coordinates of grid point `g`, one per grid dimension.
    pub fn point(&self, g: usize) -> &[f64] {
        &self.points[g]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// `g` equidistant values on `[0, 1]`, endpoints included.
pub fn grid_axis(g: usize) -> Result<Vec<f64>> {
    if g < 2 {
        return Err(Error::InvalidInput(format!("grid size must be at least 2, got {g}")));
    }
    Ok((0..g).map(|i| i as f64 / (g - 1) as f64).collect())
}

/// Equidistant grid with `g` points per dimension of `dims`.
pub fn build_grid(space: &SearchSpace, dims: &[usize], g: usize) -> Result<PdpGrid> {
    if let Some(&bad) = dims.iter().find(|&&j| j >= space.dim()) {
        return Err(Error::InvalidInput(format!("dimension {bad} is outside a {}-d space", space.dim())));
    }
    let axis = grid_axis(g)?;
    PdpGrid::from_axes(dims.to_vec(), vec![axis; dims.len()])
}

/// The part of an execution path belonging to one target `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    pub dims: Vec<usize>,
    pub grid: PdpGrid,
    pub n_mc: usize,
    /// Row of the first point of this segment within the path.
    pub start: usize,
}

impl PathSegment {
    pub fn len(&self) -> usize {
        self.grid.len() * self.n_mc
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Provenance of one path point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathTag {
    pub segment: usize,
    pub grid_index: usize,
    pub mc_index: usize,
}

/// Ordered probe locations of the partial-dependence algorithm, grid-major
/// then Monte-Carlo index, possibly concatenated over several targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPath {
    points: DMatrix<f64>,
    tags: Vec<PathTag>,
    segments: Vec<PathSegment>,
}

impl ExecutionPath {
    pub fn single(grid: &PdpGrid, mc: &McSample) -> Result<Self> {
        ExecutionPath::joint(std::slice::from_ref(grid), mc)
    }

    pub fn joint(grids: &[PdpGrid], mc: &McSample) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::InvalidInput("execution path needs at least one target".into()));
        }
        if mc.is_empty() {
            return Err(Error::InvalidInput("Monte-Carlo sample is empty".into()));
        }
        let d = mc.dim();
        let n = mc.len();
        let total: usize = grids.iter().map(|g| g.len() * n).sum();
        let mut points = DMatrix::zeros(total, d);
        let mut tags = Vec::with_capacity(total);
        let mut segments = Vec::with_capacity(grids.len());
        let mut row = 0;
        for (s, grid) in grids.iter().enumerate() {
            if let Some(&bad) = grid.dims().iter().find(|&&j| j >= d) {
                return Err(Error::InvalidInput(format!("grid dimension {bad} exceeds sample dimension {d}")));
            }
            segments.push(PathSegment { dims: grid.dims().to_vec(), grid: grid.clone(), n_mc: n, start: row });
            for g in 0..grid.len() {
                for i in 0..n {
                    points.row_mut(row).copy_from(&mc.points().row(i));
                    for (k, &j) in grid.dims().iter().enumerate() {
                        points[(row, j)] = grid.point(g)[k];
                    }
                    tags.push(PathTag { segment: s, grid_index: g, mc_index: i });
                    row += 1;
                }
            }
        }
        Ok(ExecutionPath { points, tags, segments })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// `len × d` matrix of probe locations in internal coordinates.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn tags(&self) -> &[PathTag] {
        &self.tags
    }

    pub fn segments(&self) -> &[PathSegment] {
        &self.segments
    }

    /// Index of the segment estimating the partial dependence on `dims`.
    pub fn segment_index(&self, dims: &[usize]) -> Option<usize> {
        self.segments.iter().position(|s| s.dims == dims)
    }

    pub fn segment_points(&self, segment: usize) -> DMatrix<f64> {
        let s = &self.segments[segment];
        self.points.rows(s.start, s.len()).into_owned()
    }
}

pub fn execution_path(grid: &PdpGrid, mc: &McSample) -> Result<ExecutionPath> {
    ExecutionPath::single(grid, mc)
}

/// Union of the execution paths for every target in `targets`.
pub fn joint_execution_path(
    space: &SearchSpace,
    targets: &[Vec<usize>],
    g: usize,
    mc: &McSample,
) -> Result<ExecutionPath> {
    ensure_dim(space.dim(), mc.dim())?;
    let grids = targets.iter().map(|t| build_grid(space, t, g)).collect::<Result<Vec<_>>>()?;
    ExecutionPath::joint(&grids, mc)
}

/// Execution path for the two-way partial dependence on `(s, s_prime)`.
pub fn execution_path_2d(
    space: &SearchSpace,
    s: usize,
    s_prime: usize,
    g: usize,
    mc: &McSample,
) -> Result<ExecutionPath> {
    if s == s_prime {
        return Err(Error::InvalidInput("two-way partial dependence needs distinct dimensions".into()));
    }
    ensure_dim(space.dim(), mc.dim())?;
    ExecutionPath::single(&build_grid(space, &[s, s_prime], g)?, mc)
}

/// How the per-grid-point uncertainty `ŝ` is derived from the posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SHatMode {
    /// Mean of the pointwise posterior standard deviations over the
    /// Monte-Carlo points of a grid cell.
    #[default]
    MeanPointwiseStd,
    /// Standard deviation of the cell mean under the joint posterior.
    StdOfMean,
}

/// Partial-dependence estimate with a pointwise normal confidence band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpEstimate {
    pub dims: Vec<usize>,
    /// Grid points in internal coordinates.
    pub grid: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub alpha: f64,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

impl PdpEstimate {
    pub fn from_parts(dims: Vec<usize>, grid: Vec<Vec<f64>>, phi: Vec<f64>, s_hat: Vec<f64>, alpha: f64) -> Result<Self> {
        ensure_dim(grid.len(), phi.len())?;
        ensure_dim(grid.len(), s_hat.len())?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if s_hat.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidInput("uncertainties must be non-negative".into()));
        }
        let q = two_sided_quantile(alpha);
        let ci_lower = phi.iter().zip(&s_hat).map(|(p, s)| p - q * s).collect();
        let ci_upper = phi.iter().zip(&s_hat).map(|(p, s)| p + q * s).collect();
        Ok(PdpEstimate { dims, grid, phi, s_hat, alpha, ci_lower, ci_upper })
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Confidence half-widths `q_{1−α/2} · ŝ`.
    pub fn halfwidths(&self) -> Vec<f64> {
        let q = two_sided_quantile(self.alpha);
        self.s_hat.iter().map(|s| q * s).collect()
    }

    /// External coordinates of grid point `g`.
    pub fn grid_point_external(&self, space: &SearchSpace, g: usize) -> Vec<f64> {
        self.dims.iter().zip(&self.grid[g]).map(|(&j, &u)| space.coord_to_external(j, u)).collect()
    }

    /// CSV with columns `S, grid_point, phi, s_hat, ci_lower, ci_upper`.
    /// Multi-dimensional labels are joined with `;`.
    pub fn write_csv<W: Write>(&self, space: &SearchSpace, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["S", "grid_point", "phi", "s_hat", "ci_lower", "ci_upper"])?;
        let s = join(self.dims.iter().map(|d| d.to_string()));
        for g in 0..self.len() {
            let point = join(self.grid_point_external(space, g).iter().map(|v| v.to_string()));
            w.write_record([
                s.clone(),
                point,
                self.phi[g].to_string(),
                self.s_hat[g].to_string(),
                self.ci_lower[g].to_string(),
                self.ci_upper[g].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn join(parts: impl Iterator<Item = String>) -> String {
    parts.collect::<Vec<_>>().join(";")
}

/// Estimates the partial dependence on `dims` from the segment of `path`
/// built for it, with the default uncertainty definition.
pub fn estimate_pdp(model: &GpModel, path: &ExecutionPath, dims: &[usize], alpha: f64) -> Result<PdpEstimate> {
    estimate_pdp_with(model, path, dims, alpha, SHatMode::default())
}

pub fn estimate_pdp_with(
    model: &GpModel,
    path: &ExecutionPath,
    dims: &[usize],
    alpha: f64,
    mode: SHatMode,
) -> Result<PdpEstimate> {
    let idx = path
        .segment_index(dims)
        .ok_or_else(|| Error::InvalidInput(format!("execution path has no segment for {dims:?}")))?;
    let seg = &path.segments()[idx];
    let pts = path.segment_points(idx);
    let n = seg.n_mc;
    let (mean, var) = model.predict_marginal(&pts)?;
    let mut phi = Vec::with_capacity(seg.grid.len());
    let mut s_hat = Vec::with_capacity(seg.grid.len());
    for g in 0..seg.grid.len() {
        let cell = g * n..(g + 1) * n;
        phi.push(mean.rows(cell.start, n).sum() / n as f64);
        let s = match mode {
            SHatMode::MeanPointwiseStd => var.rows(cell.start, n).iter().map(|v| v.sqrt()).sum::<f64>() / n as f64,
            SHatMode::StdOfMean => {
                let cov = model.predict(&pts.rows(cell.start, n).into_owned(), true)?;
                match cov.covariance {
                    crate::gp::Covariance::Full(m) => m.sum().max(0.0).sqrt() / n as f64,
                    crate::gp::Covariance::Marginal(_) => unreachable!("full covariance was requested"),
                }
            }
        };
        s_hat.push(s);
    }
    PdpEstimate::from_parts(seg.dims.clone(), seg.grid.points().to_vec(), phi, s_hat, alpha)
}

/// Mean confidence half-width over all grid points of all estimates, in
/// objective units.
pub fn mean_ci_halfwidth(estimates: &[PdpEstimate]) -> Result<f64> {
    let (sum, count) = estimates
        .iter()
        .flat_map(|e| e.halfwidths())
        .fold((0.0, 0usize), |(s, c), h| (s + h, c + 1));
    if count == 0 {
        return Err(Error::InvalidInput("no estimates to average".into()));
    }
    Ok(sum / count as f64)
}

/// Mean absolute deviation between an estimate and reference values on the
/// same grid.
pub fn d_l1(estimate: &PdpEstimate, truth: &[f64]) -> Result<f64> {
    l1_distance(&estimate.phi, truth)
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!("grid mismatch: {} vs {} points", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Spearman rank correlation between estimate and reference over grid
/// points; `Ok(None)` when either side is constant.
pub fn spearman_rank_corr(estimate: &PdpEstimate, truth: &[f64]) -> Result<Option<f64>> {
    if estimate.len() != truth.len() {
        return Err(Error::InvalidInput(format!("grid mismatch: {} vs {} points", estimate.len(), truth.len())));
    }
    if truth.len() < 3 {
        return Err(Error::InvalidInput("rank correlation needs at least 3 grid points".into()));
    }
    Ok(spearman(&estimate.phi, truth))
}
