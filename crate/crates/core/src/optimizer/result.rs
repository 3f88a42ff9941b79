use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProposalKind, RunConfig};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::pdp::{joint_execution_path, ExecutionPath, McSample, PdpEstimate};
use crate::space::SearchSpace;

/// Partial dependence curve at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub phi: Vec<f64>,
    pub s_hat: Vec<f64>,
}

impl Curve {
    pub fn from_estimate(e: &PdpEstimate) -> Self {
        Curve { phi: e.phi.clone(), s_hat: e.s_hat.clone() }
    }
}

/// State after one refit. Row 0 follows the initial design; row `t` follows
/// the `t`-th proposal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Archive size at this row.
    pub evaluations: usize,
    pub incumbent: f64,
    /// How the newest archive entry was chosen.
    pub proposal: ProposalKind,
    /// Phase governing the next proposal.
    pub phase: u8,
    /// Per target, `None` without ground truth.
    pub d_l1: Vec<Option<f64>>,
    /// Per target, `None` without ground truth or for a constant curve.
    pub rho: Vec<Option<f64>>,
    pub ci_halfwidth: f64,
    /// Per target, in the order of the run's targets.
    pub curves: Vec<Curve>,
    pub wall_ms: f64,
}

/// Everything a run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub objective: String,
    pub strategy: String,
    pub config: RunConfig,
    pub space: SearchSpace,
    /// Evaluated configurations in internal coordinates.
    pub archive: Archive,
    /// How each archive entry was chosen.
    pub proposals: Vec<ProposalKind>,
    pub mc: McSample,
    pub trace: Vec<TraceRow>,
    pub final_estimates: Vec<PdpEstimate>,
    /// Per target, on the run's grid and Monte-Carlo sample.
    pub ground_truth: Option<Vec<Vec<f64>>>,
    pub optimum: Option<f64>,
    /// Set when the run aborted; the archive and trace end at the failure.
    pub error: Option<String>,
}

/// A run that aborted, with everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} evaluations: {error}", partial.archive.len())]
pub struct RunFailure {
    pub error: Error,
    pub partial: Box<RunResult>,
}

pub(crate) fn target_label(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("_")
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.archive.len() == self.config.budget
    }

    /// The joint execution path the run tracked.
    pub fn execution_path(&self) -> Result<ExecutionPath> {
        joint_execution_path(&self.space, &self.config.pdp_targets, self.config.grid_size, &self.mc)
    }

    /// The surrogate as it was after the first `evaluations` archive entries.
    pub fn model_at(&self, evaluations: usize) -> Result<GpModel> {
        GpModel::fit(&self.archive.prefix(evaluations), &self.config.kernel)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Flat trace with columns `iteration, evaluations, incumbent,
    /// d_l1_<S>..., rho_<S>..., ci_halfwidth, phase, proposal_kind, wall_ms`,
    /// where `<S>` joins a target's dimensions with `_`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let labels: Vec<String> = self.config.pdp_targets.iter().map(|t| target_label(t)).collect();
        let mut header = vec!["iteration".to_string(), "evaluations".into(), "incumbent".into()];
        header.extend(labels.iter().map(|l| format!("d_l1_{l}")));
        header.extend(labels.iter().map(|l| format!("rho_{l}")));
        header.extend(["ci_halfwidth", "phase", "proposal_kind", "wall_ms"].map(String::from));
        w.write_record(&header)?;
        for row in &self.trace {
            let mut rec = vec![row.iteration.to_string(), row.evaluations.to_string(), row.incumbent.to_string()];
            rec.extend(row.d_l1.iter().map(|v| opt_cell(*v)));
            rec.extend(row.rho.iter().map(|v| opt_cell(*v)));
            rec.push(row.ci_halfwidth.to_string());
            rec.push(row.phase.to_string());
            rec.push(row.proposal.as_str().to_string());
            rec.push(format!("{:.3}", row.wall_ms));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Archive in external coordinates: `x0..x{d-1}, cost, proposal_kind`.
    pub fn write_archive_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.space.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.extend(["cost", "proposal_kind"].map(String::from));
        w.write_record(&header)?;
        for (i, (u, y)) in self.archive.points().iter().zip(self.archive.costs()).enumerate() {
            let mut rec: Vec<String> = self.space.to_external(u)?.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            rec.push(self.proposals.get(i).map_or("", |k| k.as_str()).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `result.json`, `trace.csv` and `archive.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_json(&dir.join("result.json"))?;
        self.write_trace_csv(fs::File::create(dir.join("trace.csv"))?)?;
        self.write_archive_csv(fs::File::create(dir.join("archive.csv"))?)?;
        Ok(())
    }
}
