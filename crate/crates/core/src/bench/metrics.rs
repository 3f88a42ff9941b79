use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TrialRecord;
use crate::error::{Error, Result};
use crate::stats::average_ranks;

/// Baseline values with a magnitude below this fall back to the absolute
/// difference.
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// Incumbent cost minus the known optimum.
pub fn simple_regret(incumbent: f64, optimum: f64) -> f64 {
    incumbent - optimum
}

/// Running sum of `c_t − c*` over the evaluation sequence.
pub fn cumulative_regret(costs: &[f64], optimum: f64) -> Vec<f64> {
    costs
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c - optimum;
            Some(*acc)
        })
        .collect()
}

/// Per-checkpoint quantity compared across strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean over targets of the L1 distance to the true partial dependence.
    DL1,
    SimpleRegret,
}

impl Metric {
    pub fn value(&self, record: &TrialRecord, checkpoint: usize) -> Option<f64> {
        let c = record.checkpoints.get(checkpoint)?;
        match self {
            Metric::DL1 => {
                let vals: Option<Vec<f64>> = c.d_l1.iter().copied().collect();
                let vals = vals.filter(|v| !v.is_empty())?;
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
            Metric::SimpleRegret => c.simple_regret,
        }
    }
}

/// One row of a summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub strategy: String,
    pub checkpoint: usize,
    /// Mean over all (problem, seed) cells.
    pub mean: Option<f64>,
    /// Mean over problems of the per-problem mean over seeds.
    pub mean_by_problem: Option<f64>,
    pub n: usize,
    /// Cells where the baseline was below [`RELATIVE_FLOOR`].
    pub n_fallback: usize,
}

fn usable(records: &[TrialRecord]) -> impl Iterator<Item = &TrialRecord> {
    records.iter().filter(|r| r.error.is_none())
}

fn checkpoint_count(records: &[TrialRecord]) -> usize {
    usable(records).map(|r| r.checkpoints.len()).max().unwrap_or(0)
}

fn strategies(records: &[TrialRecord]) -> BTreeSet<String> {
    usable(records).map(|r| r.strategy.clone()).collect()
}

/// `(problem, rep) → value` for every strategy and checkpoint.
type Cells = BTreeMap<(String, usize), f64>;

fn summarize(strategy: &str, checkpoint: usize, cells: &Cells, n_fallback: usize) -> SummaryCell {
    let n = cells.len();
    let mean = (n > 0).then(|| cells.values().sum::<f64>() / n as f64);
    let mut per_problem: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for ((problem, _), v) in cells {
        let e = per_problem.entry(problem).or_default();
        e.0 += v;
        e.1 += 1;
    }
    let mean_by_problem = (!per_problem.is_empty())
        .then(|| per_problem.values().map(|(s, c)| s / *c as f64).sum::<f64>() / per_problem.len() as f64);
    SummaryCell { strategy: strategy.to_string(), checkpoint, mean, mean_by_problem, n, n_fallback }
}

/// Mean relative difference `(m − m_base)/m_base` of every strategy to
/// `baseline`, per checkpoint, over matching (problem, seed) cells. Negative
/// values mean a reduction. Failed trials are skipped.
pub fn relative_metric(records: &[TrialRecord], metric: Metric, baseline: &str) -> Result<Vec<SummaryCell>> {
    let base: BTreeMap<(String, usize), &TrialRecord> =
        usable(records).filter(|r| r.strategy == baseline).map(|r| ((r.problem.clone(), r.rep), r)).collect();
    if base.is_empty() {
        return Err(Error::InvalidInput(format!("baseline strategy {baseline} has no records")));
    }
    let mut out = Vec::new();
    for strategy in strategies(records) {
        for cp in 0..checkpoint_count(records) {
            let mut cells = Cells::new();
            let mut fallback = 0;
            for r in usable(records).filter(|r| r.strategy == strategy) {
                let key = (r.problem.clone(), r.rep);
                let (Some(b), Some(m)) = (base.get(&key).and_then(|b| metric.value(b, cp)), metric.value(r, cp)) else {
                    continue;
                };
                let rel = if b.abs() < RELATIVE_FLOOR {
                    fallback += 1;
                    m - b
                } else {
                    (m - b) / b
                };
                cells.insert(key, rel);
            }
            out.push(summarize(&strategy, cp, &cells, fallback));
        }
    }
    Ok(out)
}

/// Mean of the raw metric per strategy and checkpoint.
pub fn mean_metric(records: &[TrialRecord], metric: Metric) -> Vec<SummaryCell> {
    let mut out = Vec::new();
    for strategy in strategies(records) {
        for cp in 0..checkpoint_count(records) {
            let cells: Cells = usable(records)
                .filter(|r| r.strategy == strategy)
                .filter_map(|r| Some(((r.problem.clone(), r.rep), metric.value(r, cp)?)))
                .collect();
            out.push(summarize(&strategy, cp, &cells, 0));
        }
    }
    out
}

/// Combined rank `½·rank(d_L1) + ½·rank(regret)` per (problem, seed,
/// checkpoint) over the strategies with both metrics, averaged per strategy
/// and checkpoint. Ties share average ranks.
pub fn combined_rank(records: &[TrialRecord]) -> Vec<SummaryCell> {
    let n_cp = checkpoint_count(records);
    let mut by_cell: BTreeMap<(String, usize), BTreeMap<String, &TrialRecord>> = BTreeMap::new();
    for r in usable(records) {
        by_cell.entry((r.problem.clone(), r.rep)).or_default().insert(r.strategy.clone(), r);
    }
    let mut ranks: BTreeMap<(String, usize), Cells> = BTreeMap::new();
    for (key, group) in &by_cell {
        for cp in 0..n_cp {
            let rows: Vec<(&String, f64, f64)> = group
                .iter()
                .filter_map(|(s, r)| Some((s, Metric::DL1.value(r, cp)?, Metric::SimpleRegret.value(r, cp)?)))
                .collect();
            if rows.len() < 2 {
                continue;
            }
            let r1 = average_ranks(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let r2 = average_ranks(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
            for (i, (s, _, _)) in rows.iter().enumerate() {
                ranks.entry(((*s).clone(), cp)).or_default().insert(key.clone(), 0.5 * (r1[i] + r2[i]));
            }
        }
    }
    let mut out = Vec::new();
    for strategy in strategies(records) {
        for cp in 0..n_cp {
            let empty = Cells::new();
            let cells = ranks.get(&(strategy.clone(), cp)).unwrap_or(&empty);
            out.push(summarize(&strategy, cp, cells, 0));
        }
    }
    out
}
