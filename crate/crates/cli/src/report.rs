use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bobax::bench::write_atomic;
use bobax::objectives::{ground_truth_pdp, synthetic_by_name};
use bobax::optimizer::RunResult;
use bobax::pdp::{build_grid, estimate_pdp_with, ExecutionPath, PdpEstimate};
use bobax::SearchSpace;
use serde::Serialize;

use crate::UsageError;

#[derive(Clone, Debug, Default)]
pub struct ReportOptions {
    /// Defaults to the run's targets.
    pub targets: Option<Vec<Vec<usize>>>,
    /// Archive prefix the surrogate is fitted on; defaults to all of it.
    pub evaluations: Option<usize>,
    pub alpha: Option<f64>,
    /// Defaults to the directory of the result file.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TargetReport {
    pub dims: Vec<usize>,
    pub estimate: PdpEstimate,
    pub truth: Option<Vec<f64>>,
    pub csv: PathBuf,
    /// Only written for one-dimensional targets.
    pub svg: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReportConfig<'a> {
    result: &'a Path,
    targets: &'a [Vec<usize>],
    evaluations: usize,
    alpha: f64,
}

fn label(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("_")
}

/// Writes `pdp_<S>.csv` (and `pdp_<S>.svg` for single inputs) per target,
/// plus the effective report settings as `report.json`.
pub fn cmd_pdp_report(result_path: &Path, options: &ReportOptions) -> Result<Vec<TargetReport>> {
    let file = if result_path.is_dir() { result_path.join("result.json") } else { result_path.to_path_buf() };
    if !file.is_file() {
        bail!("missing run file {}", file.display());
    }
    let result = RunResult::read_json(&file).with_context(|| format!("reading {}", file.display()))?;
    let cfg = &result.config;
    let evaluations = options.evaluations.unwrap_or(result.archive.len());
    if evaluations == 0 || evaluations > result.archive.len() {
        return Err(UsageError(format!("--evaluations must lie in 1..={}", result.archive.len())).into());
    }
    let alpha = options.alpha.unwrap_or(cfg.alpha);
    let targets = options.targets.clone().unwrap_or_else(|| cfg.pdp_targets.clone());
    let out = match &options.out {
        Some(o) => o.clone(),
        None => file.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let model = result.model_at(evaluations)?;
    let known_objective = if result.ground_truth.is_some() { synthetic_by_name(&result.objective).ok() } else { None };
    let mut reports = Vec::new();
    for dims in &targets {
        let grid = build_grid(&result.space, dims, cfg.grid_size).map_err(|e| UsageError(e.to_string()))?;
        let path = ExecutionPath::single(&grid, &result.mc)?;
        let estimate = estimate_pdp_with(&model, &path, dims, alpha, cfg.s_hat)?;
        let stored = cfg.pdp_targets.iter().position(|t| t == dims).and_then(|i| result.ground_truth.as_ref().map(|g| g[i].clone()));
        let truth = match (stored, &known_objective) {
            (Some(t), _) => Some(t),
            (None, Some(o)) => Some(ground_truth_pdp(o.as_ref(), &grid, &result.mc)?),
            (None, None) => None,
        };
        let csv = out.join(format!("pdp_{}.csv", label(dims)));
        let mut buf = Vec::new();
        write_report_csv(&estimate, truth.as_deref(), &result.space, &mut buf)?;
        write_atomic(&csv, &buf)?;
        let svg = if dims.len() == 1 {
            let p = out.join(format!("pdp_{}.svg", label(dims)));
            let title = format!("{} / {}: partial dependence on x{}", result.objective, result.strategy, dims[0]);
            write_atomic(&p, render_svg(&estimate, truth.as_deref(), &result.space, &title).as_bytes())?;
            Some(p)
        } else {
            None
        };
        reports.push(TargetReport { dims: dims.clone(), estimate, truth, csv, svg });
    }
    let echo = ReportConfig { result: &file, targets: &targets, evaluations, alpha };
    write_atomic(&out.join("report.json"), &serde_json::to_vec_pretty(&echo)?)?;
    Ok(reports)
}

/// Columns `x<j>...` (external coordinates), `phi, s_hat, ci_lower,
/// ci_upper, truth`; `truth` is empty when unknown.
pub fn write_report_csv<W: std::io::Write>(estimate: &PdpEstimate, truth: Option<&[f64]>, space: &SearchSpace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = estimate.dims.iter().map(|j| format!("x{j}")).collect();
    header.extend(["phi", "s_hat", "ci_lower", "ci_upper", "truth"].map(String::from));
    w.write_record(&header)?;
    for g in 0..estimate.len() {
        let mut row: Vec<String> = estimate.grid_point_external(space, g).iter().map(|v| v.to_string()).collect();
        row.push(estimate.phi[g].to_string());
        row.push(estimate.s_hat[g].to_string());
        row.push(estimate.ci_lower[g].to_string());
        row.push(estimate.ci_upper[g].to_string());
        row.push(truth.map(|t| t[g].to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Line plot of a one-dimensional estimate with its shaded confidence band
/// and, when given, the true curve (dashed). The x axis is linear in
/// internal coordinates, so log-scaled inputs get logarithmic spacing.
pub fn render_svg(estimate: &PdpEstimate, truth: Option<&[f64]>, space: &SearchSpace, title: &str) -> String {
    let xs: Vec<f64> = estimate.grid.iter().map(|g| g[0]).collect();
    let mut lo = estimate.ci_lower.iter().chain(truth.unwrap_or(&[])).fold(f64::INFINITY, |a, &b| a.min(b));
    let mut hi = estimate.ci_upper.iter().chain(truth.unwrap_or(&[])).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !(hi - lo > 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |u: f64| LEFT + (u - x0) / span * (WIDTH - LEFT - RIGHT);
    let py = |v: f64| TOP + (hi - v) / (hi - lo) * (HEIGHT - TOP - BOTTOM);
    let points = |vals: &[f64]| xs.iter().zip(vals).map(|(&u, &v)| format!("{:.2},{:.2}", px(u), py(v))).collect::<Vec<_>>().join(" ");

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));

    let band_upper = points(&estimate.ci_upper);
    let band_lower: Vec<String> = xs.iter().zip(&estimate.ci_lower).rev().map(|(&u, &v)| format!("{:.2},{:.2}", px(u), py(v))).collect();
    let _ = writeln!(s, r##"<polygon class="ci" points="{band_upper} {}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##, band_lower.join(" "));
    if let Some(t) = truth {
        let _ = writeln!(s, r##"<polyline class="truth" points="{}" fill="none" stroke="#d62728" stroke-width="2" stroke-dasharray="6 4"/>"##, points(t));
    }
    let _ = writeln!(s, r##"<polyline class="estimate" points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##, points(&estimate.phi));

    let (bx, by) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(s, r#"<line x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#, WIDTH - RIGHT);
    let _ = writeln!(s, r#"<line x1="{bx}" y1="{TOP}" x2="{bx}" y2="{by}" stroke="black"/>"#);
    let j = estimate.dims[0];
    for i in 0..=4 {
        let u = x0 + span * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, px(u), by + 18.0, tick(space.coord_to_external(j, u)));
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py(v) + 4.0, tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">x{j}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, HEIGHT - 10.0);

    let pct = ((1.0 - estimate.alpha) * 100.0).round();
    let mut legend = vec![("#08519c", "estimate", ""), ("#9ecae1", "", "")];
    if truth.is_some() {
        legend.push(("#d62728", "truth", "6 4"));
    }
    let mut y = TOP + 10.0;
    for (color, name, dash) in legend {
        let x = WIDTH - RIGHT - 130.0;
        if name.is_empty() {
            let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="24" height="10" fill="{color}" fill-opacity="0.6"/>"#, y - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{pct}% CI</text>"#, x + 30.0, y + 4.0);
        } else {
            let _ = writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2" stroke-dasharray="{dash}"/>"#, x + 24.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, x + 30.0, y + 4.0);
        }
        y += 18.0;
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
