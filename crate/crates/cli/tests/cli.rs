use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const WORKER: &str = r#"
import json, sys
mode = sys.argv[1]
count = 0
for line in sys.stdin:
    x = json.loads(line)["x"]
    count += 1
    if mode == "sum":
        y = sum(x)
    elif mode == "first":
        y = x[0]
    elif mode == "const":
        y = 1.5
    elif mode == "null_after_5":
        y = None if count > 5 else sum(x)
    print(json.dumps({"y": y}), flush=True)
"#;

fn bobax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bobax")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bobax(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn worker(dir: &Path) -> String {
    let p = dir.join("worker.py");
    fs::write(&p, WORKER).unwrap();
    p.to_string_lossy().into_owned()
}

fn kernel(dim: usize) -> Value {
    json!({"lengthscales": vec![0.3; dim], "signal_variance": 1.0, "nugget": 1e-6})
}

fn external_config(dir: &Path, mode: &str, space: Value, extra: Value) -> PathBuf {
    let dim = space["lower"].as_array().unwrap().len();
    let mut cfg = json!({
        "problem": {"name": "ext", "command": ["python3", worker(dir), mode], "space": space},
        "strategy": {"kind": "rs"},
        "budget": 8,
        "grid_size": 5,
        "mc_size": 5,
        "kernel": kernel(dim),
    });
    cfg.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let p = dir.join(format!("{mode}.json"));
    fs::write(&p, serde_json::to_vec(&cfg).unwrap()).unwrap();
    p
}

fn kernel_file(dir: &Path) -> String {
    let p = dir.join("kernel.json");
    fs::write(&p, kernel(2).to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    std::iter::once(header).chain(r.records().map(|x| x.unwrap().iter().map(String::from).collect())).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rs_run_on_branin_persists_ten_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let k = kernel_file(dir.path());
    ok(&["run", "--problem", "branin", "--strategy", "rs", "--budget", "10", "--grid-size", "5", "--mc-size", "5", "--kernel", &k, "--out", s(&out)]);
    let archive = csv_rows(&out.join("archive.csv"));
    assert_eq!(archive.len(), 11);
    assert_eq!(archive[0], ["x0", "x1", "cost", "proposal_kind"]);
    for f in ["result.json", "trace.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cfg: Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["budget"], 10);
    assert_eq!(cfg["strategy"]["kind"], "rs");
}

#[test]
fn usage_errors_exit_with_two() {
    let out = bobax(&["run", "--problem", "branin", "--strategy", "simulated-annealing"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown strategy"));
    assert_eq!(bobax(&["run", "--problem", "branin", "--strategy", "bobax"]).status.code(), Some(2));
    assert_eq!(bobax(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(bobax(&["run"]).status.code(), Some(2));
}

#[test]
fn adaptive_run_has_phase_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let k = kernel_file(dir.path());
    ok(&[
        "run", "--problem", "branin", "--strategy", "a-bobax", "--k", "2", "--tolerance", "0.5", "--budget", "10", "--grid-size", "5",
        "--mc-size", "5", "--n-path", "5", "--kernel", &k, "--out", s(&out),
    ]);
    let trace = csv_rows(&out.join("trace.csv"));
    let phase = trace[0].iter().position(|h| h == "phase").expect("phase column");
    assert!(trace[1..].iter().all(|r| r[phase] == "1" || r[phase] == "2"));
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let k = kernel_file(dir.path());
    ok(&["run", "--problem", "camelback", "--strategy", "bobax", "--k", "2", "--budget", "9", "--grid-size", "4", "--mc-size", "4", "--n-path", "4", "--seed", "5", "--kernel", &k, "--out", s(&a)]);
    ok(&["run", "--config", s(&a.join("config.json")), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("archive.csv")).unwrap(), fs::read(b.join("archive.csv")).unwrap());
    assert_eq!(fs::read(a.join("config.json")).unwrap(), fs::read(b.join("config.json")).unwrap());
    let strip = |p: &Path| -> Vec<Vec<String>> { csv_rows(p).into_iter().map(|mut r| { r.pop(); r }).collect() };
    assert_eq!(strip(&a.join("trace.csv")), strip(&b.join("trace.csv")));
}

#[test]
fn calibrate_constant_objective_hits_bounds_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = external_config(dir.path(), "const", json!({"lower": [0, 0], "upper": [1, 1]}), json!({"calibration": {"n_points": 20, "restarts": 2}}));
    let (f1, f2) = (dir.path().join("new/dir/k1.json"), dir.path().join("k2.json"));
    ok(&["calibrate", "--config", s(&cfg), "--seed", "3", "--out", s(&f1)]);
    ok(&["calibrate", "--config", s(&cfg), "--seed", "3", "--out", s(&f2)]);
    assert_eq!(fs::read(&f1).unwrap(), fs::read(&f2).unwrap());
    let k: Value = serde_json::from_slice(&fs::read(&f1).unwrap()).unwrap();
    assert!((k["signal_variance"].as_f64().unwrap() - 1e-2).abs() < 1e-12);
    assert_eq!(k["seed"], 3);
    assert_eq!(k["n_points"], 20);
    assert_eq!(k["lengthscales"].as_array().unwrap().len(), 2);
}

#[test]
fn calibrated_kernel_file_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let kf = dir.path().join("k.json");
    let out = dir.path().join("run");
    ok(&["calibrate", "--problem", "branin", "--seed", "1", "--n-points", "30", "--out", s(&kf)]);
    ok(&["run", "--problem", "branin", "--strategy", "bo-ei", "--budget", "6", "--grid-size", "4", "--mc-size", "4", "--kernel", s(&kf), "--out", s(&out)]);
    let k: Value = serde_json::from_slice(&fs::read(&kf).unwrap()).unwrap();
    let cfg: Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["kernel"]["lengthscales"], k["lengthscales"]);
}

#[test]
fn external_worker_sees_external_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = external_config(dir.path(), "first", json!({"lower": [0.001, -1], "upper": [10, 1], "log_scale": [true, false]}), json!({}));
    let out = dir.path().join("run");
    ok(&["run", "--config", s(&cfg), "--out", s(&out)]);
    let rows = csv_rows(&out.join("archive.csv"));
    assert_eq!(rows.len(), 9);
    for r in &rows[1..] {
        let x0: f64 = r[0].parse().unwrap();
        let cost: f64 = r[2].parse().unwrap();
        assert!((1e-3..=10.0).contains(&x0));
        assert!((x0 - cost).abs() <= 1e-12 * x0.abs().max(1.0), "{x0} vs {cost}");
    }
    assert!(rows[1..].iter().any(|r| r[0].parse::<f64>().unwrap() > 1.0));
}

#[test]
fn external_null_reply_aborts_with_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = external_config(dir.path(), "null_after_5", json!({"lower": [0, 0], "upper": [1, 1]}), json!({}));
    let out = dir.path().join("run");
    let res = bobax(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("aborted after 5 evaluations"));
    assert_eq!(csv_rows(&out.join("archive.csv")).len(), 6);
    let result: Value = serde_json::from_slice(&fs::read(out.join("result.json")).unwrap()).unwrap();
    assert!(result["error"].is_string());
}

fn run_for_report(dir: &Path, args: &[&str]) -> PathBuf {
    let out = dir.join("run");
    let mut full = vec!["run", "--out", s(&out)];
    full.extend_from_slice(args);
    ok(&full);
    out
}

#[test]
fn pdp_report_for_synthetic_run_has_truth() {
    let dir = tempfile::tempdir().unwrap();
    let k = kernel_file(dir.path());
    let run = run_for_report(dir.path(), &["--problem", "branin", "--strategy", "bo-ei", "--budget", "8", "--grid-size", "6", "--mc-size", "5", "--kernel", &k]);
    let rep = dir.path().join("report");
    ok(&["pdp-report", s(&run), "--target", "0", "--target", "1", "--target", "0,1", "--out", s(&rep)]);
    let rows = csv_rows(&rep.join("pdp_0.csv"));
    assert_eq!(rows[0], ["x0", "phi", "s_hat", "ci_lower", "ci_upper", "truth"]);
    assert_eq!(rows.len(), 7);
    assert!(rows[1..].iter().all(|r| r[5].parse::<f64>().is_ok()));
    assert_eq!(csv_rows(&rep.join("pdp_1.csv")).len(), 7);
    assert_eq!(csv_rows(&rep.join("pdp_0_1.csv")).len(), 37);
    let svg = fs::read_to_string(rep.join("pdp_0.svg")).unwrap();
    assert!(svg.contains(r#"class="truth""#) && svg.contains(r#"class="ci""#));
    assert!(!rep.join("pdp_0_1.svg").exists());
    assert!(rep.join("report.json").exists());
}

#[test]
fn pdp_report_for_external_run_has_no_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = external_config(dir.path(), "sum", json!({"lower": [0, 0], "upper": [1, 1]}), json!({}));
    let run = run_for_report(dir.path(), &["--config", s(&cfg)]);
    ok(&["pdp-report", s(&run.join("result.json"))]);
    let rows = csv_rows(&run.join("pdp_0.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows[1..].iter().all(|r| r[5].is_empty()));
    assert!(!fs::read_to_string(run.join("pdp_0.svg")).unwrap().contains(r#"class="truth""#));
}

#[test]
fn pdp_report_without_run_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let res = bobax(&["pdp-report", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing run file"));
}

fn suite_file(dir: &Path, out: &Path) -> PathBuf {
    let cfg = json!({
        "problems": ["branin"],
        "strategies": [{"kind": "rs"}, {"kind": "bo_ei"}, {"kind": "bobax", "k": 2}],
        "n_reps": 2,
        "master_seed": 11,
        "budget": 8,
        "grid_size": 4,
        "mc_size": 4,
        "n_path": 4,
        "n_candidates": 50,
        "kernels": {"branin": kernel(2)},
        "output_dir": out,
    });
    let p = dir.join("suite.json");
    fs::write(&p, serde_json::to_vec(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn bench_writes_summaries_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let cfg = suite_file(dir.path(), &out);
    let first = ok(&["bench", "--config", s(&cfg)]);
    assert!(String::from_utf8_lossy(&first.stdout).contains("6 trials (0 resumed"));
    for f in ["summary_dl1.csv", "summary_regret.csv", "summary_combined_rank.csv"] {
        assert_eq!(csv_rows(&out.join(f)).len(), 1 + 3 * 4, "{f}");
    }
    let records = fs::read(out.join("records.csv")).unwrap();
    let again = ok(&["bench", "--config", s(&cfg), "--resume"]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("6 trials (6 resumed"));
    assert_eq!(records, fs::read(out.join("records.csv")).unwrap());

    let other = dir.path().join("other");
    ok(&["bench", "--config", s(&out.join("config.json")), "--out", s(&other), "--workers", "4"]);
    assert_eq!(records, fs::read(other.join("records.csv")).unwrap());
}

#[test]
fn bench_flags_override_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let cfg = suite_file(dir.path(), &out);
    ok(&["bench", "--config", s(&cfg), "--strategy", "rs", "--budget", "6", "--seed", "2"]);
    let snapshot: Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["strategies"], json!([{"kind": "rs"}]));
    assert_eq!(snapshot["budget"], 6);
    assert_eq!(snapshot["master_seed"], 2);
}
