use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::acquisition::{argmax_finite, draw_candidates, eig_pdp};
use crate::objectives::{synthetic_by_name, FnObjective, Optimum};
use crate::pdp::PdpEstimate;

fn branin() -> Arc<dyn Objective> {
    synthetic_by_name("branin").unwrap()
}

fn config(strategy: StrategySpec, budget: usize, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(strategy, 2, seed);
    c.budget = budget;
    c.n_candidates = 300;
    c.kernel = KernelParams::new(vec![0.3, 0.5], 1.0, 1e-6).unwrap();
    c
}

fn points(r: &RunResult) -> &[Vec<f64>] {
    r.archive.points()
}

#[test]
fn bobax_one_is_bax() {
    let f = branin();
    let a = run(f.as_ref(), &config(StrategySpec::Bobax { k: 1 }, 20, 3)).unwrap();
    let b = run(f.as_ref(), &config(StrategySpec::Bax, 20, 3)).unwrap();
    assert_eq!(points(&a), points(&b));
}

#[test]
fn rare_random_steps_reduce_to_ei() {
    let f = branin();
    let a = run(f.as_ref(), &config(StrategySpec::BoRs { k: 21 }, 20, 4)).unwrap();
    let b = run(f.as_ref(), &config(StrategySpec::BoEi, 20, 4)).unwrap();
    assert_eq!(points(&a), points(&b));
    let every = run(f.as_ref(), &config(StrategySpec::BoRs { k: 1 }, 20, 4)).unwrap();
    let rs = run(f.as_ref(), &config(StrategySpec::Rs, 20, 4)).unwrap();
    assert_eq!(points(&every), points(&rs));
}

#[test]
fn degenerate_probabilities() {
    let f = branin();
    let one = run(f.as_ref(), &config(StrategySpec::BobaxProb { pi: 1.0, anneal: false }, 14, 5)).unwrap();
    let bax = run(f.as_ref(), &config(StrategySpec::Bax, 14, 5)).unwrap();
    assert_eq!(points(&one), points(&bax));
    let zero = run(f.as_ref(), &config(StrategySpec::BobaxProb { pi: 0.0, anneal: false }, 14, 5)).unwrap();
    let ei = run(f.as_ref(), &config(StrategySpec::BoEi, 14, 5)).unwrap();
    assert_eq!(points(&zero), points(&ei));
}

#[test]
fn annealing_stops_information_steps() {
    let f = branin();
    let r = run(f.as_ref(), &config(StrategySpec::BobaxProb { pi: 1.0, anneal: true }, 24, 6)).unwrap();
    assert_eq!(r.proposals[4], ProposalKind::Eig);
    assert!(r.proposals.iter().any(|k| *k == ProposalKind::Ei));
}

#[test]
fn bobax_two_alternates_from_an_information_step() {
    let f = branin();
    let r = run(f.as_ref(), &config(StrategySpec::Bobax { k: 2 }, 12, 7)).unwrap();
    let kinds = &r.proposals[4..];
    for (t, k) in kinds.iter().enumerate() {
        assert_eq!(*k, if t % 2 == 0 { ProposalKind::Eig } else { ProposalKind::Ei });
    }
    let mut shifted = config(StrategySpec::Bobax { k: 2 }, 12, 7);
    shifted.counter_origin = 1;
    let s = run(f.as_ref(), &shifted).unwrap();
    assert_eq!(s.proposals[4], ProposalKind::Ei);
    assert_eq!(s.proposals[5], ProposalKind::Eig);
}

#[test]
fn information_steps_replay_from_the_archive() {
    let f = branin();
    let cfg = config(StrategySpec::Bobax { k: 2 }, 60, 0);
    let r = run(f.as_ref(), &cfg).unwrap();
    let path = Arc::new(r.execution_path().unwrap());
    let eig = crate::acquisition::EigConfig::new(path);
    for t in (0..cfg.iterations()).step_by(2) {
        let n = cfg.n_init + t;
        let model = r.model_at(n).unwrap();
        let cands = draw_candidates(&r.space, cfg.n_candidates, &mut stream(cfg.seed, Stream::Candidates, t as u64));
        let scores = eig_pdp(&model, &cands, &eig, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let best = argmax_finite(&scores).unwrap();
        let want: Vec<f64> = cands.row(best).iter().copied().collect();
        assert_eq!(r.archive.points()[n], want, "iteration {t}");
    }
}

#[test]
fn random_search_ignores_the_model() {
    let f = branin();
    let r = run(f.as_ref(), &config(StrategySpec::Rs, 8, 8)).unwrap();
    let path = Arc::new(r.execution_path().unwrap());
    let eig = crate::acquisition::EigConfig::new(path);
    let mut warped = Archive::new(2);
    for (x, y) in r.archive.points().iter().zip(r.archive.costs()).take(5) {
        warped.push(x.clone(), -3.0 * y + 7.0).unwrap();
    }
    let model = GpModel::fit(&warped, &r.config.kernel).unwrap();
    let ctx = ProposalContext {
        space: &r.space,
        model: &model,
        archive: &warped,
        iteration: 1,
        total_iterations: 4,
        counter_origin: 0,
        phase: 1,
        eig: &eig,
        seed: r.config.seed,
        n_candidates: 10,
    };
    let p = propose(&StrategySpec::Rs, &ctx).unwrap();
    assert_eq!(p.point, r.archive.points()[5]);
    assert_eq!(p.kind, ProposalKind::Random);
}

#[test]
fn trace_is_complete_and_replayable() {
    let f = branin();
    let mut cfg = config(StrategySpec::Bobax { k: 2 }, 16, 9);
    cfg.pdp_targets = vec![vec![0], vec![1]];
    let r = run(f.as_ref(), &cfg).unwrap();
    assert!(r.is_complete());
    assert_eq!(r.trace.len(), cfg.budget - cfg.n_init + 1);
    assert_eq!(r.archive.len(), cfg.budget);
    let path = r.execution_path().unwrap();
    for (t, row) in r.trace.iter().enumerate() {
        assert_eq!(row.iteration, t);
        assert_eq!(row.evaluations, cfg.n_init + t);
        assert_eq!(row.curves.len(), 2);
        assert!(row.d_l1.iter().all(Option::is_some));
        if t > 0 {
            assert!(row.incumbent <= r.trace[t - 1].incumbent);
        }
    }
    for t in [0, 5, 12] {
        let model = r.model_at(cfg.n_init + t).unwrap();
        let est = crate::pdp::estimate_pdp(&model, &path, &[1], cfg.alpha).unwrap();
        assert_eq!(r.trace[t].curves[1].phi, est.phi);
    }
    assert_eq!(r.final_estimates[0].phi, r.trace.last().unwrap().curves[0].phi);
}

#[test]
fn strategies_share_design_and_sample() {
    let f = branin();
    let a = run(f.as_ref(), &config(StrategySpec::Rs, 10, 11)).unwrap();
    let b = run(f.as_ref(), &config(StrategySpec::Eibax { beta: 20.0 }, 10, 11)).unwrap();
    assert_eq!(a.archive.points()[..4], b.archive.points()[..4]);
    assert_eq!(a.mc, b.mc);
    assert_eq!(a.ground_truth, b.ground_truth);
    let c = run(f.as_ref(), &config(StrategySpec::Rs, 10, 12)).unwrap();
    assert_ne!(a.archive.points()[0], c.archive.points()[0]);
}

#[test]
fn runs_are_deterministic() {
    let f = branin();
    let cfg = config(StrategySpec::Eibax { beta: 20.0 }, 10, 13);
    let a = run(f.as_ref(), &cfg).unwrap();
    let b = run(f.as_ref(), &cfg).unwrap();
    assert_eq!(a.archive, b.archive);
    assert_eq!(a.trace.iter().map(|r| r.ci_halfwidth).collect::<Vec<_>>(), b.trace.iter().map(|r| r.ci_halfwidth).collect::<Vec<_>>());
}

#[test]
fn other_acquisitions_run() {
    let f = branin();
    for s in [StrategySpec::Pvar, StrategySpec::Lcb { tau: 2.0, term: Default::default() }] {
        let r = run(f.as_ref(), &config(s, 8, 14)).unwrap();
        assert_eq!(r.archive.len(), 8);
    }
    let mut slow = config(StrategySpec::Bax, 7, 14);
    slow.fast_path = false;
    slow.n_path = 3;
    let fast = config(StrategySpec::Bax, 7, 14);
    assert_eq!(points(&run(f.as_ref(), &slow).unwrap()), points(&run(f.as_ref(), &fast).unwrap()));
}

fn estimate_with(s_hat: Vec<f64>) -> PdpEstimate {
    let n = s_hat.len();
    PdpEstimate::from_parts(vec![0], (0..n).map(|g| vec![g as f64]).collect(), vec![0.0; n], s_hat, 0.05).unwrap()
}

#[test]
fn adaptive_constraint_examples() {
    let q = crate::stats::two_sided_quantile(0.05);
    assert!(check_adaptive_constraint(&[estimate_with(vec![0.0; 3])], 1e-12, 0.05));
    assert!(!check_adaptive_constraint(&[estimate_with(vec![1e-6; 3])], 0.0, 0.05));
    let mixed = [estimate_with(vec![1.0 / q]), estimate_with(vec![2.0 / q])];
    assert!(check_adaptive_constraint(&mixed, 1.6, 0.05));
    assert!(!check_adaptive_constraint(&mixed, 1.4, 0.05));
}

#[test]
fn adaptive_phases() {
    let f = branin();
    let a_bobax = |tolerance| StrategySpec::ABobax { k: 2, tolerance, alpha: 0.05, reentrant: false };
    let never = run(f.as_ref(), &config(a_bobax(1e-9), 14, 15)).unwrap();
    assert!(never.trace.iter().all(|r| r.phase == 1));
    let plain = run(f.as_ref(), &config(StrategySpec::Bobax { k: 2 }, 14, 15)).unwrap();
    assert_eq!(points(&never), points(&plain));

    let always = run(f.as_ref(), &config(a_bobax(1e9), 14, 15)).unwrap();
    assert!(always.trace.iter().all(|r| r.phase == 2));
    let ei = run(f.as_ref(), &config(StrategySpec::BoEi, 14, 15)).unwrap();
    assert_eq!(points(&always), points(&ei));

    let w = plain.trace[6].ci_halfwidth;
    let mid = run(f.as_ref(), &config(a_bobax(w), 14, 15)).unwrap();
    let phases: Vec<u8> = mid.trace.iter().map(|r| r.phase).collect();
    assert!(phases.windows(2).all(|p| p[0] <= p[1]));
    let flip = phases.iter().position(|&p| p == 2).expect("constraint is reachable");
    assert!(mid.proposals[mid.config.n_init + flip..].iter().all(|k| *k == ProposalKind::Ei));
}

#[test]
fn validation_errors() {
    let f = branin();
    let mut c = config(StrategySpec::Rs, 4, 0);
    assert!(run(f.as_ref(), &c).is_err());
    c.budget = 10;
    c.pdp_targets = vec![vec![2]];
    assert!(run(f.as_ref(), &c).is_err());
    c.pdp_targets = vec![vec![0, 0]];
    assert!(run(f.as_ref(), &c).is_err());
    let mut k = config(StrategySpec::Bobax { k: 0 }, 10, 0);
    assert!(run(f.as_ref(), &k).is_err());
    k.strategy = StrategySpec::Bax;
    k.kernel = KernelParams::isotropic(3, 0.2, 1.0, 0.0).unwrap();
    assert!(run(f.as_ref(), &k).is_err());
}

#[test]
fn failures_keep_partial_results() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let obj = FnObjective::new("flaky", SearchSpace::unit(2), move |x| {
        if counter.fetch_add(1, Ordering::SeqCst) == 7 {
            f64::NAN
        } else {
            x[0] + x[1]
        }
    });
    let mut cfg = config(StrategySpec::BoEi, 12, 1);
    cfg.grid_size = 3;
    cfg.mc_size = 2;
    cfg.pdp_targets = vec![vec![0]];
    // Ground truth consumes 6 evaluations before the design.
    let err = run(&obj, &cfg).unwrap_err();
    assert_eq!(err.partial.archive.len(), 1);
    assert!(err.partial.error.is_some());
    assert!(!err.partial.is_complete());
    assert!(err.to_string().contains("1 evaluations"));
}

#[test]
fn initial_design_properties() {
    let f = branin();
    for seed in 0..200 {
        let a = initial_design(f.as_ref(), 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert!(a.points().iter().flatten().all(|u| (0.0..=1.0).contains(u)));
    }
    let one = initial_design(f.as_ref(), 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one, initial_design(f.as_ref(), 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
    assert!(initial_design(f.as_ref(), 0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn objectives_without_truth_leave_metrics_empty() {
    struct Opaque(SearchSpace);
    impl Objective for Opaque {
        fn name(&self) -> &str {
            "opaque"
        }
        fn space(&self) -> &SearchSpace {
            &self.0
        }
        fn evaluate(&self, x: &[f64]) -> Result<f64> {
            Ok(x.iter().sum())
        }
        fn has_ground_truth(&self) -> bool {
            false
        }
    }
    let r = run(&Opaque(SearchSpace::unit(2)), &config(StrategySpec::BoEi, 6, 2)).unwrap();
    assert!(r.ground_truth.is_none());
    assert!(r.trace.iter().all(|row| row.d_l1 == vec![None] && row.rho == vec![None]));
    assert_eq!(r.optimum, None);
}

#[test]
fn outputs_round_trip() {
    let obj = FnObjective::new("sum", SearchSpace::from_bounds(&[(0.0, 2.0), (1.0, 3.0)]).unwrap(), |x| x[0] + x[1])
        .with_optimum(Optimum { value: 1.0, points: vec![vec![0.0, 1.0]] });
    let mut cfg = config(StrategySpec::ABobax { k: 2, tolerance: 0.5, alpha: 0.05, reentrant: false }, 7, 3);
    cfg.pdp_targets = vec![vec![0], vec![0, 1]];
    cfg.grid_size = 3;
    let r = run(&obj, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write_to_dir(dir.path()).unwrap();
    let back = RunResult::read_json(&dir.path().join("result.json")).unwrap();
    assert_eq!(back, r);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,evaluations,incumbent,d_l1_0,d_l1_0_1,rho_0,rho_0_1,ci_halfwidth,phase,proposal_kind,wall_ms"
    );
    assert_eq!(lines.count(), 4);
    let archive = std::fs::read_to_string(dir.path().join("archive.csv")).unwrap();
    assert!(archive.starts_with("x0,x1,cost,proposal_kind\n"));
    assert_eq!(archive.lines().count(), 8);
}
