use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::archive::Archive;
use crate::gp::KernelParams;
use crate::pdp::{build_grid, execution_path, joint_execution_path, McSample};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn archive(r: &mut ChaCha8Rng, n: usize, d: usize) -> Archive {
    let mut a = Archive::new(d);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
        let y = x.iter().map(|v| (4.0 * v).cos()).sum::<f64>() + x[0] * x[0];
        a.push(x, y).unwrap();
    }
    a
}

fn small_path(d: usize, seed: u64) -> Arc<ExecutionPath> {
    Arc::new(execution_path(&build_grid(&SearchSpace::unit(d), &[0], 4).unwrap(), &McSample::draw(d, 3, seed)).unwrap())
}

#[test]
fn ei_closed_forms() {
    assert_relative_eq!(ei_from_moments(1.0, 1.0, 1.0), 0.398_942_280_401_432_7, epsilon = 1e-12);
    assert_eq!(ei_from_moments(0.0, 0.0, 1.0), 1.0);
    assert_eq!(ei_from_moments(2.0, 0.0, 1.0), 0.0);
    assert!(ei_from_moments(5.0, 0.1, 0.0) >= 0.0);
}

#[test]
fn ei_vanishes_at_noiseless_incumbent() {
    let a = Archive::from_pairs(1, [(vec![0.2], 1.0), (vec![0.7], 3.0)]).unwrap();
    let m = GpModel::fit(&a, &KernelParams::isotropic(1, 0.3, 1.0, 0.0).unwrap()).unwrap();
    let ei = expected_improvement(&m, &DMatrix::from_row_slice(1, 1, &[0.2]), 1.0).unwrap();
    assert!(ei[0] < 1e-9);
}

#[test]
fn ei_is_shift_invariant() {
    let mut r = rng(1);
    let a = archive(&mut r, 8, 2);
    let shifted = Archive::from_pairs(2, a.points().iter().cloned().zip(a.costs().iter().map(|y| y + 123.0))).unwrap();
    let p = KernelParams::isotropic(2, 0.3, 1.0, 1e-6).unwrap();
    let batch = draw_candidates(&SearchSpace::unit(2), 50, &mut r);
    let e1 = expected_improvement(&GpModel::fit(&a, &p).unwrap(), &batch, a.best_cost().unwrap()).unwrap();
    let e2 = expected_improvement(&GpModel::fit(&shifted, &p).unwrap(), &batch, shifted.best_cost().unwrap()).unwrap();
    for (x, y) in e1.iter().zip(e2.iter()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn lcb_arithmetic() {
    // Far apart points with a tiny lengthscale: the posterior at the first is
    // exact, the second reverts to the prior.
    let a = Archive::from_pairs(1, [(vec![0.0], 1.0)]).unwrap();
    let m = GpModel::fit_with(&a, &KernelParams::isotropic(1, 0.01, 1.0, 0.0).unwrap(), crate::gp::TargetTransform::Identity).unwrap();
    let batch = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (mean, var) = m.predict_marginal(&batch).unwrap();
    assert_relative_eq!(mean[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(var[1], 1.0, epsilon = 1e-12);
    let s = lcb_score(&m, &batch, 2.0, UncertaintyTerm::Variance).unwrap();
    assert_relative_eq!(s[0], -1.0, epsilon = 1e-12);
    assert_relative_eq!(s[1], 2.0, epsilon = 1e-12);
    assert_eq!(argmax_finite(&s), Some(1));
    assert!(lcb_score(&m, &batch, -1.0, UncertaintyTerm::Variance).is_err());
}

#[test]
fn lcb_limits() {
    let mut r = rng(2);
    let a = archive(&mut r, 6, 2);
    let m = GpModel::fit(&a, &KernelParams::isotropic(2, 0.3, 1.0, 1e-6).unwrap()).unwrap();
    let batch = draw_candidates(&SearchSpace::unit(2), 200, &mut r);
    let (mean, var) = m.predict_marginal(&batch).unwrap();
    let s0 = lcb_score(&m, &batch, 0.0, UncertaintyTerm::Variance).unwrap();
    assert_eq!(argmax_finite(&s0), Some(mean.argmin().0));
    assert_eq!(posterior_variance_score(&m, &batch).unwrap(), var);
    let sd = lcb_score(&m, &batch, 1.0, UncertaintyTerm::StdDev).unwrap();
    assert_relative_eq!(sd[3], -mean[3] + var[3].sqrt(), epsilon = 1e-12);
}

#[test]
fn variance_score_limits() {
    let a = Archive::from_pairs(1, [(vec![0.0], 1.0), (vec![0.02], 2.0)]).unwrap();
    let m = GpModel::fit_with(&a, &KernelParams::isotropic(1, 0.01, 1.5, 0.0).unwrap(), crate::gp::TargetTransform::Identity).unwrap();
    let v = posterior_variance_score(&m, &DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).unwrap();
    assert!(v[0] < 1e-9);
    assert_relative_eq!(v[1], 1.5, epsilon = 1e-12);
}

#[test]
fn eig_is_maximal_on_the_path() {
    let mut r = rng(3);
    let a = archive(&mut r, 5, 2);
    let m = GpModel::fit(&a, &KernelParams::isotropic(2, 0.3, 1.0, 0.0).unwrap()).unwrap();
    let path = small_path(2, 4);
    let cfg = EigConfig::new(Arc::clone(&path));
    let on = path.points().row(5).into_owned();
    let mut batch = DMatrix::zeros(4, 2);
    batch.row_mut(0).copy_from(&on);
    for i in 1..4 {
        batch[(i, 0)] = on[0] + 0.02 * i as f64;
        batch[(i, 1)] = on[1] - 0.01 * i as f64;
    }
    let g = eig_pdp(&m, &batch, &cfg, &mut rng(0)).unwrap();
    let (_, prior) = m.standardized_marginal(&batch).unwrap();
    assert_relative_eq!(g[0], 0.5 * (prior[0] / VARIANCE_FLOOR).ln(), max_relative = 0.05);
    assert_eq!(argmax_finite(&g), Some(0));
}

#[test]
fn eig_vanishes_at_noiseless_archive_points() {
    let mut r = rng(5);
    let a = archive(&mut r, 6, 2);
    let m = GpModel::fit(&a, &KernelParams::isotropic(2, 0.3, 1.0, 0.0).unwrap()).unwrap();
    let g = eig_pdp(&m, &a.inputs(), &EigConfig::new(small_path(2, 6)), &mut rng(0)).unwrap();
    assert!(g.iter().all(|&v| v < 1e-6), "{g}");
}

#[test]
fn fast_and_slow_estimators_agree() {
    let mut r = rng(7);
    for trial in 0..5 {
        let d = 1 + trial % 3;
        let a = archive(&mut r, 4 + trial, d);
        let m = GpModel::fit(&a, &KernelParams::isotropic(d, 0.4, 1.0, 1e-4).unwrap()).unwrap();
        let path = small_path(d, trial as u64);
        let batch = draw_candidates(&SearchSpace::unit(d), 30, &mut r);
        let fast = eig_pdp_unclamped(&m, &batch, &EigConfig::new(Arc::clone(&path)), &mut rng(1)).unwrap();
        for seed in [1, 2] {
            let cfg = EigConfig { n_path: 5, path: Arc::clone(&path), fast_path: false };
            let terms = eig_terms(&m, &batch, &cfg, &mut rng(seed)).unwrap();
            for c in &terms.conditioned {
                assert!((c - &terms.conditioned[0]).amax() <= 1e-9);
            }
            assert!((terms.gain() - &fast).amax() <= 1e-9);
        }
    }
}

#[test]
fn eig_is_non_negative_and_grows_with_the_path() {
    let mut r = rng(8);
    for trial in 0..10 {
        let d = 1 + trial % 4;
        let a = archive(&mut r, 3 + trial, d);
        let params = KernelParams::isotropic(d, r.random_range(0.1..0.6), 1.0, 10f64.powf(r.random_range(-6.0..-3.0))).unwrap();
        let m = GpModel::fit(&a, &params).unwrap();
        let space = SearchSpace::unit(d);
        let mc = McSample::draw(d, 5, trial as u64);
        let short = Arc::new(joint_execution_path(&space, &[vec![0]], 5, &mc).unwrap());
        let targets: Vec<Vec<usize>> = (0..d).map(|j| vec![j]).collect();
        let long = Arc::new(joint_execution_path(&space, &targets, 5, &mc).unwrap());
        let batch = draw_candidates(&space, 40, &mut r);
        let g_short = eig_pdp_unclamped(&m, &batch, &EigConfig::new(short), &mut rng(0)).unwrap();
        let g_long = eig_pdp_unclamped(&m, &batch, &EigConfig::new(long), &mut rng(0)).unwrap();
        for (s, l) in g_short.iter().zip(g_long.iter()) {
            assert!(*s >= -EIG_TOLERANCE);
            assert!(*l >= s - 1e-9, "{l} < {s}");
        }
    }
}

#[test]
fn eig_config_validation() {
    let cfg = EigConfig { n_path: 0, path: small_path(2, 0), fast_path: true };
    assert!(cfg.validate().is_err());
}

#[test]
fn eibax_arithmetic() {
    let ei = DVector::from_vec(vec![1.0, 1.0]);
    let eig = DVector::from_vec(vec![1.0, 4.0]);
    // min-max of (1, 4) is (0, 1); use a third value to get 0.25.
    let eig3 = DVector::from_vec(vec![1.75, 4.0, 1.0]);
    let ei3 = DVector::from_vec(vec![1.0, 1.0, 0.0]);
    let s = eibax_combine(&ei3, &eig3, 1.0, 1);
    assert_relative_eq!(s[0], 0.25, epsilon = 1e-12);
    assert_relative_eq!(s[1], 1.0, epsilon = 1e-12);
    assert_eq!(eibax_combine(&ei, &eig, 1.0, 1)[1], 1.0);
    let vanishing = eibax_combine(&DVector::from_vec(vec![0.3, 0.7]), &eig, 1e-300, 1);
    assert_relative_eq!(vanishing[1], 0.7);
    assert_eq!(minmax_scale(&DVector::from_vec(vec![2.0, 2.0])), DVector::from_vec(vec![1.0, 1.0]));
}

#[test]
fn eibax_score_top_gain_equals_ei() {
    let mut r = rng(9);
    let a = archive(&mut r, 6, 2);
    let m = GpModel::fit(&a, &KernelParams::isotropic(2, 0.3, 1.0, 1e-6).unwrap()).unwrap();
    let cfg = EigConfig::new(small_path(2, 1));
    let batch = draw_candidates(&SearchSpace::unit(2), 40, &mut r);
    let best = a.best_cost().unwrap();
    let s = eibax_score(&m, &batch, best, &cfg, 5.0, 6, &mut rng(0)).unwrap();
    let ei = expected_improvement(&m, &batch, best).unwrap();
    let g = eig_pdp(&m, &batch, &cfg, &mut rng(0)).unwrap();
    let top = g.argmax().0;
    assert_relative_eq!(s[top], ei[top], epsilon = 1e-15);
    assert!(eibax_score(&m, &batch, best, &cfg, 0.0, 6, &mut rng(0)).is_err());
}

#[test]
fn optimizer_finds_target_candidate() {
    let space = SearchSpace::unit(3);
    let cands = draw_candidates(&space, 100, &mut rng(4));
    let target = cands.row(37).into_owned();
    let choice = optimize_acquisition(
        |b| Ok(DVector::from_iterator(b.nrows(), b.row_iter().map(|r| -(r - &target).norm()))),
        &space,
        100,
        &mut rng(4),
    )
    .unwrap();
    assert_eq!(choice.index, 37);
    assert_eq!(choice.point, target.iter().copied().collect::<Vec<_>>());
}

#[test]
fn optimizer_breaks_ties_by_index() {
    let space = SearchSpace::unit(2);
    let choice = optimize_acquisition(|b| Ok(DVector::from_element(b.nrows(), 3.0)), &space, 20, &mut rng(5)).unwrap();
    assert_eq!(choice.index, 0);
    let nan = optimize_acquisition(|b| Ok(DVector::from_element(b.nrows(), f64::NAN)), &space, 20, &mut rng(5));
    assert!(matches!(nan, Err(Error::Optimizer(_))));
    assert!(optimize_acquisition(|b| Ok(DVector::zeros(b.nrows())), &space, 0, &mut rng(5)).is_err());
}

#[test]
fn optimizer_is_deterministic_and_monotone_invariant() {
    let mut r = rng(6);
    let a = archive(&mut r, 7, 2);
    let m = GpModel::fit(&a, &KernelParams::isotropic(2, 0.3, 1.0, 1e-6).unwrap()).unwrap();
    let space = SearchSpace::unit(2);
    let best = a.best_cost().unwrap();
    let run = |seed, transform: fn(f64) -> f64| {
        optimize_acquisition(|b| Ok(expected_improvement(&m, b, best)?.map(transform)), &space, 500, &mut rng(seed)).unwrap()
    };
    let plain = run(10, |v| v);
    assert_eq!(plain, run(10, |v| v));
    assert_eq!(plain.point, run(10, f64::exp).point);
}
