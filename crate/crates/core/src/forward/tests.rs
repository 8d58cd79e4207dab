use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::model::{example2_spec, ControlLaw, Curve, GeneralSpec, ImpulseSchedule, LQSpec, Problem};
use crate::randkit::MarkSpace;

fn unit_marks() -> MarkSpace {
    MarkSpace::single(0.0, 1.0).unwrap()
}

fn run(spec: impl Problem + 'static, law: &ControlLaw, cfg: &SimConfig, seed: u64) -> PathEnsemble {
    simulate(Arc::new(spec), law, &ImpulseSchedule::none(), &unit_marks(), cfg, seed).unwrap()
}

fn terminals(ens: &PathEnsemble) -> Vec<f64> {
    ens.summaries().iter().map(|s| s.x_terminal).collect()
}

#[test]
fn zero_dynamics_stay_at_start() {
    let ens = run(GeneralSpec::new(1.0, 2.5).with_mean_field(false), &ControlLaw::zero(), &SimConfig::new(50, 0.05), 1);
    let all_const = ens.fold_paths(|| true, |ok, _, p| *ok &= p.x().iter().chain(p.x_left()).all(|&x| x == 2.5), |a, b| *a &= b).unwrap();
    assert!(all_const);
    assert_eq!(ens.picard_iterations(), 1);
}

#[test]
fn unit_drift_reaches_horizon() {
    let spec = GeneralSpec::new(2.0, 0.0).with_drift(|_, _| 1.0).with_mean_field(false);
    let ens = run(spec, &ControlLaw::zero(), &SimConfig::new(20, 0.01), 2);
    assert!(terminals(&ens).iter().all(|&x| (x - 2.0).abs() < 1e-12));
}

#[test]
fn unit_jumps_count_events() {
    let spec = GeneralSpec::new(1.0, 0.0).with_jump(|_, _| 1.0).with_mean_field(false);
    let ens = run(spec, &ControlLaw::zero(), &SimConfig::new(200, 0.1), 3);
    for s in ens.summaries() {
        assert_eq!(s.x_terminal, s.jumps as f64);
    }
}

#[test]
fn example2_progressive_closed_loop() {
    let ex = example2_spec(&unit_marks());
    let ens = run(ex.spec, &ex.progressive, &SimConfig::new(100, 1e-3), 4);
    for s in ens.summaries() {
        assert!((s.x_terminal - 0.4).abs() < 2e-3, "X1 = {}", s.x_terminal);
    }
    // continuous at every node, jumps included
    let cont = ens.fold_paths(|| true, |ok, _, p| *ok &= p.x().iter().zip(p.x_left()).all(|(a, b)| a == b), |a, b| *a &= b).unwrap();
    assert!(cont);
}

#[test]
fn example2_grid_refinement() {
    // The Euler map preserves P̃_k X_k step by step, so refinement changes X_1 by rounding only.
    let ex = example2_spec(&unit_marks());
    let x1 = |dt: f64| run(ex.spec.clone(), &ex.progressive, &SimConfig::new(1, dt), 5).summaries()[0].x_terminal;
    let (a, b) = (x1(0.01), x1(0.005));
    assert!((a - b).abs() <= 0.01);
    assert!((a - 0.4).abs() < 1e-12);
}

#[test]
fn euler_error_is_first_order() {
    let spec = GeneralSpec::new(1.0, 1.0).with_drift(|p, _| -p.x * (1.0 + p.x)).with_mean_field(false);
    let exact = 1.0 / (2.0 * std::f64::consts::E - 1.0);
    let err = |dt: f64| (run(spec.clone(), &ControlLaw::zero(), &SimConfig::new(1, dt), 5).summaries()[0].x_terminal - exact).abs();
    let ratio = err(0.01) / err(0.005);
    assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
}

#[test]
fn picard_mean_matches_average() {
    let spec =
        LQSpec { a1: (-0.5).into(), b1: 0.8.into(), a2: 0.3.into(), a3: 0.2.into(), b3: 0.1.into(), c1: 1.0.into(), ..Default::default() };
    let law = ControlLaw::predictable(|_, x, m, _| -0.5 * x + 0.2 * m);
    let cfg = SimConfig { paths: 500, dt: 0.01, picard_tol: 1e-11, picard_max: 50 };
    let ens = run(spec, &law, &cfg, 6);
    assert!(ens.picard_iterations() > 1);
    let d = ens.mean().values().iter().zip(ens.node_average()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-11, "{d}");
}

#[test]
fn picard_divergence_is_detected() {
    let spec = GeneralSpec::new(1.0, 1.0).with_drift(|p, _| 60.0 * p.m);
    let cfg = SimConfig { paths: 4, dt: 0.01, picard_tol: 1e-14, picard_max: 100 };
    let r = simulate(Arc::new(spec), &ControlLaw::zero(), &ImpulseSchedule::none(), &unit_marks(), &cfg, 1);
    assert!(matches!(r, Err(ForwardError::PicardDiverged { .. })), "{r:?}");
}

#[test]
fn blow_up_is_reported() {
    let spec = GeneralSpec::new(1.0, 1.0).with_drift(|p, _| p.x * p.x * 1e3).with_mean_field(false);
    let r = simulate(Arc::new(spec), &ControlLaw::zero(), &ImpulseSchedule::none(), &unit_marks(), &SimConfig::new(2, 0.01), 1);
    assert!(matches!(r, Err(ForwardError::NonFiniteState { .. })));
}

#[test]
fn impulses_shift_state() {
    let spec = GeneralSpec::new(1.0, 0.0).with_loadings(Curve::Const(2.0), Curve::zero()).with_mean_field(false);
    let imp = ImpulseSchedule::at_times(vec![0.25, 0.5], vec![1.0]);
    let ens = simulate(Arc::new(spec), &ControlLaw::zero(), &imp, &unit_marks(), &SimConfig::new(3, 0.1), 1).unwrap();
    // second epoch has no value: zero impulse
    assert!(terminals(&ens).iter().all(|&x| x == 2.0));
    assert!(ens.template().contains(&0.25));
}

#[test]
fn path_norms_of_simple_paths() {
    let zero = run(GeneralSpec::new(1.0, 0.0).with_mean_field(false), &ControlLaw::zero(), &SimConfig::new(5, 0.1), 1);
    assert_eq!(path_norms(&zero), PathNorms { sup_sq: 0.0, int_sq: 0.0 });
    let one = run(GeneralSpec::new(1.0, 1.0).with_mean_field(false), &ControlLaw::zero(), &SimConfig::new(5, 0.1), 1);
    let n = path_norms(&one);
    assert!((n.sup_sq - 1.0).abs() < 1e-12 && (n.int_sq - 1.0).abs() < 1e-12);
    let ramp =
        run(GeneralSpec::new(1.0, 0.0).with_drift(|_, _| 1.0).with_mean_field(false), &ControlLaw::zero(), &SimConfig::new(5, 0.01), 1);
    let n = path_norms(&ramp);
    assert!((n.sup_sq - 1.0).abs() < 1e-12);
    // trapezoid error for ∫t² is h²/6
    assert!((n.int_sq - 1.0 / 3.0).abs() < 2e-5);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = LQSpec { a1: (-0.5).into(), b1: 0.5.into(), a2: 0.4.into(), a3: 0.3.into(), c1: 1.0.into(), ..Default::default() };
    let law = ControlLaw::predictable(|_, x, _, _| -x);
    let cfg = SimConfig::new(1000, 0.01);
    let go = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run(spec.clone(), &law, &cfg, 99))
    };
    let (a, b) = (go(1), go(3));
    assert_eq!(a.summaries(), b.summaries());
    assert_eq!(a.mean(), b.mean());
}

#[test]
fn first_variation_of_zero_direction_vanishes() {
    let ex = example2_spec(&unit_marks());
    let base = run(ex.spec, &ex.progressive, &SimConfig::new(50, 0.01), 7);
    let var = simulate_first_variation(&base, &Direction::zero(), 0.1, 0.1).unwrap();
    assert!(var.summaries().iter().all(|s| s.sup_sq == 0.0));
}

#[test]
fn lq_variation_is_linear_and_exact() {
    let spec = LQSpec {
        a1: (-0.5).into(),
        b1: 0.5.into(),
        a2: 0.4.into(),
        c2: 0.2.into(),
        a3: 0.3.into(),
        c3: 0.5.into(),
        a4: 0.1.into(),
        c4: 0.3.into(),
        c1: 1.0.into(),
        ..Default::default()
    };
    let base = run(spec, &ControlLaw::predictable(|_, x, _, _| -x), &SimConfig::new(200, 0.01), 8);
    let dir = Direction::toward(ControlLaw::new(|t, _, _, _| t, |_, x, _, _| 1.0 - x));
    let v1 = simulate_first_variation(&base, &dir, 0.1, 0.0).unwrap();
    let v2 = simulate_first_variation(&base, &dir, 0.2, 0.0).unwrap();
    for (a, b) in v1.summaries().iter().zip(v2.summaries()) {
        assert!((2.0 * a.x_terminal - b.x_terminal).abs() < 1e-12);
    }
    let pert = simulate_perturbed(&base, &dir, 0.1, 0.0).unwrap();
    for ((p, b), v) in pert.summaries().iter().zip(base.summaries()).zip(v1.summaries()) {
        assert!((p.x_terminal - b.x_terminal - v.x_terminal).abs() < 1e-9);
    }
}

#[test]
fn drift_stability_estimate() {
    // S²-distance between solutions differing by an additive drift d scales like (∫|d|λdt)².
    let ratios: Vec<f64> = [0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&d| {
            let base = LQSpec { a1: (-0.3).into(), a2: 0.3.into(), a3: 0.2.into(), ..Default::default() };
            let shifted = GeneralSpec::new(1.0, 1.0)
                .with_drift(move |p, _| -0.3 * p.x + d)
                .with_diffusion(|p, _| 0.3 * p.x)
                .with_jump(|p, _| 0.2 * p.x)
                .with_mean_field(false);
            let law = ControlLaw::zero();
            let a = run(base, &law, &SimConfig::new(300, 0.01), 10);
            let b = run(shifted, &law, &SimConfig::new(300, 0.01), 10);
            let dist = PathEnsemble::fold_paths_zip(
                &[&a, &b],
                || 0.0,
                |s, _, p| {
                    *s += p[0].x().iter().zip(p[1].x()).map(|(u, v)| (u - v).powi(2)).fold(0.0, f64::max);
                },
                |s, o| *s += o,
            )
            .unwrap()
                / 300.0;
            dist / (d * d)
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    assert!(hi / lo < 1.5, "{ratios:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cancelling_jumps_leave_paths_continuous(seed in 0u64..10_000, k in -2.0f64..2.0) {
        let spec = GeneralSpec::new(1.0, 1.0)
            .with_drift(move |p, _| k * p.u)
            .with_jump(|p, _| p.x.sin() + p.u)
            .with_compensated(|p, _| -p.x.sin() - p.u)
            .with_mean_field(false);
        let marks = MarkSpace::single(0.0, 3.0).unwrap();
        let law = ControlLaw::new(|_, x, _, _| -x, |_, x, _, _| 0.5 * x);
        let ens = simulate(Arc::new(spec), &law, &ImpulseSchedule::none(), &marks, &SimConfig::new(8, 0.05), seed).unwrap();
        let ok = ens.fold_paths(|| true, |ok, _, p| *ok &= p.x().iter().zip(p.x_left()).all(|(a, b)| a == b), |a, b| *a &= b).unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn replay_is_deterministic(seed in 0u64..1000) {
        let ex = example2_spec(&unit_marks());
        let ens = run(ex.spec, &ex.progressive, &SimConfig::new(4, 0.05), seed);
        let a = ens.with_path(2, |p| (p.times().to_vec(), p.x().to_vec())).unwrap();
        let b = ens.with_path(2, |p| (p.times().to_vec(), p.x().to_vec())).unwrap();
        prop_assert_eq!(a, b);
    }
}
