//! End-to-end runs through simulation, backward means, costs and the maximum-principle checks.

use std::sync::Arc;

use mfsmp::backward::solve_mean;
use mfsmp::costeval::{agrees, cost_of};
use mfsmp::forward::{simulate, PathEnsemble, SimConfig};
use mfsmp::lq::{example2_costs, fixed_point_y0, lq_nodes, optimal_feedback, RiccatiSolution};
use mfsmp::model::{example1_impulse_times, example1_spec, example2_spec, ImpulseSchedule, LQSpec};
use mfsmp::randkit::MarkSpace;
use mfsmp::smp::{assemble_adjoints, check_smp, SmpTolerances};
use mfsmp::stats::Estimate;

fn lq_reference() -> (LQSpec, RiccatiSolution, MarkSpace) {
    let spec = example1_spec();
    let imp = example1_impulse_times();
    let marks = MarkSpace::from_pairs(&[(0.0, 0.4), (1.0, 0.6)]).unwrap();
    let sol = fixed_point_y0(&spec, marks.total_mass(), &lq_nodes(1.0, 1e-3, &imp).unwrap(), &imp).unwrap();
    (spec, sol, marks)
}

fn run_lq(paths: usize, dt: f64, seed: u64) -> (PathEnsemble, LQSpec, RiccatiSolution) {
    let (spec, sol, marks) = lq_reference();
    let (law, imp) = optimal_feedback(&spec, &sol);
    let ens = simulate(Arc::new(spec.clone()), &law, &imp, &marks, &SimConfig::new(paths, dt), seed).unwrap();
    (ens, spec, sol)
}

#[test]
fn lq_ensemble_mean_tracks_the_exact_mean() {
    let (ens, _, sol) = run_lq(4000, 2e-3, 11);
    let x_t: Vec<f64> = ens.summaries().iter().map(|s| s.x_terminal).collect();
    let est = Estimate::from_samples(&x_t);
    let exact = sol.mean.terminal();
    // Euler bias is O(dt); the sampling band dominates at this size.
    assert!((est.mean - exact).abs() < 4.0 * est.std_error + 5e-3, "{} vs {exact}", est.mean);
}

#[test]
fn lq_backward_mean_starts_at_the_fixed_point() {
    let (ens, _, sol) = run_lq(4000, 2e-3, 12);
    let ybar = solve_mean(&ens).unwrap();
    assert!((ybar.y0 - sol.y0_hat).abs() < 0.01, "{} vs {}", ybar.y0, sol.y0_hat);
    assert!(ybar.ci_half_width > 0.0);
}

#[test]
fn lq_optimum_satisfies_the_maximum_principle_with_several_atoms() {
    let (ens, spec, sol) = run_lq(300, 1e-2, 13);
    let adj = assemble_adjoints(&spec, &sol).unwrap();
    let r = check_smp(&ens, &adj, &SmpTolerances::default()).unwrap();
    assert!(r.passed(), "{r:#?}");
    assert!(r.jump.evaluations > 0);
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let marks = MarkSpace::single(0.0, 1.5).unwrap();
    let ex = example2_spec(&marks);
    let pb: Arc<dyn mfsmp::model::Problem> = Arc::new(ex.spec);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let ens = simulate(pb.clone(), &ex.progressive, &ImpulseSchedule::none(), &marks, &SimConfig::new(1500, 1e-2), 21).unwrap();
            let (c, _) = cost_of(&ens).unwrap();
            (ens.summaries().to_vec(), ens.node_average().to_vec(), c.mean, c.std_error)
        })
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!((a.2, a.3), (b.2, b.3));
}

#[test]
fn comparison_costs_at_other_intensities() {
    for lambda in [0.5, 2.0] {
        let marks = MarkSpace::single(0.0, lambda).unwrap();
        let ex = example2_spec(&marks);
        let (jp, jq) = example2_costs(lambda);
        let pb: Arc<dyn mfsmp::model::Problem> = Arc::new(ex.spec);
        for (law, exact) in [(&ex.progressive, jp), (&ex.predictable, jq)] {
            let ens = simulate(pb.clone(), law, &ImpulseSchedule::none(), &marks, &SimConfig::new(20_000, 5e-3), 31).unwrap();
            let (c, _) = cost_of(&ens).unwrap();
            assert!(agrees(c.mean, c.std_error, exact), "λ = {lambda}: {} vs {exact}", c.mean);
        }
    }
}
