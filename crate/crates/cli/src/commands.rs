//! One function per subcommand. Each writes its artifacts into the sink and reports a status.

use mfsmp::backward::BackwardError;
use mfsmp::costeval::CostError;
use mfsmp::costeval::{compare_structures, cost_of, CostEstimate, StructureComparison};
use mfsmp::forward::{simulate, simulate_with_mean, Direction, PathEnsemble, SimConfig};
use mfsmp::lq::{example2_curves, lq_nodes, Example2Curves, IntegratorGap};
use mfsmp::randkit::MarkSpace;
use mfsmp::smp::{
    check_smp, directional_derivative_check, duality_residual, variation_order_check, DualityReport, GradientReport, SMPReport,
    VariationReport,
};
use mfsmp::stats::{log_log_slope, Estimate};
use serde::Serialize;

use crate::config::{Kind, RunConfig};
use crate::output::Sink;
use crate::scenario::{lq_solution, lq_system, Scenario};
use crate::{Failure, Status};

/// Echo of the settings that determine a run's output.
#[derive(Debug, Serialize)]
pub struct Settings {
    pub kind: Kind,
    pub law: Option<String>,
    pub shift: f64,
    pub paths: usize,
    pub dt: f64,
    pub seed: Option<u64>,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub marks: MarkSpace,
}

impl Settings {
    pub fn of(cfg: &RunConfig, law: Option<&str>) -> Self {
        Self {
            kind: cfg.spec.kind,
            law: law.map(str::to_owned),
            shift: cfg.spec.shift,
            paths: cfg.sim.paths,
            dt: cfg.sim.dt,
            seed: cfg.seed,
            picard_tol: cfg.sim.picard_tol,
            picard_max: cfg.sim.picard_max,
            marks: cfg.marks.clone(),
        }
    }
}

fn run_scenario(cfg: &RunConfig, sc: &Scenario, sim: &SimConfig, seed: u64) -> Result<PathEnsemble, Failure> {
    Ok(simulate(sc.problem.clone(), &sc.law, &sc.impulses, &cfg.marks, sim, seed)?)
}

fn column(ens: &PathEnsemble, f: impl Fn(&mfsmp::forward::PathSummary) -> f64) -> Estimate {
    Estimate::from_samples(&ens.summaries().iter().map(f).collect::<Vec<_>>())
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub picard_iterations: usize,
    pub picard_change: f64,
    pub x_terminal: Estimate,
    pub mean_terminal: f64,
    pub jumps: Estimate,
    pub sup_sq: Estimate,
    pub cost: Option<CostEstimate>,
    pub y0: Option<f64>,
    pub note: Option<String>,
}

const SAMPLE_PATHS: usize = 3;

pub fn cmd_simulate(cfg: &RunConfig, sink: &mut Sink) -> Result<Status, Failure> {
    let seed = cfg.require_seed()?;
    let sc = Scenario::build(&cfg.spec, &cfg.marks)?;
    let ens = run_scenario(cfg, &sc, &cfg.sim, seed)?;

    let k = cfg.sim.paths.min(SAMPLE_PATHS);
    let samples = (0..k)
        .map(|i| ens.with_path(i, |p| p.template_positions().map(|j| p.x()[j]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut header = vec!["t".to_owned(), "mean".to_owned()];
    header.extend((0..k).map(|i| format!("path_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = ens.template().iter().zip(ens.node_average()).enumerate().map(|(n, (&t, &m))| {
        let mut row = vec![t, m];
        row.extend(samples.iter().map(|s| s[n]));
        row
    });
    sink.csv("trajectory.csv", &header, rows.collect::<Vec<_>>())?;

    let (cost, y0, note) = match cost_of(&ens) {
        Ok((c, b)) => (Some(c), Some(b.y0), None),
        Err(CostError::Backward(BackwardError::DriverNotLinear(why))) => (None, None, Some(format!("cost not evaluated: {why}"))),
        Err(e) => return Err(e.into()),
    };
    let summary = SimulationSummary {
        picard_iterations: ens.picard_iterations(),
        picard_change: ens.picard_change(),
        x_terminal: column(&ens, |s| s.x_terminal),
        mean_terminal: ens.mean().terminal(),
        jumps: column(&ens, |s| s.jumps as f64),
        sup_sq: column(&ens, |s| s.sup_sq),
        cost,
        y0,
        note,
    };
    sink.json("summary.json", &cfg.command, &Settings::of(cfg, Some(&sc.law_name)), &summary)?;
    Ok(Status::Pass)
}

#[derive(Debug, Serialize)]
pub struct LqSummary {
    pub lambda: f64,
    pub y0_hat: f64,
    pub fixed_point_residual: f64,
    pub fixed_point_iterations: usize,
    pub riccati_residual: f64,
    /// Closed forms against RK4.
    pub integrator_gap: IntegratorGap,
    pub pi_terminal: f64,
    pub delta: f64,
    pub sigma_terminal: f64,
    /// `−M q(T)`
    pub sigma_terminal_expected: f64,
    pub impulse_times: Vec<f64>,
    pub impulse_values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct ComparisonCurvesSummary {
    pub lambda: f64,
    pub a: f64,
    pub j_prog: f64,
    pub j_pred: f64,
    pub q: f64,
    pub progressive_value_terminal: f64,
    pub predictable_value_terminal: f64,
}

#[derive(Debug, Serialize)]
struct SolveSettings {
    kind: Kind,
    lambda: f64,
    lq_dt: Option<f64>,
}

pub fn cmd_solve_lq(cfg: &RunConfig, sink: &mut Sink) -> Result<Status, Failure> {
    let lambda = cfg.marks.total_mass();
    let settings = SolveSettings { kind: cfg.spec.kind, lambda, lq_dt: cfg.spec.lq_dt };
    match cfg.spec.kind {
        Kind::Example2 => {
            let nodes = lq_nodes(1.0, cfg.spec.lq_dt.unwrap_or(1e-3), &[])?;
            let c: Example2Curves = example2_curves(lambda, &nodes)?;
            let rows = nodes.iter().enumerate().map(|(i, &t)| {
                vec![t, c.progressive_value.values()[i], c.predictable_value.values()[i], -0.5, c.x_prog.values()[i], c.x_pred.values()[i]]
            });
            sink.csv("curves.csv", &["t", "progressive_value", "predictable_value", "q", "x_prog", "x_pred"], rows.collect::<Vec<_>>())?;
            let summary = ComparisonCurvesSummary {
                lambda,
                a: c.a,
                j_prog: c.j_prog,
                j_pred: c.j_pred,
                q: -0.5,
                progressive_value_terminal: c.progressive_value.terminal(),
                predictable_value_terminal: c.predictable_value.terminal(),
            };
            sink.json("solution.json", &cfg.command, &settings, &summary)?;
        }
        Kind::Example1 | Kind::Lq => {
            let (lq, times) = lq_system(&cfg.spec)?;
            let sol = lq_solution(&cfg.spec, &lq, &times, &cfg.marks)?;
            let rows = (0..sol.pi.times().len()).map(|i| {
                vec![
                    sol.pi.times()[i],
                    sol.pi.values()[i],
                    sol.sigma.values()[i],
                    sol.q.values()[i],
                    sol.p.values()[i],
                    sol.mean.values()[i],
                    sol.ybar.values()[i],
                ]
            });
            sink.csv("curves.csv", &["t", "pi", "sigma", "q", "p", "mean", "ybar"], rows.collect::<Vec<_>>())?;
            let summary = LqSummary {
                lambda,
                y0_hat: sol.y0_hat,
                fixed_point_residual: sol.residual,
                fixed_point_iterations: sol.iterations,
                riccati_residual: sol.riccati_residual(&lq),
                integrator_gap: sol.integrator_gap(&lq),
                pi_terminal: sol.pi.terminal(),
                delta: lq.mean_weight,
                sigma_terminal: sol.sigma.terminal(),
                sigma_terminal_expected: -lq.terminal_slope * sol.q.terminal(),
                impulse_times: sol.impulse_times.clone(),
                impulse_values: sol.impulse_values.clone(),
            };
            sink.json("solution.json", &cfg.command, &settings, &summary)?;
        }
        Kind::Nonlinear => return Err(Failure::Config("solve-lq needs an LQ system or example2".into())),
    }
    Ok(Status::Pass)
}

/// Pooled duality residual over `replicates` independently seeded ensembles.
pub fn pooled_duality(
    cfg: &RunConfig,
    sc: &Scenario,
    seed: u64,
    replicates: usize,
    direction: &Direction,
) -> Result<Option<DualityReport>, Failure> {
    if replicates < 2 {
        return Ok(None);
    }
    let sim = SimConfig { paths: (cfg.sim.paths / replicates).max(2), ..cfg.sim.clone() };
    let reports = (0..replicates as u64)
        .map(|r| {
            let base = run_scenario(cfg, sc, &sim, seed.wrapping_add(1 + r))?;
            let other = mfsmp::forward::simulate_perturbed(&base, direction, 1.0, 1.0)?;
            Ok(duality_residual(&base, &other, sc.adjoints.as_ref())?)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(DualityReport::pooled(&reports))
}

pub fn cmd_verify_smp(cfg: &RunConfig, sink: &mut Sink) -> Result<Status, Failure> {
    let seed = cfg.require_seed()?;
    let sc = Scenario::build(&cfg.spec, &cfg.marks)?;
    let adj = sc.adjoints.as_ref().ok_or_else(|| Failure::Config(format!("no adjoint is known for {:?}", sc.kind)))?;
    let ens = run_scenario(cfg, &sc, &cfg.sim, seed)?;
    let mut report: SMPReport = check_smp(&ens, adj, &cfg.tolerances)?;
    let direction = Direction::toward(sc.law.shifted(cfg.verify.duality_shift));
    report.duality = pooled_duality(cfg, &sc, seed, cfg.verify.duality_replicates, &direction)?.map(|d| d.judged(cfg.tolerances.duality));
    sink.json("smp_report.json", &cfg.command, &Settings::of(cfg, Some(&sc.law_name)), &report)?;
    Ok(if report.passed() { Status::Pass } else { Status::SmpFail })
}

/// Flat row of the comparison CSV.
#[derive(Debug, Serialize)]
struct ComparisonRow {
    lambda: f64,
    j_prog_mc: f64,
    j_prog_se: f64,
    j_prog_closed: f64,
    j_pred_mc: f64,
    j_pred_se: f64,
    j_pred_closed: f64,
    gap_mc: f64,
    gap_se: f64,
    gap_closed: f64,
    progressive_better: bool,
}

impl From<&StructureComparison> for ComparisonRow {
    fn from(c: &StructureComparison) -> Self {
        Self {
            lambda: c.lambda,
            j_prog_mc: c.j_prog_mc,
            j_prog_se: c.j_prog_se,
            j_prog_closed: c.j_prog_closed,
            j_pred_mc: c.j_pred_mc,
            j_pred_se: c.j_pred_se,
            j_pred_closed: c.j_pred_closed,
            gap_mc: c.gap_mc,
            gap_se: c.gap_se,
            gap_closed: c.gap_closed,
            progressive_better: c.progressive_better,
        }
    }
}

pub fn cmd_compare(cfg: &RunConfig, sink: &mut Sink) -> Result<Status, Failure> {
    let seed = cfg.require_seed()?;
    if cfg.compare.lambdas.is_empty() {
        return Err(Failure::Config("[compare] lambdas is empty".into()));
    }
    let results = cfg.compare.lambdas.iter().map(|&l| compare_structures(l, &cfg.sim, seed)).collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<ComparisonRow> = results.iter().map(ComparisonRow::from).collect();
    sink.csv_records("comparison.csv", &rows)?;
    sink.json("comparison.json", &cfg.command, &Settings::of(cfg, None), &results)?;
    Ok(Status::Pass)
}

/// Terminal means under successive grid refinements on the same seed.
#[derive(Debug, Serialize)]
pub struct GridStudy {
    pub dts: Vec<f64>,
    pub terminal_mean: Vec<f64>,
    pub terminal_std_error: Vec<f64>,
    /// `|m(dt_k) − m(dt_{k+1})|`
    pub differences: Vec<f64>,
    /// Whether each difference exceeds three combined standard errors; unresolved ones are sampling noise.
    pub resolved: Vec<bool>,
    /// Log-log slope of the differences against `dt_k`; about 1 for a first-order scheme.
    pub slope: f64,
}

#[derive(Debug, Serialize)]
pub struct ConvergenceSummary {
    pub variation: VariationReport,
    pub gradient: Option<GradientReport>,
    pub grid: GridStudy,
}

pub fn grid_study(cfg: &RunConfig, sc: &Scenario, seed: u64, dts: &[f64]) -> Result<GridStudy, Failure> {
    let mut g = GridStudy {
        dts: dts.to_vec(),
        terminal_mean: vec![],
        terminal_std_error: vec![],
        differences: vec![],
        resolved: vec![],
        slope: f64::NAN,
    };
    for &dt in dts {
        let sim = SimConfig { dt, ..cfg.sim.clone() };
        let ens = match &sc.lq {
            // Exact mean: the refinement then measures the scheme, not the Picard noise.
            Some((_, sol)) => simulate_with_mean(sc.problem.clone(), &sc.law, &sc.impulses, &cfg.marks, &sim, seed, |t| sol.mean_at(t))?,
            None => run_scenario(cfg, sc, &sim, seed)?,
        };
        let x = column(&ens, |s| s.x_terminal);
        g.terminal_mean.push(x.mean);
        g.terminal_std_error.push(x.std_error);
    }
    g.differences = g.terminal_mean.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    g.resolved =
        (0..g.differences.len()).map(|k| g.differences[k] > 3.0 * g.terminal_std_error[k].hypot(g.terminal_std_error[k + 1])).collect();
    if dts.len() >= 3 {
        g.slope = log_log_slope(&dts[..dts.len() - 1], &g.differences);
    }
    Ok(g)
}

pub fn cmd_convergence(cfg: &RunConfig, sink: &mut Sink) -> Result<Status, Failure> {
    let seed = cfg.require_seed()?;
    let conv = &cfg.convergence;
    if conv.eps.len() < 2 || conv.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Failure::Config("[convergence] eps needs at least two positive values".into()));
    }
    let dts = conv.dts.clone().unwrap_or_else(|| (0..4).map(|k| cfg.sim.dt / f64::from(1 << k)).collect());
    if dts.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Failure::Config("[convergence] dts must be positive".into()));
    }
    let sc = Scenario::build(&cfg.spec, &cfg.marks)?;
    let base = run_scenario(cfg, &sc, &cfg.sim, seed)?;
    let direction = if conv.shift == 0.0 { Direction::zero() } else { Direction::toward(sc.law.shifted(conv.shift)) };
    let variation = variation_order_check(&base, &direction, &conv.eps)?;
    let gradient = match &sc.adjoints {
        Some(adj) => Some(directional_derivative_check(&base, &direction, &conv.eps, adj)?),
        None => None,
    };
    let grid = grid_study(cfg, &sc, seed, &dts)?;
    let rows = conv.eps.iter().enumerate().map(|(i, &e)| {
        let (fd, jhat, gap) = gradient.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN), |g| (g.fd[i], g.jhat[i], g.gap[i]));
        vec![e, variation.sup_sq[i], variation.remainder_ratio[i], fd, jhat, gap]
    });
    sink.csv("convergence.csv", &["eps", "sup_sq", "remainder_ratio", "fd", "jhat", "gap"], rows.collect::<Vec<_>>())?;
    let summary = ConvergenceSummary { variation, gradient, grid };
    sink.json("convergence.json", &cfg.command, &Settings::of(cfg, Some(&sc.law_name)), &summary)?;
    Ok(Status::Pass)
}
