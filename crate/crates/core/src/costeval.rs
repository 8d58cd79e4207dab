//! Monte Carlo evaluation of the cost functional and the progressive/predictable
//! comparison.
//!
//! The jump cost `f` is evaluated with the jump-branch control at realized events.
//! That is the whole observable difference between the progressive and predictable
//! structures, so the two laws of the comparison differ only there and in the drift
//! they induce.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::backward::{solve_mean, BackwardError, BackwardMeanSolution};
use crate::forward::{simulate, ForwardError, Path, PathEnsemble, SimConfig};
use crate::lq::example2_costs;
use crate::model::{example2_spec, Coef, ImpulseSchedule, Point, Problem, Var};
use crate::randkit::{MarkSpace, RandError};
use crate::stats::Estimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("the initial cost depends on y₀ but no backward solution was supplied")]
    MissingY0,
    #[error("running or jump costs read y but no backward mean was supplied")]
    MissingMean,
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Backward(#[from] BackwardError),
    #[error(transparent)]
    Rand(#[from] RandError),
}

/// Means of the five cost terms; they add up to [`CostEstimate::mean`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CostComponents {
    /// `∫∫ l λ(de) dt`
    pub running: f64,
    /// `∫∫ f N(dt, de)`
    pub jump: f64,
    /// `φ(x_T, E[x_T])`
    pub terminal: f64,
    /// `ϕ(y₀)`, deterministic
    pub initial: f64,
    /// `Σ ψ(τ_i, η_i)`
    pub impulse: f64,
}

impl CostComponents {
    pub fn total(&self) -> f64 {
        self.running + self.jump + self.terminal + self.initial + self.impulse
    }

    fn add(&mut self, o: &CostComponents) {
        self.running += o.running;
        self.jump += o.jump;
        self.terminal += o.terminal;
        self.initial += o.initial;
        self.impulse += o.impulse;
    }

    fn scale(&mut self, s: f64) {
        self.running *= s;
        self.jump *= s;
        self.terminal *= s;
        self.initial *= s;
        self.impulse *= s;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    /// `σ̂/√M` of the per-path totals.
    pub std_error: f64,
    pub paths: usize,
    pub components: CostComponents,
    /// Standard errors of the random components.
    pub component_std_errors: CostComponents,
    #[serde(skip)]
    pub per_path: Vec<f64>,
}

impl CostEstimate {
    pub fn half_width(&self, z: f64) -> f64 {
        z * self.std_error
    }
}

fn reads(pb: &dyn Problem, marks: &MarkSpace, c: Coef, vars: &[Var]) -> bool {
    let probes = [
        Point { t: 0.3, x: 0.7, m: -0.4, y: 1.1, my: 0.2, z: 0.0, mz: 0.0, u: 0.5 },
        Point { t: 0.0, x: -1.0, m: 0.9, y: -0.6, my: 1.7, z: 0.0, mz: 0.0, u: -0.8 },
    ];
    let t_scale = pb.horizon();
    probes.iter().any(|p| {
        let p = Point { t: p.t * t_scale, ..*p };
        (0..marks.len()).any(|a| vars.iter().any(|&v| pb.partial(c, v, &p, marks.mark(a)).abs() > 1e-9))
    })
}

fn initial_is_constant(pb: &dyn Problem, marks: &MarkSpace) -> bool {
    let e = marks.mark(0);
    let at = |y: f64| pb.eval(Coef::InitialCost, &Point { y, ..Point::default() }, e);
    let c = at(0.0);
    [1.0, -1.3, 7.5].iter().all(|&y| at(y) == c)
}

/// Per-path cost terms (without the deterministic initial cost).
pub(crate) fn path_costs(pb: &dyn Problem, marks: &MarkSpace, p: &Path, ybar: Option<&BackwardMeanSolution>) -> CostComponents {
    let times = p.times();
    let n = times.len();
    let y_at = |t: f64| ybar.map_or(0.0, |s| s.mean.value_at(t));
    let y_left = |t: f64| ybar.map_or(0.0, |s| s.mean.left_at(t));
    let mut c = CostComponents::default();
    for k in 0..n - 1 {
        let t = times[k];
        let y = y_at(t);
        let l: f64 = (0..marks.len())
            .map(|a| {
                let pt = Point::state(t, p.x()[k], p.mean()[k], p.u_cont(k, a)).with_backward(y, y);
                marks.weight(a) * pb.eval(Coef::RunningCost, &pt, marks.mark(a))
            })
            .sum();
        c.running += l * (times[k + 1] - t);
    }
    for k in 1..n {
        let t = times[k];
        if let Some(a) = p.jump(k) {
            let y = y_left(t);
            let pt = Point::state(t, p.x_left()[k], p.mean_left()[k], p.u_jump(k)).with_backward(y, y);
            c.jump += pb.eval(Coef::JumpCost, &pt, marks.mark(a));
        }
        if p.impulse(k).is_some() {
            c.impulse += pb.eval(Coef::ImpulseCost, &Point { t, u: p.eta(k), ..Point::default() }, marks.mark(0));
        }
    }
    let t_end = times[n - 1];
    c.terminal = pb.eval(Coef::TerminalCost, &Point::state(t_end, p.x()[n - 1], p.mean()[n - 1], 0.0), marks.mark(0));
    c
}

/// Cost of the control that generated `ens`. Running costs use left-point quadrature on
/// each path's nodes; `y`-dependent terms read the backward mean with `z = 0`.
pub fn evaluate_cost(ens: &PathEnsemble, backward: Option<&BackwardMeanSolution>) -> Result<CostEstimate, CostError> {
    let pb = ens.problem().clone();
    let marks = ens.marks().clone();
    let ys = [Var::Y, Var::MY];
    if backward.is_none() && (reads(&*pb, &marks, Coef::RunningCost, &ys) || reads(&*pb, &marks, Coef::JumpCost, &ys)) {
        return Err(CostError::MissingMean);
    }
    let initial = match backward {
        Some(b) => pb.eval(Coef::InitialCost, &Point { y: b.y0, ..Point::default() }, marks.mark(0)),
        None if initial_is_constant(&*pb, &marks) => pb.eval(Coef::InitialCost, &Point::default(), marks.mark(0)),
        None => return Err(CostError::MissingY0),
    };
    let parts: Vec<CostComponents> =
        ens.fold_paths(Vec::new, |acc, _, p| acc.push(path_costs(&*pb, &marks, p, backward)), |a, b| a.extend(b))?;
    Ok(summarize(&parts, initial))
}

/// Solves the backward mean from the ensemble and evaluates the cost with it.
pub fn cost_of(ens: &PathEnsemble) -> Result<(CostEstimate, BackwardMeanSolution), CostError> {
    let b = solve_mean(ens)?;
    Ok((evaluate_cost(ens, Some(&b))?, b))
}

fn summarize(parts: &[CostComponents], initial: f64) -> CostEstimate {
    let m = parts.len();
    let per_path: Vec<f64> = parts.iter().map(|c| c.total() + initial).collect();
    let est = Estimate::from_samples(&per_path);
    let mut mean = CostComponents::default();
    for c in parts {
        mean.add(c);
    }
    mean.scale(1.0 / m.max(1) as f64);
    mean.initial = initial;
    let se = |f: fn(&CostComponents) -> f64| Estimate::from_samples(&parts.iter().map(f).collect::<Vec<_>>()).std_error;
    CostEstimate {
        mean: est.mean,
        std_error: est.std_error,
        paths: m,
        components: mean,
        component_std_errors: CostComponents {
            running: se(|c| c.running),
            jump: se(|c| c.jump),
            terminal: se(|c| c.terminal),
            initial: 0.0,
            impulse: se(|c| c.impulse),
        },
        per_path,
    }
}

/// Whether a Monte Carlo mean agrees with a closed form within `max(1%, 3σ)`.
pub fn agrees(mc: f64, std_error: f64, exact: f64) -> bool {
    (mc - exact).abs() <= (0.01 * exact.abs()).max(3.0 * std_error)
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureComparison {
    pub lambda: f64,
    pub j_prog_mc: f64,
    pub j_prog_se: f64,
    pub j_prog_closed: f64,
    pub j_pred_mc: f64,
    pub j_pred_se: f64,
    pub j_pred_closed: f64,
    /// `J_pred − J_prog` on common random numbers.
    pub gap_mc: f64,
    pub gap_se: f64,
    pub gap_closed: f64,
    pub prog_within_ci: bool,
    pub pred_within_ci: bool,
    pub progressive_better: bool,
    pub prog_components: CostComponents,
    pub pred_components: CostComponents,
}

/// Runs both optimal laws of the comparison example on the same noise.
pub fn compare_structures(lambda: f64, cfg: &SimConfig, seed: u64) -> Result<StructureComparison, CostError> {
    let marks = MarkSpace::single(0.0, lambda)?;
    let ex = example2_spec(&marks);
    let pb: Arc<dyn Problem> = Arc::new(ex.spec);
    let none = ImpulseSchedule::none();
    let prog = simulate(pb.clone(), &ex.progressive, &none, &marks, cfg, seed)?;
    let pred = simulate(pb, &ex.predictable, &none, &marks, cfg, seed)?;
    let (cp, _) = cost_of(&prog)?;
    let (cq, _) = cost_of(&pred)?;
    let diff: Vec<f64> = cq.per_path.iter().zip(&cp.per_path).map(|(q, p)| q - p).collect();
    let gap = Estimate::from_samples(&diff);
    let (jp, jq) = example2_costs(lambda);
    Ok(StructureComparison {
        lambda,
        j_prog_mc: cp.mean,
        j_prog_se: cp.std_error,
        j_prog_closed: jp,
        j_pred_mc: cq.mean,
        j_pred_se: cq.std_error,
        j_pred_closed: jq,
        gap_mc: gap.mean,
        gap_se: gap.std_error,
        gap_closed: jq - jp,
        prog_within_ci: agrees(cp.mean, cp.std_error, jp),
        pred_within_ci: agrees(cq.mean, cq.std_error, jq),
        progressive_better: cp.mean < cq.mean,
        prog_components: cp.components,
        pred_components: cq.components,
    })
}
