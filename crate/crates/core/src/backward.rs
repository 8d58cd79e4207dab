//! Deterministic data of the backward state: `y_0` and `t ↦ E[y_t]` for drivers
//! affine in `(y, E[y], z, E[z])`.
//!
//! Taking expectations kills every martingale term and the `k(z − E[z])` part, so
//! `ȳ = E[y]` solves `ȳ' = −(S(t) + F(t) ȳ)` with `S = E[Σ_e w_e g(·, y = 0, z = 0)]`
//! estimated from the ensemble, `F = Σ_e w_e (∂_y g + ∂_ȳ g)`, terminal value
//! `E[h(x_T, E[x_T])]` and a jump `−E[H η]` across each impulse epoch.

use serde::Serialize;
use thiserror::Error;

use crate::forward::{ForwardError, MeanCurve, PathEnsemble};
use crate::model::{Coef, Point, Problem, Var};
use crate::randkit::MarkSpace;
use crate::stats::Estimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackwardError {
    #[error("driver is not affine in (y, E[y], z, E[z]) with paired z terms: {0}")]
    DriverNotLinear(String),
    #[error("backward mean became non-finite at t = {0}")]
    NonFiniteMean(f64),
    #[error("the driver reads y; solve the backward mean first")]
    MissingMean,
    #[error("backward quantities need an ensemble of states")]
    NotAStateEnsemble,
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

/// `ȳ(t)` on template nodes, with left limits at impulse epochs, and `y_0 = ȳ(0)`.
#[derive(Debug, Clone, Serialize)]
pub struct BackwardMeanSolution {
    pub mean: MeanCurve,
    pub y0: f64,
    /// Three standard errors of `y_0`.
    pub ci_half_width: f64,
    /// Whether `F ≡ 0` on the probe grid.
    pub driver_free_of_y: bool,
}

impl BackwardMeanSolution {
    pub fn at(&self, t: f64) -> f64 {
        self.mean.value_at(t)
    }
}

const PROBES: [Point; 2] = [
    Point { t: 0.0, x: 0.3, m: -0.2, y: 0.5, my: 0.1, z: 0.7, mz: -0.4, u: 0.2 },
    Point { t: 0.0, x: -1.1, m: 0.9, y: -1.3, my: 2.0, z: -0.5, mz: 1.1, u: -0.7 },
];

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()))
}

/// Checks the driver shape on a probe grid.
pub fn check_linear_driver(problem: &dyn Problem, marks: &MarkSpace) -> Result<(), BackwardError> {
    let horizon = problem.horizon();
    for k in 0..=16 {
        let t = horizon * k as f64 / 16.0;
        for a in 0..marks.len() {
            let e = marks.mark(a);
            let d = |p: &Point, v: Var| problem.partial(Coef::Driver, v, &Point { t, ..*p }, e);
            for v in [Var::Y, Var::MY, Var::Z, Var::MZ] {
                let (d0, d1) = (d(&PROBES[0], v), d(&PROBES[1], v));
                if !close(d0, d1) {
                    return Err(BackwardError::DriverNotLinear(format!("∂g/∂{v:?} varies at t = {t}: {d0} vs {d1}")));
                }
            }
            let (dz, dmz) = (d(&PROBES[0], Var::Z), d(&PROBES[0], Var::MZ));
            if !close(dz, -dmz) {
                return Err(BackwardError::DriverNotLinear(format!("z terms not paired as k(z − E[z]) at t = {t}")));
            }
        }
    }
    Ok(())
}

/// `F(t) = Σ_e w_e (∂_y g + ∂_ȳ g)`.
pub fn driver_y_coefficient(problem: &dyn Problem, marks: &MarkSpace, t: f64) -> f64 {
    let p = Point { t, ..PROBES[0] };
    marks.integrate(|e| problem.partial(Coef::Driver, Var::Y, &p, e) + problem.partial(Coef::Driver, Var::MY, &p, e))
}

fn y_free(problem: &dyn Problem, marks: &MarkSpace) -> bool {
    let horizon = problem.horizon();
    (0..=16).all(|k| driver_y_coefficient(problem, marks, horizon * k as f64 / 16.0) == 0.0)
}

/// Backward RK4 for `ȳ' = −(S(t) + F(t) ȳ)` on `times`, with `S` linear between nodes
/// and `ȳ(t⁻) = ȳ(t) − jumps[k]` at each node.
pub(crate) fn backward_linear_ode(
    times: &[f64],
    source: &[f64],
    jumps: &[f64],
    f: impl Fn(f64) -> f64,
    terminal: f64,
) -> Result<(Vec<f64>, Vec<f64>), BackwardError> {
    let n = times.len();
    let mut value = vec![0.0; n];
    let mut left = vec![0.0; n];
    value[n - 1] = terminal;
    left[n - 1] = terminal - jumps[n - 1];
    for k in (0..n - 1).rev() {
        let (t0, t1) = (times[k], times[k + 1]);
        let h = t1 - t0;
        let s = |t: f64| source[k] + (source[k + 1] - source[k]) * (t - t0) / h;
        // dȳ/dτ with τ = t1 − t running backward
        let rhs = |t: f64, y: f64| s(t) + f(t) * y;
        let y = left[k + 1];
        let tm = t1 - 0.5 * h;
        let k1 = rhs(t1, y);
        let k2 = rhs(tm, y + 0.5 * h * k1);
        let k3 = rhs(tm, y + 0.5 * h * k2);
        let k4 = rhs(t0, y + h * k3);
        value[k] = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        left[k] = value[k] - jumps[k];
        if !value[k].is_finite() {
            return Err(BackwardError::NonFiniteMean(t0));
        }
    }
    Ok((value, left))
}

fn terminal_values(ens: &PathEnsemble) -> Vec<f64> {
    let pb = ens.problem();
    let t = ens.horizon();
    let m = ens.mean().terminal();
    let e0 = ens.marks().mark(0);
    ens.summaries().iter().map(|s| pb.eval(Coef::Terminal, &Point::state(t, s.x_terminal, m, 0.0), e0)).collect()
}

/// Solves for `E[y_t]` and `y_0` from an ensemble simulated under the control in use.
pub fn solve_mean(ens: &PathEnsemble) -> Result<BackwardMeanSolution, BackwardError> {
    if !ens.is_state() {
        return Err(BackwardError::NotAStateEnsemble);
    }
    let pb = ens.problem().clone();
    let marks = ens.marks().clone();
    check_linear_driver(&*pb, &marks)?;
    let times = ens.template().to_vec();
    let h_vals = terminal_values(ens);
    let terminal = Estimate::from_samples(&h_vals).mean;
    let f = |t: f64| driver_y_coefficient(&*pb, &marks, t);
    let (value, left) = backward_linear_ode(&times, &ens.stats.driver0, &ens.stats.impulse, f, terminal)?;
    let y0 = value[0];
    let free = y_free(&*pb, &marks);

    // Per-path contributions to y_0 give its standard error.
    let contributions: Vec<f64> = if free {
        ens.summaries().iter().zip(&h_vals).map(|(s, h)| h + s.driver_integral - s.impulse_sum).collect()
    } else {
        let disc = discount(&times, &f);
        let (t_end, m_end, e0) = (ens.horizon(), ens.mean().terminal(), marks.mark(0));
        let d_end = *disc.last().unwrap();
        ens.fold_paths(
            Vec::new,
            |acc, _, p| {
                let mut total = 0.0;
                let mut prev: Option<(f64, f64)> = None;
                for (kk, k) in p.template_positions().enumerate() {
                    let t = p.times()[k];
                    let g: f64 = (0..marks.len())
                        .map(|a| {
                            marks.weight(a) * pb.eval(Coef::Driver, &Point::state(t, p.x()[k], p.mean()[k], p.u_cont(k, a)), marks.mark(a))
                        })
                        .sum();
                    let dg = disc[kk] * g;
                    if let Some((tp, gp)) = prev {
                        total += 0.5 * (dg + gp) * (t - tp);
                    }
                    prev = Some((t, dg));
                }
                let mut kk = 0;
                let tpos: Vec<usize> = p.template_positions().collect();
                for k in 0..p.len() {
                    while kk < tpos.len() && tpos[kk] < k {
                        kk += 1;
                    }
                    if p.impulse(k).is_some() {
                        total -= disc[kk.min(disc.len() - 1)] * pb.backward_loading(p.times()[k]) * p.eta(k);
                    }
                }
                let xt = *p.x().last().unwrap();
                total += d_end * pb.eval(Coef::Terminal, &Point::state(t_end, xt, m_end, 0.0), e0);
                acc.push(total);
            },
            |a, b| a.extend(b),
        )?
    };
    let est = Estimate::from_samples(&contributions);
    Ok(BackwardMeanSolution { mean: MeanCurve::new(times, value, left), y0, ci_half_width: 3.0 * est.std_error, driver_free_of_y: free })
}

/// `exp(∫_0^t F)` on `times`, Simpson on each interval.
pub(crate) fn discount(times: &[f64], f: &impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![1.0; times.len()];
    let mut acc = 0.0;
    for k in 1..times.len() {
        let (a, b) = (times[k - 1], times[k]);
        acc += (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
        out[k] = acc.exp();
    }
    out
}

/// Monte Carlo average of `h(x_T, E[x_T]) + ∫∫ g λ dt − Σ H(τ_i) η_i`, left-point
/// quadrature on each path's own nodes. Reports a 3σ interval.
///
/// A driver reading `y` needs the solved mean, which is substituted for `y`.
pub fn y0_via_representation(ens: &PathEnsemble, ybar: Option<&BackwardMeanSolution>) -> Result<Estimate, BackwardError> {
    if !ens.is_state() {
        return Err(BackwardError::NotAStateEnsemble);
    }
    let pb = ens.problem().clone();
    let marks = ens.marks().clone();
    if ybar.is_none() && !y_free(&*pb, &marks) {
        return Err(BackwardError::MissingMean);
    }
    let (t_end, m_end, e0) = (ens.horizon(), ens.mean().terminal(), marks.mark(0));
    let samples = ens.fold_paths(
        Vec::new,
        |acc, _, p| {
            let mut total = 0.0;
            for k in 0..p.len() - 1 {
                let t = p.times()[k];
                let y = ybar.map_or(0.0, |s| s.at(t));
                let g: f64 = (0..marks.len())
                    .map(|a| {
                        let pt = Point::state(t, p.x()[k], p.mean()[k], p.u_cont(k, a)).with_backward(y, y);
                        marks.weight(a) * pb.eval(Coef::Driver, &pt, marks.mark(a))
                    })
                    .sum();
                total += g * (p.times()[k + 1] - t);
            }
            for k in 0..p.len() {
                if p.impulse(k).is_some() {
                    total -= pb.backward_loading(p.times()[k]) * p.eta(k);
                }
            }
            let xt = *p.x().last().unwrap();
            total += pb.eval(Coef::Terminal, &Point::state(t_end, xt, m_end, 0.0), e0);
            acc.push(total);
        },
        |a, b| a.extend(b),
    )?;
    Ok(Estimate::from_samples(&samples))
}
