//! Closed-form solution of the scalar mean-field LQ problem and of the
//! progressive/predictable comparison example.
//!
//! With deterministic coefficients the adjoints are deterministic: `q` solves a
//! linear forward ODE from `q_0 = −w ŷ₀`, and `p = Π E[x̂] + Σ` with `Π` a scalar
//! Riccati solution. Every curve is tabulated on the node grid refined by interval
//! midpoints, integrals inside the closed forms use cumulative Simpson, and classical
//! RK4 on the nodes serves as an independent cross-check.

use serde::Serialize;
use thiserror::Error;

use crate::model::{example2_predictable_value, example2_progressive_value, ControlLaw, ImpulseSchedule, LQSpec};
use crate::randkit::{RandError, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqError {
    #[error("terminal mean weight must be positive, got {0}")]
    DeltaNonPositive(f64),
    #[error("ŷ₀ fixed point diverged after {iterations} iterations (last change {change:e})")]
    FixedPointDiverged { iterations: usize, change: f64 },
    #[error("impulses must not load the state in the LQ model (G = {value} at t = {t})")]
    StateLoadingUnsupported { t: f64, value: f64 },
    #[error("total jump intensity must be positive and finite, got {0}")]
    BadIntensity(f64),
    #[error(transparent)]
    Grid(#[from] RandError),
}

/// Values on a sorted grid with 4-point Lagrange interpolation between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(times.len() >= 2);
        Self { times, values }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        let i = self.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        if (t - self.times[i]).abs() <= 1e-14 {
            return self.values[i];
        }
        if n < 4 {
            let (t0, t1) = (self.times[i], self.times[i + 1]);
            return self.values[i] + (self.values[i + 1] - self.values[i]) * (t - t0) / (t1 - t0);
        }
        let lo = i.saturating_sub(1).min(n - 4);
        let (ts, vs) = (&self.times[lo..lo + 4], &self.values[lo..lo + 4]);
        (0..4)
            .map(|a| {
                let w: f64 = (0..4).filter(|&b| b != a).map(|b| (t - ts[b]) / (ts[a] - ts[b])).product();
                w * vs[a]
            })
            .sum()
    }

    /// Values at the grid nodes (every other point of a refined grid).
    pub fn on_nodes(&self) -> SampledCurve {
        let pick = |v: &[f64]| v.iter().step_by(2).copied().collect();
        SampledCurve::new(pick(&self.times), pick(&self.values))
    }

    /// `sup |self − other|` over this curve's points.
    pub fn sup_distance(&self, other: &SampledCurve) -> f64 {
        self.times.iter().zip(&self.values).map(|(&t, v)| (v - other.at(t)).abs()).fold(0.0, f64::max)
    }
}

/// Nodes merged with interval midpoints.
pub fn refine(nodes: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * nodes.len() - 1);
    for w in nodes.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*nodes.last().unwrap());
    out
}

/// Uniform nodes of step `dt` merged with the impulse epochs.
pub fn lq_nodes(horizon: f64, dt: f64, impulse_times: &[f64]) -> Result<Vec<f64>, LqError> {
    Ok(TimeGrid::with_events(horizon, dt, impulse_times.iter().copied())?.nodes().to_vec())
}

/// `∫_{t_0}^{t} f` on a refined grid, exact for piecewise quadratics.
fn cumulative(fine: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; fine.len()];
    for j in (0..fine.len() - 1).step_by(2) {
        let h = fine[j + 2] - fine[j];
        let (a, m, b) = (f[j], f[j + 1], f[j + 2]);
        out[j + 1] = out[j] + h / 24.0 * (5.0 * a + 8.0 * m - b);
        out[j + 2] = out[j] + h / 6.0 * (a + 4.0 * m + b);
    }
    out
}

fn tabulate(fine: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    fine.iter().map(|&t| f(t)).collect()
}

/// Classical RK4 on `times`, forward from `times[0]` or backward from the last node.
/// The half-step points are the interval midpoints.
fn rk4(times: &[f64], start: f64, backward: bool, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = times.len();
    let mut y = vec![0.0; n];
    let step = |t0: f64, t1: f64, y0: f64| {
        let h = t1 - t0;
        let tm = 0.5 * (t0 + t1);
        let k1 = f(t0, y0);
        let k2 = f(tm, y0 + 0.5 * h * k1);
        let k3 = f(tm, y0 + 0.5 * h * k2);
        let k4 = f(t1, y0 + h * k3);
        y0 + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    };
    if backward {
        y[n - 1] = start;
        for k in (0..n - 1).rev() {
            y[k] = step(times[k + 1], times[k], y[k + 1]);
        }
    } else {
        y[0] = start;
        for k in 1..n {
            y[k] = step(times[k - 1], times[k], y[k - 1]);
        }
    }
    y
}

fn check_lambda(lambda: f64) -> Result<(), LqError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(LqError::BadIntensity(lambda))
    }
}

fn source_q(spec: &LQSpec, t: f64) -> f64 {
    spec.f2.eval(t) + spec.f2_bar.eval(t) + spec.f3.eval(t) + spec.f3_bar.eval(t)
}

fn y_rate(spec: &LQSpec, t: f64) -> f64 {
    spec.f1.eval(t) + spec.f1_bar.eval(t)
}

/// `Δ = A₆ + A₇ + B₆ + B₇ − q (A₅ + B₅)`.
fn delta(spec: &LQSpec, t: f64, q: f64) -> f64 {
    spec.a6.eval(t) + spec.a7.eval(t) + spec.b6.eval(t) + spec.b7.eval(t) - q * (spec.a5.eval(t) + spec.b5.eval(t))
}

/// `q_t = e^{Φ_t} [−w ŷ₀ − ∫_0^t λ S e^{−Φ}]` with `Φ = ∫ λ(F₁ + F̄₁)` and
/// `S = F₂ + F̄₂ + F₃ + F̄₃`, tabulated on the refined grid.
pub fn q_closed_form(spec: &LQSpec, lambda: f64, y0_hat: f64, nodes: &[f64]) -> SampledCurve {
    let fine = refine(nodes);
    let phi = cumulative(&fine, &tabulate(&fine, |t| lambda * y_rate(spec, t)));
    let src: Vec<f64> = fine.iter().zip(&phi).map(|(&t, p)| lambda * source_q(spec, t) * (-p).exp()).collect();
    let acc = cumulative(&fine, &src);
    let q0 = -spec.initial_weight * y0_hat;
    let q = phi.iter().zip(&acc).map(|(p, a)| p.exp() * (q0 - a)).collect();
    SampledCurve::new(fine, q)
}

/// RK4 for `q' = λ(F₁ + F̄₁) q − λ S` on the nodes.
pub fn q_rk4(spec: &LQSpec, lambda: f64, y0_hat: f64, nodes: &[f64]) -> SampledCurve {
    let q = rk4(nodes, -spec.initial_weight * y0_hat, false, |t, q| lambda * (y_rate(spec, t) * q - source_q(spec, t)));
    SampledCurve::new(nodes.to_vec(), q)
}

/// `Π_t = 1 / (δ⁻¹ e^{−2∫_t^T λπ} + ∫_t^T λκ_s e^{−2∫_t^s λπ} ds)`, `κ = C₁² + C₃²`.
pub fn solve_riccati(spec: &LQSpec, lambda: f64, nodes: &[f64]) -> Result<SampledCurve, LqError> {
    check_lambda(lambda)?;
    let delta = spec.mean_weight;
    if !(delta > 0.0) {
        return Err(LqError::DeltaNonPositive(delta));
    }
    let fine = refine(nodes);
    let big_p = cumulative(&fine, &tabulate(&fine, |t| lambda * spec.pi(t)));
    let w: Vec<f64> = fine.iter().zip(&big_p).map(|(&t, p)| lambda * spec.kappa(t) * (-2.0 * p).exp()).collect();
    let k = cumulative(&fine, &w);
    let (pt, kt) = (*big_p.last().unwrap(), *k.last().unwrap());
    let mut pi: Vec<f64> = big_p.iter().zip(&k).map(|(p, ks)| 1.0 / ((2.0 * p).exp() * ((-2.0 * pt).exp() / delta + kt - ks))).collect();
    // exact terminal condition rather than its rounded reconstruction
    *pi.last_mut().unwrap() = delta;
    Ok(SampledCurve::new(fine, pi))
}

/// RK4 for `Π̇ = −2λπΠ + λκΠ²`, `Π_T = δ`, on the nodes.
pub fn riccati_rk4(spec: &LQSpec, lambda: f64, nodes: &[f64]) -> SampledCurve {
    let pi = rk4(nodes, spec.mean_weight, true, |t, p| lambda * (spec.kappa(t) * p * p - 2.0 * spec.pi(t) * p));
    SampledCurve::new(nodes.to_vec(), pi)
}

fn sigma_rate(spec: &LQSpec, lambda: f64, t: f64, pi: f64) -> f64 {
    lambda * (spec.pi(t) - spec.kappa(t) * pi)
}

fn sigma_source(spec: &LQSpec, lambda: f64, t: f64, pi: f64, q: f64) -> f64 {
    lambda * (pi * spec.c1.eval(t) * spec.c5.eval(t) * q + delta(spec, t, q))
}

/// `Σ_t = −M q_T e^{∫_t^T a} + ∫_t^T λ(Π C₁ C₅ q + Δ)_s e^{∫_t^s a} ds` with
/// `a = λ(π − κΠ)`; `q` and `Π` share one refined grid.
pub fn solve_sigma(spec: &LQSpec, lambda: f64, q: &SampledCurve, pi: &SampledCurve) -> SampledCurve {
    let fine = q.times().to_vec();
    let r = cumulative(&fine, &tabulate_idx(&fine, |i, t| sigma_rate(spec, lambda, t, pi.values()[i])));
    let src: Vec<f64> = (0..fine.len()).map(|i| sigma_source(spec, lambda, fine[i], pi.values()[i], q.values()[i]) * r[i].exp()).collect();
    let acc = cumulative(&fine, &src);
    let (rt, at) = (*r.last().unwrap(), *acc.last().unwrap());
    let head = -spec.terminal_slope * q.terminal() * rt.exp();
    let mut sigma: Vec<f64> = r.iter().zip(&acc).map(|(ri, ai)| (-ri).exp() * (head + at - ai)).collect();
    *sigma.last_mut().unwrap() = -spec.terminal_slope * q.terminal();
    SampledCurve::new(fine, sigma)
}

fn tabulate_idx(fine: &[f64], f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    fine.iter().enumerate().map(|(i, &t)| f(i, t)).collect()
}

/// RK4 for `Σ̇ = −a Σ − λ(Π C₁ C₅ q + Δ)`, `Σ_T = −M q_T`, on the nodes of the refined grid.
pub fn sigma_rk4(spec: &LQSpec, lambda: f64, q: &SampledCurve, pi: &SampledCurve) -> SampledCurve {
    let nodes: Vec<f64> = q.times().iter().step_by(2).copied().collect();
    let sigma = rk4(&nodes, -spec.terminal_slope * q.terminal(), true, |t, s| {
        let p = pi.at(t);
        -sigma_rate(spec, lambda, t, p) * s - sigma_source(spec, lambda, t, p, q.at(t))
    });
    SampledCurve::new(nodes, sigma)
}

/// Exact mean of the optimally controlled state:
/// `ṁ = λ(π − κΠ) m + λ(C₁C₅ q − κΣ)`, `m_0 = x_0`.
pub fn lq_mean(spec: &LQSpec, lambda: f64, q: &SampledCurve, pi: &SampledCurve, sigma: &SampledCurve) -> SampledCurve {
    let fine = q.times().to_vec();
    let r = cumulative(&fine, &tabulate_idx(&fine, |i, t| sigma_rate(spec, lambda, t, pi.values()[i])));
    let src: Vec<f64> = (0..fine.len())
        .map(|i| {
            let t = fine[i];
            let s = spec.c1.eval(t) * spec.c5.eval(t) * q.values()[i] - spec.kappa(t) * sigma.values()[i];
            lambda * s * (-r[i]).exp()
        })
        .collect();
    let acc = cumulative(&fine, &src);
    let m = r.iter().zip(&acc).map(|(ri, ai)| ri.exp() * (spec.x0 + ai)).collect();
    SampledCurve::new(fine, m)
}

/// `sup |Π̇ + 2λπΠ − λκΠ²|` over interior nodes with a locally uniform stencil;
/// `Π̇` by Richardson-extrapolated central differences on the refined grid.
pub fn riccati_residual(spec: &LQSpec, lambda: f64, pi: &SampledCurve) -> f64 {
    let (t, v) = (pi.times(), pi.values());
    let mut worst: f64 = 0.0;
    for j in (2..t.len().saturating_sub(2)).step_by(2) {
        let h = t[j + 1] - t[j];
        let uniform = [t[j] - t[j - 1], t[j + 2] - t[j + 1], t[j - 1] - t[j - 2]].iter().all(|d| (d - h).abs() <= 1e-9 * h);
        if !uniform {
            continue;
        }
        let d1 = (v[j + 1] - v[j - 1]) / (2.0 * h);
        let d2 = (v[j + 2] - v[j - 2]) / (4.0 * h);
        let dot = (4.0 * d1 - d2) / 3.0;
        let s = t[j];
        let r = dot + 2.0 * lambda * spec.pi(s) * v[j] - lambda * spec.kappa(s) * v[j] * v[j];
        worst = worst.max(r.abs());
    }
    worst
}

/// Sup-norm gaps between the closed forms and RK4 at the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorGap {
    pub pi: f64,
    pub sigma: f64,
    pub q: f64,
}

/// Everything the LQ optimum needs, tabulated on the refined grid.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSolution {
    pub lambda: f64,
    pub pi: SampledCurve,
    pub sigma: SampledCurve,
    pub q: SampledCurve,
    /// `E[x̂_t]` from the exact mean equation.
    pub mean: SampledCurve,
    /// `p = Π E[x̂] + Σ`.
    pub p: SampledCurve,
    /// Right-continuous `E[ŷ_t]` of the closed loop.
    pub ybar: SampledCurve,
    pub y0_hat: f64,
    /// `|ŷ₀ − y₀(closed loop under ŷ₀)|`.
    pub residual: f64,
    pub iterations: usize,
    pub impulse_times: Vec<f64>,
    /// `η̂_i = −q(τ_i) H(τ_i)`.
    pub impulse_values: Vec<f64>,
}

impl RiccatiSolution {
    pub fn nodes(&self) -> Vec<f64> {
        self.pi.times().iter().step_by(2).copied().collect()
    }

    pub fn pi_at(&self, t: f64) -> f64 {
        self.pi.at(t)
    }

    pub fn sigma_at(&self, t: f64) -> f64 {
        self.sigma.at(t)
    }

    pub fn q_at(&self, t: f64) -> f64 {
        self.q.at(t)
    }

    pub fn p_at(&self, t: f64) -> f64 {
        self.p.at(t)
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        self.mean.at(t)
    }

    /// Closed forms against RK4 on the nodes.
    pub fn integrator_gap(&self, spec: &LQSpec) -> IntegratorGap {
        let nodes = self.nodes();
        IntegratorGap {
            pi: riccati_rk4(spec, self.lambda, &nodes).sup_distance(&self.pi),
            sigma: sigma_rk4(spec, self.lambda, &self.q, &self.pi).sup_distance(&self.sigma),
            q: q_rk4(spec, self.lambda, self.y0_hat, &nodes).sup_distance(&self.q),
        }
    }

    pub fn riccati_residual(&self, spec: &LQSpec) -> f64 {
        riccati_residual(spec, self.lambda, &self.pi)
    }
}

fn check_impulses(spec: &LQSpec, impulse_times: &[f64]) -> Result<(), LqError> {
    for &t in impulse_times {
        let g = spec.state_loading.eval(t);
        if g != 0.0 {
            return Err(LqError::StateLoadingUnsupported { t, value: g });
        }
    }
    Ok(())
}

/// The optimum built from a given `ŷ₀`, with `y₀` of its closed loop in `residual`'s place.
fn build(spec: &LQSpec, lambda: f64, y0_hat: f64, nodes: &[f64], impulse_times: &[f64]) -> Result<(RiccatiSolution, f64), LqError> {
    let pi = solve_riccati(spec, lambda, nodes)?;
    let q = q_closed_form(spec, lambda, y0_hat, nodes);
    let sigma = solve_sigma(spec, lambda, &q, &pi);
    let mean = lq_mean(spec, lambda, &q, &pi, &sigma);
    let fine = q.times().to_vec();
    let p: Vec<f64> = (0..fine.len()).map(|i| pi.values()[i] * mean.values()[i] + sigma.values()[i]).collect();
    let p = SampledCurve::new(fine.clone(), p);
    let impulse_values: Vec<f64> = impulse_times.iter().map(|&t| -q.at(t) * spec.backward_loading.eval(t)).collect();

    // E[ŷ]: d(ȳ e^Φ) = −e^Φ s dt between epochs, ȳ(τ⁻) = ȳ(τ) − H η̂.
    let phi = cumulative(&fine, &tabulate(&fine, |t| lambda * y_rate(spec, t)));
    let src: Vec<f64> = (0..fine.len())
        .map(|i| {
            let t = fine[i];
            let u = spec.c5.eval(t) * q.values()[i] - spec.c1.eval(t) * p.values()[i];
            lambda * ((spec.a5.eval(t) + spec.b5.eval(t)) * mean.values()[i] + spec.c5.eval(t) * u) * phi[i].exp()
        })
        .collect();
    let acc = cumulative(&fine, &src);
    let (phi_t, acc_t) = (*phi.last().unwrap(), *acc.last().unwrap());
    let head = spec.terminal_slope * mean.terminal() * phi_t.exp();
    let kicks: Vec<(f64, f64)> = impulse_times
        .iter()
        .zip(&impulse_values)
        .map(|(&t, eta)| (t, spec.backward_loading.eval(t) * eta * value_at_node(&fine, &phi, t).exp()))
        .collect();
    let ybar: Vec<f64> = (0..fine.len())
        .map(|i| {
            let after: f64 = kicks.iter().filter(|(t, _)| *t > fine[i] + 1e-12).map(|(_, k)| k).sum();
            (-phi[i]).exp() * (head + acc_t - acc[i] - after)
        })
        .collect();
    let ybar = SampledCurve::new(fine, ybar);
    let y0 = ybar.first();
    let sol = RiccatiSolution {
        lambda,
        pi,
        sigma,
        q,
        mean,
        p,
        ybar,
        y0_hat,
        residual: f64::NAN,
        iterations: 0,
        impulse_times: impulse_times.to_vec(),
        impulse_values,
    };
    Ok((sol, y0))
}

fn value_at_node(fine: &[f64], values: &[f64], t: f64) -> f64 {
    let i = fine.partition_point(|&s| s < t - 1e-12).min(fine.len() - 1);
    values[i]
}

/// `y₀` of the closed loop under the feedback built from `ŷ₀`.
pub fn closed_loop_y0(spec: &LQSpec, lambda: f64, y0_hat: f64, nodes: &[f64], impulse_times: &[f64]) -> Result<f64, LqError> {
    check_lambda(lambda)?;
    check_impulses(spec, impulse_times)?;
    Ok(build(spec, lambda, y0_hat, nodes, impulse_times)?.1)
}

pub const DAMPING: f64 = 0.5;
pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const FIXED_POINT_MAX: usize = 200;

/// Damped iteration `ŷ ← (1 − ρ)ŷ + ρ y₀(ŷ)` started from `y₀(0)`; the returned
/// solution reports its own residual rather than a uniqueness claim.
pub fn fixed_point_y0(spec: &LQSpec, lambda: f64, nodes: &[f64], impulse_times: &[f64]) -> Result<RiccatiSolution, LqError> {
    check_lambda(lambda)?;
    check_impulses(spec, impulse_times)?;
    let map = |y: f64| build(spec, lambda, y, nodes, impulse_times).map(|(_, y0)| y0);
    let mut y = map(0.0)?;
    let mut prev_change = f64::INFINITY;
    let mut grew = 0;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next = (1.0 - DAMPING) * y + DAMPING * map(y)?;
        let change = (next - y).abs();
        y = next;
        if change < FIXED_POINT_TOL {
            break;
        }
        grew = if change > prev_change { grew + 1 } else { 0 };
        if grew >= 2 || iterations >= FIXED_POINT_MAX || !change.is_finite() {
            return Err(LqError::FixedPointDiverged { iterations, change });
        }
        prev_change = change;
    }
    let (mut sol, y0) = build(spec, lambda, y, nodes, impulse_times)?;
    sol.residual = (y - y0).abs();
    sol.iterations = iterations;
    log::debug!("ŷ₀ = {y} after {iterations} iterations, residual {:e}", sol.residual);
    Ok(sol)
}

/// `û = C₅q − C₁p` on the continuous branch, `û = −C₃p` at jumps, `η̂_i = −q(τ_i)H(τ_i)`.
/// The mean inside `p` comes from the exact mean equation, so the law ignores its
/// mean argument.
pub fn optimal_feedback(spec: &LQSpec, sol: &RiccatiSolution) -> (ControlLaw, ImpulseSchedule) {
    let (c1, c3, c5) = (spec.c1.clone(), spec.c3.clone(), spec.c5.clone());
    let (q, p, pj) = (sol.q.clone(), sol.p.clone(), sol.p.clone());
    let law = ControlLaw::new(move |t, _, _, _| c5.eval(t) * q.at(t) - c1.eval(t) * p.at(t), move |t, _, _, _| -c3.eval(t) * pj.at(t))
        .ignoring_mean();
    let imp = ImpulseSchedule::at_times(sol.impulse_times.clone(), sol.impulse_values.clone());
    (law, imp)
}

/// Closed-form data of the comparison example at total intensity `λ`.
#[derive(Debug, Clone, Serialize)]
pub struct Example2Curves {
    pub lambda: f64,
    /// `a = −¾λ`.
    pub a: f64,
    pub progressive_value: SampledCurve,
    pub predictable_value: SampledCurve,
    pub j_prog: f64,
    pub j_pred: f64,
    /// Deterministic closed-loop states under the two optimal laws.
    pub x_prog: SampledCurve,
    pub x_pred: SampledCurve,
}

pub fn example2_costs(lambda: f64) -> (f64, f64) {
    (2.0 / (3.0 * lambda + 2.0), 3.0 / (4.0 * lambda + 3.0))
}

pub fn example2_curves(lambda: f64, nodes: &[f64]) -> Result<Example2Curves, LqError> {
    check_lambda(lambda)?;
    let a = -0.75 * lambda;
    let curve = |f: &dyn Fn(f64) -> f64| SampledCurve::new(nodes.to_vec(), nodes.iter().map(|&t| f(t)).collect());
    let (j_prog, j_pred) = example2_costs(lambda);
    Ok(Example2Curves {
        lambda,
        a,
        progressive_value: curve(&|t| example2_progressive_value(lambda, t)),
        predictable_value: curve(&|t| example2_predictable_value(lambda, t)),
        j_prog,
        j_pred,
        x_prog: curve(&|t| (2.0 * a * t - 2.0 * a + 1.0) / (1.0 - 2.0 * a)),
        x_pred: curve(&|t| (4.0 * lambda * (1.0 - t) + 3.0) / (4.0 * lambda + 3.0)),
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::model::{example1_impulse_times, example1_spec, Curve};

    fn nodes(dt: f64) -> Vec<f64> {
        lq_nodes(1.0, dt, &[]).unwrap()
    }

    #[test]
    fn q_oracles() {
        let zero = LQSpec::default();
        let q = q_closed_form(&zero, 1.0, 0.7, &nodes(0.01));
        assert!(q.values().iter().all(|&v| v == -0.7));

        let exp = LQSpec { f1: Curve::Const(0.6), f1_bar: Curve::Const(0.4), ..Default::default() };
        let q = q_closed_form(&exp, 1.0, 1.0, &nodes(1e-3));
        for (&t, &v) in q.times().iter().zip(q.values()) {
            assert_abs_diff_eq!(v, -t.exp(), epsilon = 1e-12);
        }
        assert!(q_rk4(&exp, 1.0, 1.0, &nodes(1e-3)).sup_distance(&q) < 1e-12);
    }

    #[test]
    fn riccati_oracles() {
        let sep = LQSpec { c1: Curve::Const(0.6), c3: Curve::Const(0.8), ..Default::default() };
        let pi = solve_riccati(&sep, 1.0, &nodes(1e-3)).unwrap();
        for (&t, &v) in pi.times().iter().zip(pi.values()) {
            assert_abs_diff_eq!(v, 1.0 / (2.0 - t), epsilon = 1e-12);
        }
        let lin = LQSpec { a1: Curve::func(|t| 0.3 + t), mean_weight: 2.0, ..Default::default() };
        let pi = solve_riccati(&lin, 1.5, &nodes(1e-3)).unwrap();
        // 2∫_t^1 1.5(0.3 + s) ds
        let exact = |t: f64| 2.0 * (3.0 * (0.3 * (1.0 - t) + 0.5 * (1.0 - t * t))).exp();
        for (&t, &v) in pi.times().iter().zip(pi.values()) {
            assert_abs_diff_eq!(v, exact(t), epsilon = 1e-9 * exact(t));
        }
        assert_eq!(pi.terminal(), 2.0);
        let bad = LQSpec { mean_weight: 0.0, ..Default::default() };
        assert_eq!(solve_riccati(&bad, 1.0, &nodes(0.1)), Err(LqError::DeltaNonPositive(0.0)));
    }

    #[test]
    fn sigma_oracles() {
        let zero = LQSpec::default();
        let n = nodes(0.01);
        let q = q_closed_form(&zero, 1.0, 0.0, &n);
        let pi = solve_riccati(&zero, 1.0, &n).unwrap();
        assert!(solve_sigma(&zero, 1.0, &q, &pi).values().iter().all(|&v| v == 0.0));

        let unit = LQSpec { a6: Curve::Const(1.0), terminal_slope: 0.0, ..Default::default() };
        let sigma = solve_sigma(&unit, 1.0, &q, &pi);
        for (&t, &v) in sigma.times().iter().zip(sigma.values()) {
            assert_abs_diff_eq!(v, 1.0 - t, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_forms_match_rk4_on_reference_instance() {
        let spec = example1_spec();
        let imp = example1_impulse_times();
        let n = lq_nodes(1.0, 1e-3, &imp).unwrap();
        let sol = fixed_point_y0(&spec, 1.0, &n, &imp).unwrap();
        let gap = sol.integrator_gap(&spec);
        assert!(gap.pi < 1e-6 && gap.sigma < 1e-6 && gap.q < 1e-6, "{gap:?}");
        assert_eq!(sol.pi.terminal(), spec.mean_weight);
        assert_eq!(sol.sigma.terminal(), -spec.terminal_slope * sol.q.terminal());
        assert!(sol.pi.values().iter().all(|&v| v > 0.0));
        assert!(sol.riccati_residual(&spec) < 1e-8, "{}", sol.riccati_residual(&spec));
        assert!(sol.residual < 1e-7);
        // p(T) = δ E[x̂_T] − M q_T
        assert_abs_diff_eq!(sol.p.terminal(), sol.mean.terminal() - 0.5 * sol.q.terminal(), epsilon = 1e-12);
    }

    #[test]
    fn mean_matches_direct_integration() {
        let spec = example1_spec();
        let n = nodes(1e-3);
        let sol = fixed_point_y0(&spec, 1.3, &n, &[]).unwrap();
        let m = rk4(&n, spec.x0, false, |t, m| {
            let p = sol.pi_at(t) * m + sol.sigma_at(t);
            let uc = spec.c5.eval(t) * sol.q_at(t) - spec.c1.eval(t) * p;
            let uj = -spec.c3.eval(t) * p;
            1.3 * (spec.pi(t) * m + spec.c1.eval(t) * uc + spec.c3.eval(t) * uj)
        });
        assert!(SampledCurve::new(n, m).sup_distance(&sol.mean) < 1e-8);
    }

    #[test]
    fn fixed_point_agrees_with_bisection() {
        let spec = example1_spec();
        let imp = example1_impulse_times();
        let n = lq_nodes(1.0, 1e-2, &imp).unwrap();
        let sol = fixed_point_y0(&spec, 1.0, &n, &imp).unwrap();
        let gap = |y: f64| y - closed_loop_y0(&spec, 1.0, y, &n, &imp).unwrap();
        let (mut lo, mut hi) = (-10.0, 10.0);
        assert!(gap(lo) * gap(hi) < 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if gap(lo) * gap(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert_abs_diff_eq!(sol.y0_hat, 0.5 * (lo + hi), epsilon = 1e-7);
        assert!(sol.iterations > 1);
    }

    #[test]
    fn fixed_point_is_immediate_without_initial_cost() {
        let spec = LQSpec { initial_weight: 0.0, ..example1_spec() };
        let sol = fixed_point_y0(&spec, 1.0, &nodes(0.01), &[]).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.q.values().iter().all(|v| v.is_finite()));
        assert_eq!(sol.q.first(), 0.0);
    }

    #[test]
    fn zero_loadings_give_zero_controls() {
        let spec = LQSpec { c1: Curve::zero(), c3: Curve::zero(), c5: Curve::zero(), backward_loading: Curve::zero(), ..example1_spec() };
        let sol = fixed_point_y0(&spec, 1.0, &nodes(0.01), &[0.5]).unwrap();
        let (law, imp) = optimal_feedback(&spec, &sol);
        let e = crate::randkit::Mark { index: 0, value: 0.0 };
        for t in [0.0, 0.3, 0.99] {
            assert_eq!(law.continuous(t, 1.0, 1.0, e), 0.0);
            assert_eq!(law.at_jump(t, 1.0, 1.0, e), 0.0);
        }
        assert_eq!(imp.value(0, 0.5), 0.0);
    }

    #[test]
    fn state_loaded_impulses_are_rejected() {
        let spec = LQSpec { state_loading: Curve::Const(1.0), ..Default::default() };
        assert!(matches!(fixed_point_y0(&spec, 1.0, &nodes(0.1), &[0.5]), Err(LqError::StateLoadingUnsupported { .. })));
    }

    #[test]
    fn example2_closed_forms() {
        let n = nodes(1e-3);
        let c = example2_curves(1.0, &n).unwrap();
        assert_eq!(c.a, -0.75);
        assert_abs_diff_eq!(c.progressive_value.first(), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(c.predictable_value.first(), 6.0 / 7.0, epsilon = 1e-15);
        assert_eq!(c.progressive_value.terminal(), 2.0);
        assert_eq!(c.predictable_value.terminal(), 2.0);
        assert_abs_diff_eq!(c.j_prog, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(c.j_pred, 3.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.x_prog.terminal(), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(c.x_pred.terminal(), 3.0 / 7.0, epsilon = 1e-15);
        // p = P̃ X is constant at 0.8
        for k in 0..n.len() {
            assert_abs_diff_eq!(c.progressive_value.values()[k] * c.x_prog.values()[k], 0.8, epsilon = 1e-12);
        }
        // X' = a P̃ X
        let rhs: Vec<f64> = (0..n.len()).map(|k| c.a * c.progressive_value.values()[k] * c.x_prog.values()[k]).collect();
        assert!(rhs.iter().all(|v| (v + 0.6).abs() < 1e-12));
        // predictable costs: 3λ∫u² + X₁² with u ≡ −2/7
        let u = -2.0 / 7.0;
        assert_abs_diff_eq!(3.0 * u * u + (3.0f64 / 7.0).powi(2), 3.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(10.0 / 49.0 + 9.0 / 98.0 + 13.0 / 98.0, 3.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn example2_costs_limits() {
        let (p, q) = example2_costs(1e-9);
        assert!((p - 1.0).abs() < 1e-8 && (q - 1.0).abs() < 1e-8);
        assert_eq!(example2_costs(2.0), (0.25, 3.0 / 11.0));
    }

    proptest! {
        #[test]
        fn progressive_beats_predictable(lambda in 0.1f64..10.0) {
            let (p, q) = example2_costs(lambda);
            prop_assert!(p < q);
        }

        #[test]
        fn riccati_closed_form_matches_rk4(pi0 in -1.0f64..1.0, c1 in 0.0f64..1.5, c3 in 0.0f64..1.5, delta in 0.1f64..3.0, lambda in 0.2f64..3.0) {
            let spec = LQSpec { a1: Curve::func(move |t| pi0 + 0.5 * t), c1: Curve::Const(c1), c3: Curve::Const(c3), mean_weight: delta, ..Default::default() };
            let n = nodes(1e-3);
            let pi = solve_riccati(&spec, lambda, &n).unwrap();
            prop_assert!(riccati_rk4(&spec, lambda, &n).sup_distance(&pi) < 1e-6);
            prop_assert!(pi.values().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn interpolation_reproduces_cubics() {
        let t: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
        let c = SampledCurve::new(t.clone(), t.iter().map(|&x| f(x)).collect());
        for x in [0.0, 0.013, 0.5, 0.777, 0.99, 1.0] {
            assert_abs_diff_eq!(c.at(x), f(x), epsilon = 1e-13);
        }
    }
}
