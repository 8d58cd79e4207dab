//! Numerical verification of the three-part maximum principle.
//!
//! With deterministic adjoints `(q, p)` and `θ = ϑ = 0` the conditions read, along
//! simulated paths:
//! - `H_u · (V − û) ≥ 0` at every non-event node (continuous part),
//! - `H̃_u · (V − û) ≥ 0` at every realized jump, evaluated at left limits (jump part),
//! - `M_i (η − η̂_i) ≥ 0` at every impulse epoch, `M_i = pG + qH + ψ_η` (impulse part).
//!
//! `H = −q g + p b + θ σ + l` and `H̃ = p γ + ϑ γ + ϑ c + f`. The compensator term `c`
//! enters the jump part only, because its control is the jump branch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backward::{backward_linear_ode, check_linear_driver, discount, driver_y_coefficient, solve_mean, BackwardError};
use crate::costeval::{cost_of, CostError};
use crate::forward::{simulate_first_variation, simulate_perturbed, Direction, ForwardError, Path, PathEnsemble};
use crate::lq::{RiccatiSolution, SampledCurve};
use crate::model::{Coef, Interval, LQSpec, Point, Problem, Var};
use crate::randkit::{Mark, MarkSpace};
use crate::stats::{log_log_slope, Estimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmpError {
    #[error("adjoint boundary conditions violated: initial {initial:e}, terminal {terminal:e}")]
    InconsistentSolution { initial: f64, terminal: f64 },
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Backward(#[from] BackwardError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Adjoint values at one time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Costate {
    pub q: f64,
    pub p: f64,
    pub theta: f64,
    pub vartheta: f64,
}

pub fn hamiltonian(pb: &dyn Problem, pt: &Point, e: Mark, c: &Costate) -> f64 {
    -c.q * pb.eval(Coef::Driver, pt, e)
        + c.p * pb.eval(Coef::Drift, pt, e)
        + c.theta * pb.eval(Coef::Diffusion, pt, e)
        + pb.eval(Coef::RunningCost, pt, e)
}

pub fn hamiltonian_u(pb: &dyn Problem, pt: &Point, e: Mark, c: &Costate) -> f64 {
    let d = |k: Coef| pb.partial(k, Var::U, pt, e);
    -c.q * d(Coef::Driver) + c.p * d(Coef::Drift) + c.theta * d(Coef::Diffusion) + d(Coef::RunningCost)
}

/// `H̃` at the left limits of a jump; `c.p` is `p_{t−}`.
pub fn hamiltonian_jump(pb: &dyn Problem, pt: &Point, e: Mark, c: &Costate) -> f64 {
    let gamma = pb.eval(Coef::Jump, pt, e);
    (c.p + c.vartheta) * gamma + c.vartheta * pb.eval(Coef::Compensated, pt, e) + pb.eval(Coef::JumpCost, pt, e)
}

pub fn hamiltonian_jump_u(pb: &dyn Problem, pt: &Point, e: Mark, c: &Costate) -> f64 {
    let d = |k: Coef| pb.partial(k, Var::U, pt, e);
    (c.p + c.vartheta) * d(Coef::Jump) + c.vartheta * d(Coef::Compensated) + d(Coef::JumpCost)
}

/// Deterministic adjoints with vanishing martingale integrands.
#[derive(Debug, Clone, Serialize)]
pub struct AdjointPaths {
    pub q: SampledCurve,
    pub p: SampledCurve,
    /// Backward mean used for `y` arguments, when costs or drivers read it.
    pub ybar: Option<SampledCurve>,
    pub theta_vanishes: bool,
    pub vartheta_vanishes: bool,
    pub justification: String,
    /// `|q(0) + ϕ_y(ŷ₀)|`
    pub initial_residual: f64,
    /// `|p(T) − (φ_x + E[φ_m] − h_x q(T) − E[h_m q(T)])|`
    pub terminal_residual: f64,
}

impl AdjointPaths {
    pub fn from_curves(q: SampledCurve, p: SampledCurve, justification: impl Into<String>) -> Self {
        Self {
            q,
            p,
            ybar: None,
            theta_vanishes: true,
            vartheta_vanishes: true,
            justification: justification.into(),
            initial_residual: 0.0,
            terminal_residual: 0.0,
        }
    }

    pub fn costate(&self, t: f64) -> Costate {
        Costate { q: self.q.at(t), p: self.p.at(t), theta: 0.0, vartheta: 0.0 }
    }

    fn y_at(&self, t: f64) -> f64 {
        self.ybar.as_ref().map_or(0.0, |y| y.at(t))
    }

    /// `M = p(τ)G(τ) + q(τ)H(τ) + ψ_η(τ, η)`.
    pub fn impulse_multiplier(&self, pb: &dyn Problem, t: f64, eta: f64, e: Mark) -> f64 {
        let c = self.costate(t);
        c.p * pb.state_loading(t)
            + c.q * pb.backward_loading(t)
            + pb.partial(Coef::ImpulseCost, Var::U, &Point { t, u: eta, ..Point::default() }, e)
    }
}

pub const BOUNDARY_TOL: f64 = 1e-6;

/// Adjoints of the LQ optimum: `q` from its closed form, `p = Π E[x̂] + Σ`.
pub fn assemble_adjoints(spec: &LQSpec, sol: &RiccatiSolution) -> Result<AdjointPaths, SmpError> {
    let initial = (sol.q.first() + spec.initial_weight * sol.y0_hat).abs();
    let expected = spec.mean_weight * sol.mean.terminal() - spec.terminal_slope * sol.q.terminal();
    let terminal = (sol.p.terminal() - expected).abs();
    if initial > BOUNDARY_TOL || terminal > BOUNDARY_TOL {
        return Err(SmpError::InconsistentSolution { initial, terminal });
    }
    Ok(AdjointPaths {
        q: sol.q.clone(),
        p: sol.p.clone(),
        ybar: Some(sol.ybar.clone()),
        theta_vanishes: true,
        vartheta_vanishes: true,
        justification: "deterministic coefficients: q has zero diffusion and (p, 0, 0) solves the p-equation".into(),
        initial_residual: initial,
        terminal_residual: terminal,
    })
}

/// Adjoints of the comparison example's progressive optimum: `q ≡ −½` and
/// `p = P̃ X̂ ≡ 4 / (2 + 3λ)`.
pub fn example2_adjoints(lambda: f64, horizon: f64) -> AdjointPaths {
    let times = vec![0.0, horizon / 3.0, 2.0 * horizon / 3.0, horizon];
    let p = 4.0 / (2.0 + 3.0 * lambda);
    AdjointPaths::from_curves(
        SampledCurve::new(times.clone(), vec![-0.5; 4]),
        SampledCurve::new(times, vec![p; 4]),
        "coefficients do not depend on x or y, so q and p are constant",
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmpTolerances {
    pub continuous: f64,
    pub jump: f64,
    pub impulse: f64,
    /// Absolute allowance added to the duality confidence interval, which covers the
    /// discretization remainder when the estimate carries no sampling noise.
    pub duality: f64,
}

impl Default for SmpTolerances {
    fn default() -> Self {
        Self { continuous: 1e-6, jump: 1e-6, impulse: 1e-6, duality: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PartReport {
    pub residual: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// Number of sampled points the residual is a supremum over.
    pub evaluations: usize,
    pub worst_time: Option<f64>,
    pub note: Option<String>,
}

impl PartReport {
    fn new(w: Worst, tolerance: f64, what: &str) -> Self {
        let note = (w.count == 0).then(|| format!("0 {what}: vacuous"));
        Self { residual: w.value, tolerance, verdict: Verdict::of(w.value <= tolerance), evaluations: w.count, worst_time: w.time, note }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub estimate: f64,
    /// Per-path standard error for a single ensemble; spread across replicates once pooled.
    pub std_error: f64,
    /// Four standard errors.
    pub ci_half_width: f64,
    /// First-order term in Hamiltonian form, when adjoints were supplied.
    pub hamiltonian_form: Option<f64>,
    pub hamiltonian_std_error: Option<f64>,
    pub verdict: Verdict,
    /// Independent ensembles behind the estimate.
    pub replicates: usize,
}

impl DualityReport {
    /// Re-judges the estimate as `|II| ≤ 4σ̂ + floor`.
    pub fn judged(mut self, floor: f64) -> Self {
        self.verdict = Verdict::of(self.estimate.abs() <= self.ci_half_width + floor);
        self
    }

    /// Pools reports from independently seeded ensembles.
    ///
    /// A single ensemble's per-path error misses the noise of the ensemble mean, which every
    /// path shares through the mean-field and terminal terms, so the verdict here rests on the
    /// spread between replicates instead.
    pub fn pooled(reports: &[DualityReport]) -> Option<DualityReport> {
        if reports.len() < 2 {
            return None;
        }
        let ii = Estimate::from_samples(&reports.iter().map(|r| r.estimate).collect::<Vec<_>>());
        let ham: Option<Vec<f64>> = reports.iter().map(|r| r.hamiltonian_form).collect();
        let ham = ham.map(|h| Estimate::from_samples(&h));
        let half = 4.0 * ii.std_error;
        Some(DualityReport {
            estimate: ii.mean,
            std_error: ii.std_error,
            ci_half_width: half,
            hamiltonian_form: ham.as_ref().map(|h| h.mean),
            hamiltonian_std_error: ham.as_ref().map(|h| h.std_error),
            verdict: Verdict::of(ii.mean.abs() <= half + 1e-12),
            replicates: reports.len(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SMPReport {
    pub continuous: PartReport,
    pub jump: PartReport,
    /// `sup |M_i|`
    pub impulse_stationarity: PartReport,
    /// Violation of `M_i (η − η̂_i) ≥ 0` over probe impulse values.
    pub impulse_inequality: PartReport,
    pub duality: Option<DualityReport>,
    pub adjoint_initial_residual: f64,
    pub adjoint_terminal_residual: f64,
    pub justification: String,
}

impl SMPReport {
    pub fn passed(&self) -> bool {
        [&self.continuous, &self.jump, &self.impulse_stationarity, &self.impulse_inequality].iter().all(|p| p.verdict == Verdict::Pass)
            && self.duality.as_ref().is_none_or(|d| d.verdict == Verdict::Pass)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Worst {
    value: f64,
    time: Option<f64>,
    count: usize,
}

impl Worst {
    fn see(&mut self, v: f64, t: f64) {
        self.count += 1;
        if self.time.is_none() || v > self.value {
            self.value = v;
            self.time = Some(t);
        }
    }

    fn merge(&mut self, o: Worst) {
        self.count += o.count;
        if o.time.is_some() && (self.time.is_none() || o.value > self.value) {
            self.value = o.value;
            self.time = o.time;
        }
    }
}

const IMPULSE_OFFSETS: [f64; 6] = [-1.0, -0.5, -0.25, 0.25, 0.5, 1.0];

/// Probe values for a variational inequality, or `None` when the set is the whole
/// line and stationarity replaces the inequality.
fn probes(set: Interval, center: f64) -> Option<Vec<f64>> {
    if set.is_unbounded() {
        return None;
    }
    let lattice = set.lattice();
    if !lattice.is_empty() {
        return Some(lattice);
    }
    let mut v: Vec<f64> = IMPULSE_OFFSETS.iter().map(|d| center + d).filter(|&x| set.contains(x)).collect();
    v.extend([set.lo, set.hi].into_iter().filter(|x| x.is_finite()));
    Some(v)
}

/// `max(0, −min_V d·(V − u))`, or `|d|` without probes.
fn violation(d: f64, u: f64, probes: &Option<Vec<f64>>) -> f64 {
    match probes {
        None => d.abs(),
        // `+ 0.0` turns a negative zero into zero.
        Some(vs) => vs.iter().map(|v| -(d * (v - u))).fold(0.0, f64::max) + 0.0,
    }
}

#[derive(Default)]
struct Sweep {
    cont: Worst,
    jump: Worst,
    stat: Worst,
    ineq: Worst,
}

/// Evaluates the three optimality conditions along every path of `ens`.
pub fn check_smp(ens: &PathEnsemble, adj: &AdjointPaths, tol: &SmpTolerances) -> Result<SMPReport, SmpError> {
    let pb = ens.problem().clone();
    let marks = ens.marks().clone();
    let uset = pb.control_set();
    let kset = pb.impulse_set();
    let sweep = ens.fold_paths(
        Sweep::default,
        |acc, _, p| {
            let times = p.times();
            for k in 0..times.len() - 1 {
                if p.jump(k).is_some() {
                    continue;
                }
                let t = times[k];
                let c = adj.costate(t);
                let y = adj.y_at(t);
                for a in 0..marks.len() {
                    let u = p.u_cont(k, a);
                    let pt = Point::state(t, p.x()[k], p.mean()[k], u).with_backward(y, y);
                    let d = hamiltonian_u(&*pb, &pt, marks.mark(a), &c);
                    acc.cont.see(violation(d, u, &probes(uset, u)), t);
                }
            }
            for k in 1..times.len() {
                let t = times[k];
                if let Some(a) = p.jump(k) {
                    let u = p.u_jump(k);
                    let y = adj.y_at(t);
                    let pt = Point::state(t, p.x_left()[k], p.mean_left()[k], u).with_backward(y, y);
                    let d = hamiltonian_jump_u(&*pb, &pt, marks.mark(a), &adj.costate(t));
                    acc.jump.see(violation(d, u, &probes(uset, u)), t);
                }
                if p.impulse(k).is_some() {
                    let eta = p.eta(k);
                    let m = adj.impulse_multiplier(&*pb, t, eta, marks.mark(0));
                    acc.stat.see(m.abs(), t);
                    let probe = probes(kset, eta).unwrap_or_else(|| IMPULSE_OFFSETS.iter().map(|d| eta + d).collect());
                    acc.ineq.see(violation(m, eta, &Some(probe)), t);
                }
            }
        },
        |a, b| {
            a.cont.merge(b.cont);
            a.jump.merge(b.jump);
            a.stat.merge(b.stat);
            a.ineq.merge(b.ineq);
        },
    )?;
    Ok(SMPReport {
        continuous: PartReport::new(sweep.cont, tol.continuous, "non-event nodes"),
        jump: PartReport::new(sweep.jump, tol.jump, "events"),
        impulse_stationarity: PartReport::new(sweep.stat, tol.impulse, "impulses"),
        impulse_inequality: PartReport::new(sweep.ineq, tol.impulse, "impulses"),
        duality: None,
        adjoint_initial_residual: adj.initial_residual,
        adjoint_terminal_residual: adj.terminal_residual,
        justification: adj.justification.clone(),
    })
}

/// Which template slot (first template node at or after path node `k`).
fn slot(tpos: &[usize], k: usize) -> usize {
    tpos.partition_point(|&p| p < k).min(tpos.len() - 1)
}

struct Linearization {
    /// Template-node sums of `Σ_e w_e (g_x Δx + g_m Δm + g_u Δu)`.
    source: Vec<f64>,
    /// Template-node sums of `H Δη`.
    kicks: Vec<f64>,
    terminal: f64,
    /// Per-path discounted representation of `ȳ¹(0)`.
    samples: Vec<f64>,
}

/// Per-path first-order differences between two ensembles on common noise.
struct Pair<'a> {
    pb: &'a dyn Problem,
    marks: &'a MarkSpace,
    ybar: &'a crate::backward::BackwardMeanSolution,
}

impl Pair<'_> {
    fn base_point(&self, t: f64, x: f64, m: f64, u: f64, left: bool) -> Point {
        let y = if left { self.ybar.mean.left_at(t) } else { self.ybar.at(t) };
        Point::state(t, x, m, u).with_backward(y, y)
    }

    /// `Σ_e w_e (∂_x k Δx + ∂_m k Δm + ∂_u k Δu)` at node `k` on the continuous branch.
    fn first_order(&self, c: Coef, b: &Path, o: &Path, k: usize) -> f64 {
        let t = b.times()[k];
        let (dx, dm) = (o.x()[k] - b.x()[k], o.mean()[k] - b.mean()[k]);
        (0..self.marks.len())
            .map(|a| {
                let e = self.marks.mark(a);
                let pt = self.base_point(t, b.x()[k], b.mean()[k], b.u_cont(k, a), false);
                let du = o.u_cont(k, a) - b.u_cont(k, a);
                self.marks.weight(a)
                    * (self.pb.partial(c, Var::X, &pt, e) * dx
                        + self.pb.partial(c, Var::M, &pt, e) * dm
                        + self.pb.partial(c, Var::U, &pt, e) * du)
            })
            .sum()
    }

    fn y_weight(&self, c: Coef, pt: &Point, e: Mark) -> f64 {
        self.pb.partial(c, Var::Y, pt, e) + self.pb.partial(c, Var::MY, pt, e)
    }
}

/// First-order cost difference between the control of `other` and the base control:
///
/// `II = E[∫∫ (l_x Δx + l_m Δm + l_y ȳ¹ + l_ȳ ȳ¹ + l_u Δu) λ dt + ∫∫ (…f…) dN + φ_x Δx_T
///  + φ_m Δm_T + Σ ψ_η Δη] + ϕ_y(ŷ₀) ȳ¹(0)`
///
/// with `ȳ¹` the linearized backward mean. It vanishes at an optimum of an LQ problem.
/// Reports PASS when `|II| ≤ 4σ̂/√M`.
pub fn duality_residual(base: &PathEnsemble, other: &PathEnsemble, adj: Option<&AdjointPaths>) -> Result<DualityReport, SmpError> {
    if !base.shares_noise_with(other) {
        return Err(ForwardError::EnsembleMismatch.into());
    }
    let pb = base.problem().clone();
    let marks = base.marks().clone();
    check_linear_driver(&*pb, &marks)?;
    let ybar = solve_mean(base)?;
    let pair = Pair { pb: &*pb, marks: &marks, ybar: &ybar };
    let template = base.template().to_vec();
    let nt = template.len();
    let f = |t: f64| driver_y_coefficient(&*pb, &marks, t);
    let disc = discount(&template, &f);
    let (t_end, e0) = (base.horizon(), marks.mark(0));

    let lin = PathEnsemble::fold_paths_zip(
        &[base, other],
        || Linearization { source: vec![0.0; nt], kicks: vec![0.0; nt], terminal: 0.0, samples: Vec::new() },
        |acc, _, ps| {
            let (b, o) = (&ps[0], &ps[1]);
            let tpos: Vec<usize> = b.template_positions().collect();
            let mut rep = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            for (kk, &k) in tpos.iter().enumerate() {
                let g1 = pair.first_order(Coef::Driver, b, o, k);
                acc.source[kk] += g1;
                let t = b.times()[k];
                if let Some((tp, gp)) = prev {
                    rep += 0.5 * (disc[kk] * g1 + gp) * (t - tp);
                }
                prev = Some((t, disc[kk] * g1));
            }
            for k in 0..b.len() {
                if b.impulse(k).is_some() {
                    let kick = pb.backward_loading(b.times()[k]) * (o.eta(k) - b.eta(k));
                    let s = slot(&tpos, k);
                    acc.kicks[s] += kick;
                    rep -= disc[s] * kick;
                }
            }
            let n = b.len() - 1;
            let pt = pair.base_point(t_end, b.x()[n], b.mean()[n], 0.0, false);
            let h1 = pb.partial(Coef::Terminal, Var::X, &pt, e0) * (o.x()[n] - b.x()[n])
                + pb.partial(Coef::Terminal, Var::M, &pt, e0) * (o.mean()[n] - b.mean()[n]);
            acc.terminal += h1;
            rep += disc[nt - 1] * h1;
            acc.samples.push(rep);
        },
        |a, b| {
            for (x, y) in a.source.iter_mut().zip(&b.source) {
                *x += y;
            }
            for (x, y) in a.kicks.iter_mut().zip(&b.kicks) {
                *x += y;
            }
            a.terminal += b.terminal;
            a.samples.extend(b.samples);
        },
    )?;
    let m = base.paths() as f64;
    let source: Vec<f64> = lin.source.iter().map(|v| v / m).collect();
    let kicks: Vec<f64> = lin.kicks.iter().map(|v| v / m).collect();
    let (y1, y1_left) = backward_linear_ode(&template, &source, &kicks, f, lin.terminal / m)?;
    let y1 = crate::forward::MeanCurve::new(template, y1, y1_left);
    let phi_y = pb.partial(Coef::InitialCost, Var::Y, &Point { y: ybar.y0, ..Point::default() }, e0);

    let per_path = PathEnsemble::fold_paths_zip(
        &[base, other],
        Vec::new,
        |acc, i, ps| {
            let (b, o) = (&ps[0], &ps[1]);
            let times = b.times();
            let n = times.len() - 1;
            let mut ii = phi_y * lin.samples[i];
            let mut ham = 0.0;
            for k in 0..n {
                let t = times[k];
                let h = times[k + 1] - t;
                ii += h * pair.first_order(Coef::RunningCost, b, o, k);
                let y1t = y1.value_at(t);
                for a in 0..marks.len() {
                    let e = marks.mark(a);
                    let pt = pair.base_point(t, b.x()[k], b.mean()[k], b.u_cont(k, a), false);
                    ii += h * marks.weight(a) * pair.y_weight(Coef::RunningCost, &pt, e) * y1t;
                    if let Some(adj) = adj {
                        let pt = Point { y: adj.y_at(t), my: adj.y_at(t), ..pt };
                        ham += h * marks.weight(a) * hamiltonian_u(&*pb, &pt, e, &adj.costate(t)) * (o.u_cont(k, a) - b.u_cont(k, a));
                    }
                }
            }
            for k in 1..=n {
                let t = times[k];
                if let Some(a) = b.jump(k) {
                    let e = marks.mark(a);
                    let pt = pair.base_point(t, b.x_left()[k], b.mean_left()[k], b.u_jump(k), true);
                    let d = |v: Var| pb.partial(Coef::JumpCost, v, &pt, e);
                    let du = o.u_jump(k) - b.u_jump(k);
                    ii += d(Var::X) * (o.x_left()[k] - b.x_left()[k])
                        + d(Var::M) * (o.mean_left()[k] - b.mean_left()[k])
                        + pair.y_weight(Coef::JumpCost, &pt, e) * y1.left_at(t)
                        + d(Var::U) * du;
                    if let Some(adj) = adj {
                        let pt = Point { y: adj.y_at(t), my: adj.y_at(t), ..pt };
                        ham += hamiltonian_jump_u(&*pb, &pt, e, &adj.costate(t)) * du;
                    }
                }
                if b.impulse(k).is_some() {
                    let d_eta = o.eta(k) - b.eta(k);
                    ii += pb.partial(Coef::ImpulseCost, Var::U, &Point { t, u: b.eta(k), ..Point::default() }, e0) * d_eta;
                    if let Some(adj) = adj {
                        ham += adj.impulse_multiplier(&*pb, t, b.eta(k), e0) * d_eta;
                    }
                }
            }
            let pt = Point::state(t_end, b.x()[n], b.mean()[n], 0.0);
            ii += pb.partial(Coef::TerminalCost, Var::X, &pt, e0) * (o.x()[n] - b.x()[n])
                + pb.partial(Coef::TerminalCost, Var::M, &pt, e0) * (o.mean()[n] - b.mean()[n]);
            acc.push((ii, ham));
        },
        |a, b| a.extend(b),
    )?;
    let ii = Estimate::from_samples(&per_path.iter().map(|v| v.0).collect::<Vec<_>>());
    let ham = Estimate::from_samples(&per_path.iter().map(|v| v.1).collect::<Vec<_>>());
    let half = 4.0 * ii.std_error;
    Ok(DualityReport {
        estimate: ii.mean,
        std_error: ii.std_error,
        ci_half_width: half,
        hamiltonian_form: adj.map(|_| ham.mean),
        hamiltonian_std_error: adj.map(|_| ham.std_error),
        verdict: Verdict::of(ii.mean.abs() <= half + 1e-12),
        replicates: 1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub eps: Vec<f64>,
    /// Paired `J(û + ε(v − û), η̂ + ε(ξ − η̂)) − J(û, η̂)`.
    pub fd: Vec<f64>,
    pub fd_std_error: Vec<f64>,
    /// First-order term in Hamiltonian form.
    pub jhat: Vec<f64>,
    pub jhat_std_error: Vec<f64>,
    /// `|FD − Ĵ|`
    pub gap: Vec<f64>,
    /// `|FD − Ĵ| / ε`
    pub gap_over_eps: Vec<f64>,
    pub slope: f64,
    /// `Ĵ ≥ −3σ̂` at every ε.
    pub jhat_nonnegative: bool,
}

/// Compares paired finite differences of the cost with the Hamiltonian first-order term.
pub fn directional_derivative_check(
    base: &PathEnsemble,
    direction: &Direction,
    eps: &[f64],
    adj: &AdjointPaths,
) -> Result<GradientReport, SmpError> {
    let (c0, _) = cost_of(base)?;
    let mut r = GradientReport {
        eps: eps.to_vec(),
        fd: vec![],
        fd_std_error: vec![],
        jhat: vec![],
        jhat_std_error: vec![],
        gap: vec![],
        gap_over_eps: vec![],
        slope: f64::NAN,
        jhat_nonnegative: true,
    };
    for &e in eps {
        let pert = simulate_perturbed(base, direction, e, e)?;
        let (c1, _) = cost_of(&pert)?;
        let diff: Vec<f64> = c1.per_path.iter().zip(&c0.per_path).map(|(a, b)| a - b).collect();
        let fd = Estimate::from_samples(&diff);
        let d = duality_residual(base, &pert, Some(adj))?;
        let (jh, jse) = (d.hamiltonian_form.unwrap_or(0.0), d.hamiltonian_std_error.unwrap_or(0.0));
        r.fd.push(fd.mean);
        r.fd_std_error.push(fd.std_error);
        r.jhat.push(jh);
        r.jhat_std_error.push(jse);
        r.gap.push((fd.mean - jh).abs());
        r.gap_over_eps.push((fd.mean - jh).abs() / e);
        r.jhat_nonnegative &= jh >= -3.0 * jse - 1e-12;
    }
    r.slope = log_log_slope(eps, &r.gap);
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationReport {
    pub eps: Vec<f64>,
    /// `E[sup_t |x^ε − x̂|²]`
    pub sup_sq: Vec<f64>,
    /// `E[sup_t |x^ε − x̂ − x¹|²] / (ε₁² + ε₂²)`
    pub remainder_ratio: Vec<f64>,
    pub slope: f64,
    /// Whether the ratio shrinks along the ε list (or has vanished to roundoff).
    pub ratios_decreasing: bool,
}

/// Order of the state perturbation and of the first-variation remainder, with `ε₁ = ε₂ = ε`.
pub fn variation_order_check(base: &PathEnsemble, direction: &Direction, eps: &[f64]) -> Result<VariationReport, SmpError> {
    let mut sup_sq = Vec::new();
    let mut ratio = Vec::new();
    for &e in eps {
        let pert = simulate_perturbed(base, direction, e, e)?;
        let var = simulate_first_variation(base, direction, e, e)?;
        let (s, r) = PathEnsemble::fold_paths_zip(
            &[base, &pert, &var],
            || (0.0, 0.0),
            |acc, _, ps| {
                let (b, p, v) = (&ps[0], &ps[1], &ps[2]);
                let (mut s, mut r) = (0.0f64, 0.0f64);
                for k in 0..b.len() {
                    for (xb, xp, xv) in [(b.x()[k], p.x()[k], v.x()[k]), (b.x_left()[k], p.x_left()[k], v.x_left()[k])] {
                        s = s.max((xp - xb).powi(2));
                        r = r.max((xp - xb - xv).powi(2));
                    }
                }
                acc.0 += s;
                acc.1 += r;
            },
            |a, b| {
                a.0 += b.0;
                a.1 += b.1;
            },
        )?;
        let m = base.paths() as f64;
        sup_sq.push(s / m);
        ratio.push(r / m / (2.0 * e * e));
    }
    // A remainder at roundoff relative to the state perturbation counts as vanished.
    let vanished = |i: usize| ratio[i] <= 1e-12 * sup_sq[i] / (2.0 * eps[i] * eps[i]);
    let ratios_decreasing = (1..ratio.len()).all(|i| ratio[i] < ratio[i - 1] || vanished(i));
    Ok(VariationReport { slope: log_log_slope(eps, &sup_sq), ratios_decreasing, eps: eps.to_vec(), sup_sq, remainder_ratio: ratio })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::forward::{simulate, SimConfig};
    use crate::lq::{fixed_point_y0, lq_nodes, optimal_feedback};
    use crate::model::{
        example1_impulse_times, example1_spec, example2_spec, nonlinear_demo_spec, ControlLaw, GeneralSpec, ImpulseSchedule,
    };

    fn unit() -> MarkSpace {
        MarkSpace::single(0.0, 1.0).unwrap()
    }

    fn e0() -> Mark {
        unit().mark(0)
    }

    #[test]
    fn zero_problem_has_zero_hamiltonians() {
        let pb = GeneralSpec::new(1.0, 0.0);
        let pt = Point::state(0.3, 1.0, 0.5, 0.7);
        let c = Costate { q: 1.0, p: 2.0, theta: 3.0, vartheta: 4.0 };
        assert_eq!(hamiltonian(&pb, &pt, e0(), &c), 0.0);
        assert_eq!(hamiltonian_jump(&pb, &pt, e0(), &c), 0.0);
    }

    #[test]
    fn example2_stationarity_roots() {
        let ex = example2_spec(&unit());
        let c = Costate { q: -0.5, p: 0.8, ..Default::default() };
        let at = |u: f64| Point::state(0.5, 0.6, 0.6, u);
        // p − 2qu + u = 0 ⇒ u = −p/2
        assert_abs_diff_eq!(hamiltonian_u(&ex.spec, &at(-0.4), e0(), &c), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(hamiltonian_u(&ex.spec, &at(0.0), e0(), &c), 0.8, epsilon = 1e-8);
        // p + 4u = 0 ⇒ u = −p/4
        assert_abs_diff_eq!(hamiltonian_jump_u(&ex.spec, &at(-0.2), e0(), &c), 0.0, epsilon = 1e-8);
        let h = hamiltonian(&ex.spec, &at(0.3), e0(), &c);
        assert_abs_diff_eq!(h, 0.5 * 0.09 + 0.8 * 0.3 + 0.5 * 0.09, epsilon = 1e-12);
    }

    #[test]
    fn lq_stationarity_root() {
        let spec = example1_spec();
        let c = Costate { q: 0.3, p: -0.7, theta: 0.2, vartheta: 0.0 };
        let t = 0.4;
        let root = c.q * spec.c5.eval(t) - c.p * spec.c1.eval(t) - c.theta * spec.c2.eval(t);
        let pt = Point::state(t, 1.0, 0.9, root);
        assert_abs_diff_eq!(hamiltonian_u(&spec, &pt, e0(), &c), 0.0, epsilon = 1e-12);
        let jroot = -c.p * spec.c3.eval(t);
        assert_abs_diff_eq!(hamiltonian_jump_u(&spec, &Point { u: jroot, ..pt }, e0(), &c), 0.0, epsilon = 1e-12);
    }

    fn lq_optimum(paths: usize, dt: f64, seed: u64) -> (LQSpec, PathEnsemble, AdjointPaths, ControlLaw) {
        let spec = example1_spec();
        let imp = example1_impulse_times();
        let sol = fixed_point_y0(&spec, 1.0, &lq_nodes(1.0, 1e-3, &imp).unwrap(), &imp).unwrap();
        let adj = assemble_adjoints(&spec, &sol).unwrap();
        let (law, sched) = optimal_feedback(&spec, &sol);
        let ens = simulate(Arc::new(spec.clone()), &law, &sched, &unit(), &SimConfig::new(paths, dt), seed).unwrap();
        (spec, ens, adj, law)
    }

    #[test]
    fn lq_optimum_passes() {
        let (spec, ens, adj, _) = lq_optimum(200, 1e-2, 5);
        let r = check_smp(&ens, &adj, &SmpTolerances::default()).unwrap();
        assert!(r.passed(), "{r:#?}");
        assert!(r.jump.evaluations > 0 && r.continuous.evaluations > 0);
        assert_eq!(r.impulse_stationarity.residual, 0.0);
        assert!(adj.terminal_residual < 1e-12);
        assert!(adj.initial_residual < 1e-12 && spec.mean_weight > 0.0);
    }

    #[test]
    fn boundary_conditions_without_terminal_loading() {
        let spec = LQSpec { terminal_slope: 0.0, f1: 0.0.into(), f1_bar: 0.0.into(), ..example1_spec() };
        let sol = fixed_point_y0(&spec, 1.0, &lq_nodes(1.0, 1e-2, &[]).unwrap(), &[]).unwrap();
        let adj = assemble_adjoints(&spec, &sol).unwrap();
        assert_eq!(adj.p.terminal(), spec.mean_weight * sol.mean.terminal());
        let mut bad = sol.clone();
        bad.y0_hat += 1.0;
        assert!(matches!(assemble_adjoints(&spec, &bad), Err(SmpError::InconsistentSolution { .. })));
    }

    #[test]
    fn shifted_law_fails_continuous_part() {
        let ms = unit();
        let ex = example2_spec(&ms);
        let law = ex.progressive.shifted(0.1);
        let ens = simulate(Arc::new(ex.spec), &law, &ImpulseSchedule::none(), &ms, &SimConfig::new(100, 1e-2), 1).unwrap();
        let r = check_smp(&ens, &example2_adjoints(1.0, 1.0), &SmpTolerances::default()).unwrap();
        assert_eq!(r.continuous.verdict, Verdict::Fail);
        assert!((r.continuous.residual - 0.2).abs() < 0.02, "{}", r.continuous.residual);
        assert!(!r.passed());
    }

    #[test]
    fn no_events_is_vacuous_pass() {
        let ms = MarkSpace::single(0.0, 1e-9).unwrap();
        let ex = example2_spec(&ms);
        let ens = simulate(Arc::new(ex.spec), &ex.progressive, &ImpulseSchedule::none(), &ms, &SimConfig::new(20, 1e-2), 1).unwrap();
        let r = check_smp(&ens, &example2_adjoints(1e-9, 1.0), &SmpTolerances::default()).unwrap();
        assert_eq!(r.jump.evaluations, 0);
        assert_eq!(r.jump.verdict, Verdict::Pass);
        assert!(r.jump.note.as_deref().unwrap().starts_with("0 events"));
    }

    #[test]
    fn constrained_controls_use_probes() {
        let ms = unit();
        let spec = GeneralSpec::new(1.0, 0.0)
            .with_drift(|p, _| p.u)
            .with_running_cost(|p, _| 0.5 * (p.u - 2.0).powi(2))
            .with_control_set(Interval::new(-1.0, 1.0));
        let adj = AdjointPaths::from_curves(
            SampledCurve::new(vec![0.0, 1.0], vec![0.0, 0.0]),
            SampledCurve::new(vec![0.0, 1.0], vec![0.0, 0.0]),
            "test",
        );
        let at_bound =
            simulate(Arc::new(spec.clone()), &ControlLaw::constant(1.0), &ImpulseSchedule::none(), &ms, &SimConfig::new(5, 0.1), 1)
                .unwrap();
        assert_eq!(check_smp(&at_bound, &adj, &SmpTolerances::default()).unwrap().continuous.residual, 0.0);
        let inside =
            simulate(Arc::new(spec), &ControlLaw::constant(0.0), &ImpulseSchedule::none(), &ms, &SimConfig::new(5, 0.1), 1).unwrap();
        // H_u = −2 at u = 0: worst probe V = 1 gives 2
        assert_abs_diff_eq!(check_smp(&inside, &adj, &SmpTolerances::default()).unwrap().continuous.residual, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn duality_vanishes_for_identical_controls() {
        let (_, ens, adj, _) = lq_optimum(100, 1e-2, 2);
        let d = duality_residual(&ens, &ens, Some(&adj)).unwrap();
        assert_eq!((d.estimate, d.hamiltonian_form), (0.0, Some(0.0)));
        assert_eq!(d.verdict, Verdict::Pass);
    }

    #[test]
    fn duality_in_example2() {
        let ms = unit();
        let ex = example2_spec(&ms);
        let base = simulate(Arc::new(ex.spec), &ex.progressive, &ImpulseSchedule::none(), &ms, &SimConfig::new(2000, 1e-2), 9).unwrap();
        let other = simulate_perturbed(&base, &Direction::toward(ex.progressive.shifted(0.1)), 1.0, 1.0).unwrap();
        let d = duality_residual(&base, &other, Some(&example2_adjoints(1.0, 1.0))).unwrap();
        assert_eq!(d.verdict, Verdict::Pass, "{d:?}");
        assert!(d.estimate.abs() < 1e-3);
    }

    #[test]
    fn duality_in_lq_reference() {
        let runs: Vec<_> = (1..=8).map(|seed| lq_optimum(400, 4e-3, seed)).collect();
        let law = runs[0].3.clone();
        for dir in [
            Direction::toward(law.shifted(0.3)),
            Direction::toward(ControlLaw::predictable(|t, x, _, _| x - t)),
            Direction::zero().with_impulses(crate::model::ImpulseValues::Fixed(vec![1.0, -1.0])),
        ] {
            let reports: Vec<_> = runs
                .iter()
                .map(|(_, base, adj, _)| {
                    let other = simulate_perturbed(base, &dir, 1.0, 1.0).unwrap();
                    duality_residual(base, &other, Some(adj)).unwrap()
                })
                .collect();
            let d = DualityReport::pooled(&reports).unwrap();
            assert_eq!(d.verdict, Verdict::Pass, "{d:?}");
            assert!(d.hamiltonian_form.unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn zero_direction_gives_zero_gradient() {
        let ms = unit();
        let ex = example2_spec(&ms);
        let base = simulate(Arc::new(ex.spec), &ex.progressive, &ImpulseSchedule::none(), &ms, &SimConfig::new(50, 1e-2), 9).unwrap();
        let g = directional_derivative_check(&base, &Direction::zero(), &[0.1, 0.05], &example2_adjoints(1.0, 1.0)).unwrap();
        assert!(g.fd.iter().chain(&g.jhat).all(|v| *v == 0.0));
        let v = variation_order_check(&base, &Direction::zero(), &[0.1, 0.05]).unwrap();
        assert!(v.sup_sq.iter().chain(&v.remainder_ratio).all(|x| *x == 0.0));
    }

    #[test]
    fn gradient_gap_is_second_order_in_example2() {
        let ms = unit();
        let ex = example2_spec(&ms);
        let base = simulate(Arc::new(ex.spec), &ex.progressive, &ImpulseSchedule::none(), &ms, &SimConfig::new(500, 1e-2), 9).unwrap();
        let dir = Direction::toward(ex.progressive.shifted(1.0));
        let g = directional_derivative_check(&base, &dir, &[0.2, 0.1, 0.05, 0.025], &example2_adjoints(1.0, 1.0)).unwrap();
        assert!((g.slope - 2.0).abs() < 0.3, "{g:?}");
        assert!(g.jhat_nonnegative);
    }

    #[test]
    fn variation_orders_on_nonlinear_demo() {
        let ms = MarkSpace::from_pairs(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let law = ControlLaw::predictable(|_, x, _, _| -0.5 * x);
        let base = simulate(Arc::new(nonlinear_demo_spec()), &law, &ImpulseSchedule::none(), &ms, &SimConfig::new(400, 1e-2), 3).unwrap();
        let dir = Direction::toward(ControlLaw::predictable(|t, _, _, _| 1.0 + t));
        let v = variation_order_check(&base, &dir, &[0.2, 0.1, 0.05, 0.025]).unwrap();
        assert!((1.8..=2.2).contains(&v.slope), "{v:?}");
        assert!(v.ratios_decreasing, "{v:?}");
    }

    #[test]
    fn lq_remainder_vanishes() {
        let (_, base, _, law) = lq_optimum(100, 1e-2, 3);
        let v = variation_order_check(&base, &Direction::toward(law.shifted(0.5)), &[0.2, 0.1]).unwrap();
        assert!(v.remainder_ratio.iter().all(|r| *r < 1e-20), "{v:?}");
        assert!((v.slope - 2.0).abs() < 1e-6);
    }
}
