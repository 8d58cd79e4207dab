use std::sync::Arc;

use super::mean::MeanCurve;
use super::noise::PathNoise;
use super::ForwardError;
use crate::model::{Coef, ControlLaw, ImpulseSchedule, ImpulseValues, Point, Problem, Var};
use crate::randkit::{Mark, MarkSpace};

/// State and control values of one path on its node grid.
#[derive(Debug, Clone, Default)]
pub(crate) struct PathState {
    pub x: Vec<f64>,
    pub x_left: Vec<f64>,
    pub mean: Vec<f64>,
    pub mean_left: Vec<f64>,
    /// Continuous-branch control per (node, atom).
    pub u_cont: Vec<f64>,
    /// Jump branch at the current state per (node, atom): the compensator's control.
    pub u_comp: Vec<f64>,
    /// Jump branch at realized jumps; NaN elsewhere.
    pub u_jump: Vec<f64>,
    /// Impulse size at impulse nodes; 0 elsewhere.
    pub eta: Vec<f64>,
}

impl PathState {
    fn reset(&mut self, n: usize, atoms: usize) {
        for v in [&mut self.x, &mut self.x_left, &mut self.mean, &mut self.mean_left, &mut self.eta] {
            v.clear();
            v.resize(n, 0.0);
        }
        self.u_jump.clear();
        self.u_jump.resize(n, f64::NAN);
        for v in [&mut self.u_cont, &mut self.u_comp] {
            v.clear();
            v.resize(n * atoms, 0.0);
        }
    }

    fn fill_mean(&mut self, nodes: &[f64], mean: &MeanCurve) {
        let mut cur = mean.cursor();
        for (k, &t) in nodes.iter().enumerate() {
            let (v, l) = cur.at(t);
            self.mean[k] = v;
            self.mean_left[k] = l;
        }
    }
}

/// Perturbation direction `(v, ξ)`. `None` means "same as the base", i.e. a zero direction.
#[derive(Debug, Clone, Default)]
pub struct Direction {
    pub law: Option<ControlLaw>,
    pub impulses: Option<ImpulseValues>,
}

impl Direction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn toward(law: ControlLaw) -> Self {
        Self { law: Some(law), impulses: None }
    }

    pub fn with_impulses(mut self, values: ImpulseValues) -> Self {
        self.impulses = Some(values);
        self
    }

    pub fn moves_impulses(&self) -> bool {
        self.impulses.is_some()
    }
}

#[derive(Clone)]
pub(crate) struct StateKernel {
    pub problem: Arc<dyn Problem>,
    pub law: ControlLaw,
    pub impulses: ImpulseSchedule,
    pub marks: MarkSpace,
}

#[derive(Clone)]
pub(crate) struct PerturbedKernel {
    pub base: StateKernel,
    pub base_mean: MeanCurve,
    pub direction: Direction,
    pub eps_u: f64,
    pub eps_eta: f64,
}

#[derive(Clone)]
pub(crate) enum Kernel {
    State(StateKernel),
    /// `u^ε = û + ε₁(v − û)`, `η^ε = η̂ + ε₂(ξ − η̂)`, open loop along the base path.
    Perturbed(PerturbedKernel),
    /// Linearized state `x¹` along the base path with the same perturbation.
    Variation(PerturbedKernel),
}

fn check(x: f64, path: usize, t: f64) -> Result<(), ForwardError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ForwardError::NonFiniteState { path, t })
    }
}

impl Kernel {
    pub fn problem(&self) -> &Arc<dyn Problem> {
        match self {
            Kernel::State(k) => &k.problem,
            Kernel::Perturbed(p) | Kernel::Variation(p) => &p.base.problem,
        }
    }

    pub fn impulses(&self) -> &ImpulseSchedule {
        match self {
            Kernel::State(k) => &k.impulses,
            Kernel::Perturbed(p) | Kernel::Variation(p) => &p.base.impulses,
        }
    }

    /// Whether a pass depends on the frozen mean curve.
    pub fn reads_mean(&self) -> bool {
        match self {
            Kernel::State(k) => k.problem.mean_field() || k.law.reads_mean(),
            Kernel::Perturbed(p) | Kernel::Variation(p) => p.base.problem.mean_field(),
        }
    }

    pub fn x0(&self) -> f64 {
        match self {
            Kernel::Variation(_) => 0.0,
            _ => self.problem().x0(),
        }
    }

    pub fn is_state(&self) -> bool {
        !matches!(self, Kernel::Variation(_))
    }

    pub fn run(
        &self,
        path: usize,
        noise: &PathNoise,
        mean: &MeanCurve,
        out: &mut PathState,
        scratch: &mut PathState,
    ) -> Result<(), ForwardError> {
        match self {
            Kernel::State(k) => k.run(path, noise, mean, out),
            Kernel::Perturbed(p) => {
                p.base.run(path, noise, &p.base_mean, scratch)?;
                p.run_perturbed(path, noise, mean, scratch, out)
            }
            Kernel::Variation(p) => {
                p.base.run(path, noise, &p.base_mean, scratch)?;
                p.run_variation(path, noise, mean, scratch, out)
            }
        }
    }
}

impl StateKernel {
    pub fn run(&self, path: usize, noise: &PathNoise, mean: &MeanCurve, out: &mut PathState) -> Result<(), ForwardError> {
        let pb = &*self.problem;
        let nodes = &noise.nodes;
        let n = nodes.len();
        let na = self.marks.len();
        out.reset(n, na);
        out.fill_mean(nodes, mean);
        let mut x = pb.x0();
        out.x[0] = x;
        out.x_left[0] = x;
        for k in 0..n {
            let t = nodes[k];
            let m = out.mean[k];
            let (mut drift, mut diff) = (0.0, 0.0);
            for a in 0..na {
                let e = self.marks.mark(a);
                let w = self.marks.weight(a);
                let uc = self.law.continuous(t, x, m, e);
                let uj = self.law.at_jump(t, x, m, e);
                out.u_cont[k * na + a] = uc;
                out.u_comp[k * na + a] = uj;
                if k + 1 < n {
                    let pc = Point::state(t, x, m, uc);
                    let pj = Point::state(t, x, m, uj);
                    drift += w * (pb.eval(Coef::Drift, &pc, e) - pb.eval(Coef::Compensated, &pj, e));
                    diff += w * pb.eval(Coef::Diffusion, &pc, e);
                }
            }
            if k + 1 == n {
                break;
            }
            let t1 = nodes[k + 1];
            let xl = x + drift * (t1 - t) + diff * noise.increments[k];
            check(xl, path, t1)?;
            x = xl;
            if let Some(a) = noise.jump[k + 1] {
                let e = self.marks.mark(a as usize);
                let ml = out.mean_left[k + 1];
                let uj = self.law.at_jump(t1, xl, ml, e);
                out.u_jump[k + 1] = uj;
                let p = Point::state(t1, xl, ml, uj);
                x += pb.eval(Coef::Jump, &p, e) + pb.eval(Coef::Compensated, &p, e);
            }
            if let Some(i) = noise.impulse[k + 1] {
                let eta = self.impulses.value(i as usize, t1);
                out.eta[k + 1] = eta;
                x += pb.state_loading(t1) * eta;
            }
            check(x, path, t1)?;
            out.x_left[k + 1] = xl;
            out.x[k + 1] = x;
        }
        Ok(())
    }
}

impl PerturbedKernel {
    fn dir_cont(&self, base: &PathState, k: usize, a: usize, t: f64, e: Mark, na: usize) -> f64 {
        let u = base.u_cont[k * na + a];
        match &self.direction.law {
            Some(v) => v.continuous(t, base.x[k], base.mean[k], e) - u,
            None => 0.0,
        }
    }

    fn dir_comp(&self, base: &PathState, k: usize, a: usize, t: f64, e: Mark, na: usize) -> f64 {
        let u = base.u_comp[k * na + a];
        match &self.direction.law {
            Some(v) => v.at_jump(t, base.x[k], base.mean[k], e) - u,
            None => 0.0,
        }
    }

    fn dir_jump(&self, base: &PathState, k: usize, t: f64, e: Mark) -> f64 {
        match &self.direction.law {
            Some(v) => v.at_jump(t, base.x_left[k], base.mean_left[k], e) - base.u_jump[k],
            None => 0.0,
        }
    }

    fn dir_impulse(&self, base: &PathState, k: usize, i: usize, t: f64) -> f64 {
        match &self.direction.impulses {
            Some(vals) => {
                let xi = match vals {
                    ImpulseValues::Fixed(v) => v.get(i).copied().unwrap_or(0.0),
                    ImpulseValues::Rule(r) => r(i, t),
                };
                xi - base.eta[k]
            }
            None => 0.0,
        }
    }

    fn run_perturbed(
        &self,
        path: usize,
        noise: &PathNoise,
        mean: &MeanCurve,
        base: &PathState,
        out: &mut PathState,
    ) -> Result<(), ForwardError> {
        let pb = &*self.base.problem;
        let marks = &self.base.marks;
        let nodes = &noise.nodes;
        let n = nodes.len();
        let na = marks.len();
        out.reset(n, na);
        out.fill_mean(nodes, mean);
        let mut x = pb.x0();
        out.x[0] = x;
        out.x_left[0] = x;
        for k in 0..n {
            let t = nodes[k];
            let m = out.mean[k];
            let (mut drift, mut diff) = (0.0, 0.0);
            for a in 0..na {
                let e = marks.mark(a);
                let uc = base.u_cont[k * na + a] + self.eps_u * self.dir_cont(base, k, a, t, e, na);
                let uj = base.u_comp[k * na + a] + self.eps_u * self.dir_comp(base, k, a, t, e, na);
                out.u_cont[k * na + a] = uc;
                out.u_comp[k * na + a] = uj;
                if k + 1 < n {
                    let w = marks.weight(a);
                    let pc = Point::state(t, x, m, uc);
                    let pj = Point::state(t, x, m, uj);
                    drift += w * (pb.eval(Coef::Drift, &pc, e) - pb.eval(Coef::Compensated, &pj, e));
                    diff += w * pb.eval(Coef::Diffusion, &pc, e);
                }
            }
            if k + 1 == n {
                break;
            }
            let t1 = nodes[k + 1];
            let xl = x + drift * (t1 - t) + diff * noise.increments[k];
            check(xl, path, t1)?;
            x = xl;
            if let Some(a) = noise.jump[k + 1] {
                let e = marks.mark(a as usize);
                let uj = base.u_jump[k + 1] + self.eps_u * self.dir_jump(base, k + 1, t1, e);
                out.u_jump[k + 1] = uj;
                let p = Point::state(t1, xl, out.mean_left[k + 1], uj);
                x += pb.eval(Coef::Jump, &p, e) + pb.eval(Coef::Compensated, &p, e);
            }
            if let Some(i) = noise.impulse[k + 1] {
                let eta = base.eta[k + 1] + self.eps_eta * self.dir_impulse(base, k + 1, i as usize, t1);
                out.eta[k + 1] = eta;
                x += pb.state_loading(t1) * eta;
            }
            check(x, path, t1)?;
            out.x_left[k + 1] = xl;
            out.x[k + 1] = x;
        }
        Ok(())
    }

    /// `x¹` with coefficients differentiated at the base path. Control slots hold the
    /// control perturbations `ε₁(v − û)`, `eta` holds `ε₂(ξ − η̂)`.
    fn run_variation(
        &self,
        path: usize,
        noise: &PathNoise,
        mean: &MeanCurve,
        base: &PathState,
        out: &mut PathState,
    ) -> Result<(), ForwardError> {
        let pb = &*self.base.problem;
        let marks = &self.base.marks;
        let nodes = &noise.nodes;
        let n = nodes.len();
        let na = marks.len();
        out.reset(n, na);
        out.fill_mean(nodes, mean);
        let mut x = 0.0;
        for k in 0..n {
            let t = nodes[k];
            let m = out.mean[k];
            let (mut drift, mut diff) = (0.0, 0.0);
            for a in 0..na {
                let e = marks.mark(a);
                let du_c = self.eps_u * self.dir_cont(base, k, a, t, e, na);
                let du_j = self.eps_u * self.dir_comp(base, k, a, t, e, na);
                out.u_cont[k * na + a] = du_c;
                out.u_comp[k * na + a] = du_j;
                if k + 1 < n {
                    let w = marks.weight(a);
                    let pc = Point::state(t, base.x[k], base.mean[k], base.u_cont[k * na + a]);
                    let pj = Point::state(t, base.x[k], base.mean[k], base.u_comp[k * na + a]);
                    let lin = |c: Coef, p: &Point, du: f64| {
                        pb.partial(c, Var::X, p, e) * x + pb.partial(c, Var::M, p, e) * m + pb.partial(c, Var::U, p, e) * du
                    };
                    drift += w * (lin(Coef::Drift, &pc, du_c) - lin(Coef::Compensated, &pj, du_j));
                    diff += w * lin(Coef::Diffusion, &pc, du_c);
                }
            }
            if k + 1 == n {
                break;
            }
            let t1 = nodes[k + 1];
            let xl = x + drift * (t1 - t) + diff * noise.increments[k];
            check(xl, path, t1)?;
            x = xl;
            if let Some(a) = noise.jump[k + 1] {
                let e = marks.mark(a as usize);
                let du = self.eps_u * self.dir_jump(base, k + 1, t1, e);
                out.u_jump[k + 1] = du;
                let p = Point::state(t1, base.x_left[k + 1], base.mean_left[k + 1], base.u_jump[k + 1]);
                let ml = out.mean_left[k + 1];
                for c in [Coef::Jump, Coef::Compensated] {
                    x += pb.partial(c, Var::X, &p, e) * xl + pb.partial(c, Var::M, &p, e) * ml + pb.partial(c, Var::U, &p, e) * du;
                }
            }
            if let Some(i) = noise.impulse[k + 1] {
                let d = self.eps_eta * self.dir_impulse(base, k + 1, i as usize, t1);
                out.eta[k + 1] = d;
                x += pb.state_loading(t1) * d;
            }
            check(x, path, t1)?;
            out.x_left[k + 1] = xl;
            out.x[k + 1] = x;
        }
        Ok(())
    }
}
