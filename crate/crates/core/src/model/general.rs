use std::fmt;
use std::sync::Arc;

use super::curve::Curve;
use super::lq_spec::probe_times;
use super::problem::{Coef, Interval, Point, Problem};
use super::{ModelError, ValidationReport};
use crate::randkit::Mark;

/// Coefficient `(point, mark) -> value`.
pub type Field = Arc<dyn Fn(&Point, Mark) -> f64 + Send + Sync>;
/// Function of two reals, e.g. `h(x_T, E[x_T])` or `ψ(τ, η)`.
pub type Field2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Field1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// System given by arbitrary coefficient closures. Derivatives fall back to central differences.
#[derive(Clone)]
pub struct GeneralSpec {
    pub horizon: f64,
    pub x0: f64,
    pub drift: Field,
    pub diffusion: Field,
    pub jump: Field,
    pub compensated: Field,
    pub driver: Field,
    pub running_cost: Field,
    pub jump_cost: Field,
    pub terminal: Field2,
    pub terminal_cost: Field2,
    pub initial_cost: Field1,
    pub impulse_cost: Field2,
    pub state_loading: Curve,
    pub backward_loading: Curve,
    /// Declared Lipschitz bound, kept for diagnostics.
    pub lipschitz: f64,
    pub control_set: Interval,
    pub impulse_set: Interval,
    /// Whether coefficients read `E[x]`.
    pub mean_field: bool,
}

fn zero_field() -> Field {
    Arc::new(|_, _| 0.0)
}

impl GeneralSpec {
    /// All coefficients zero.
    pub fn new(horizon: f64, x0: f64) -> Self {
        Self {
            horizon,
            x0,
            drift: zero_field(),
            diffusion: zero_field(),
            jump: zero_field(),
            compensated: zero_field(),
            driver: zero_field(),
            running_cost: zero_field(),
            jump_cost: zero_field(),
            terminal: Arc::new(|_, _| 0.0),
            terminal_cost: Arc::new(|_, _| 0.0),
            initial_cost: Arc::new(|_| 0.0),
            impulse_cost: Arc::new(|_, _| 0.0),
            state_loading: Curve::zero(),
            backward_loading: Curve::zero(),
            lipschitz: 1.0,
            control_set: Interval::REAL,
            impulse_set: Interval::REAL,
            mean_field: true,
        }
    }

    pub fn with_drift(mut self, f: impl Fn(&Point, Mark) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(&Point, Mark) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_jump(mut self, f: impl Fn(&Point, Mark) -> f64 + Send + Sync + 'static) -> Self {
        self.jump = Arc::new(f);
        self
    }

    pub fn with_compensated(mut self, f: impl Fn(&Point, Mark) -> f64 + Send + Sync + 'static) -> Self {
        self.compensated = Arc::new(f);
        self
    }

    pub fn with_driver(mut self, f: impl Fn(&Point, Mark) -> f64 + Send + Sync + 'static) -> Self {
        self.driver = Arc::new(f);
        self
    }

    pub fn with_running_cost(mut self, f: impl Fn(&Point, Mark) -> f64 + Send + Sync + 'static) -> Self {
        self.running_cost = Arc::new(f);
        self
    }

    pub fn with_jump_cost(mut self, f: impl Fn(&Point, Mark) -> f64 + Send + Sync + 'static) -> Self {
        self.jump_cost = Arc::new(f);
        self
    }

    pub fn with_terminal(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(f);
        self
    }

    pub fn with_terminal_cost(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal_cost = Arc::new(f);
        self
    }

    pub fn with_initial_cost(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.initial_cost = Arc::new(f);
        self
    }

    pub fn with_impulse_cost(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.impulse_cost = Arc::new(f);
        self
    }

    pub fn with_loadings(mut self, state: Curve, backward: Curve) -> Self {
        self.state_loading = state;
        self.backward_loading = backward;
        self
    }

    pub fn with_mean_field(mut self, on: bool) -> Self {
        self.mean_field = on;
        self
    }

    pub fn with_control_set(mut self, set: Interval) -> Self {
        self.control_set = set;
        self
    }

    /// Probes every evaluator on a grid of times and a few state values.
    pub fn validate(self, ms: &crate::randkit::MarkSpace) -> Result<Self, ValidationReport> {
        let mut errors = Vec::new();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errors.push(ModelError::BadHorizon(self.horizon));
            return Err(ValidationReport { errors });
        }
        if !self.x0.is_finite() {
            errors.push(ModelError::NonFiniteCoefficient { name: "x0".into(), t: 0.0 });
        }
        if !(self.lipschitz > 0.0) {
            errors.push(ModelError::NegativeWeight { name: "lipschitz".into(), value: self.lipschitz });
        }
        let coefs = [
            ("drift", Coef::Drift),
            ("diffusion", Coef::Diffusion),
            ("jump", Coef::Jump),
            ("compensated", Coef::Compensated),
            ("driver", Coef::Driver),
            ("running_cost", Coef::RunningCost),
            ("jump_cost", Coef::JumpCost),
            ("terminal", Coef::Terminal),
            ("terminal_cost", Coef::TerminalCost),
            ("initial_cost", Coef::InitialCost),
            ("impulse_cost", Coef::ImpulseCost),
        ];
        let probe_u = if self.control_set.contains(0.0) { 0.0 } else { self.control_set.lo.max(-1e300) };
        for (name, c) in coefs {
            let bad = probe_times(self.horizon).find(|&t| {
                [-1.0, 0.0, 1.0].iter().any(|&x| {
                    let p = Point { t, x, m: x, y: x, my: x, u: probe_u, ..Default::default() };
                    (0..ms.len()).any(|i| !self.eval(c, &p, ms.mark(i)).is_finite())
                })
            });
            if let Some(t) = bad {
                errors.push(ModelError::NonFiniteCoefficient { name: name.into(), t });
            }
        }
        for (name, c) in [("state_loading", &self.state_loading), ("backward_loading", &self.backward_loading)] {
            if let Some(t) = probe_times(self.horizon).find(|&t| !c.eval(t).is_finite()) {
                errors.push(ModelError::NonFiniteCoefficient { name: name.into(), t });
            }
        }
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(ValidationReport { errors })
        }
    }
}

impl fmt::Debug for GeneralSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralSpec")
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("lipschitz", &self.lipschitz)
            .field("control_set", &self.control_set)
            .field("mean_field", &self.mean_field)
            .finish_non_exhaustive()
    }
}

impl Problem for GeneralSpec {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    #[inline]
    fn eval(&self, c: Coef, p: &Point, e: Mark) -> f64 {
        match c {
            Coef::Drift => (self.drift)(p, e),
            Coef::Diffusion => (self.diffusion)(p, e),
            Coef::Jump => (self.jump)(p, e),
            Coef::Compensated => (self.compensated)(p, e),
            Coef::Driver => (self.driver)(p, e),
            Coef::RunningCost => (self.running_cost)(p, e),
            Coef::JumpCost => (self.jump_cost)(p, e),
            Coef::Terminal => (self.terminal)(p.x, p.m),
            Coef::TerminalCost => (self.terminal_cost)(p.x, p.m),
            Coef::InitialCost => (self.initial_cost)(p.y),
            Coef::ImpulseCost => (self.impulse_cost)(p.t, p.u),
        }
    }

    fn state_loading(&self, t: f64) -> f64 {
        self.state_loading.eval(t)
    }

    fn backward_loading(&self, t: f64) -> f64 {
        self.backward_loading.eval(t)
    }

    fn mean_field(&self) -> bool {
        self.mean_field
    }

    fn control_set(&self) -> Interval {
        self.control_set
    }

    fn impulse_set(&self) -> Interval {
        self.impulse_set
    }
}
