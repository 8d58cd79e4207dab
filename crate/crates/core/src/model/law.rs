use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::problem::Interval;
use super::ModelError;
use crate::randkit::Mark;

/// Feedback `(t, x, m, mark) -> u`.
pub type Feedback = Arc<dyn Fn(f64, f64, f64, Mark) -> f64 + Send + Sync>;

/// Two-branch control: one branch off the jump times, one at realized jumps.
///
/// The jump branch receives left limits `(x⁻, m⁻)`. Its value at the current
/// state is also what the compensator of the Ñ-integral sees, since that is
/// the predictable projection of the jump-time control.
#[derive(Clone)]
pub struct ControlLaw {
    continuous: Feedback,
    jump: Feedback,
    reads_mean: bool,
}

impl ControlLaw {
    pub fn new(
        continuous: impl Fn(f64, f64, f64, Mark) -> f64 + Send + Sync + 'static,
        jump: impl Fn(f64, f64, f64, Mark) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { continuous: Arc::new(continuous), jump: Arc::new(jump), reads_mean: true }
    }

    /// Declares that neither branch reads the mean argument, so a system without
    /// mean-field coefficients needs a single simulation pass.
    pub fn ignoring_mean(mut self) -> Self {
        self.reads_mean = false;
        self
    }

    pub fn reads_mean(&self) -> bool {
        self.reads_mean
    }

    /// Same feedback on both branches.
    pub fn predictable(f: impl Fn(f64, f64, f64, Mark) -> f64 + Send + Sync + 'static) -> Self {
        let f: Feedback = Arc::new(f);
        Self { continuous: f.clone(), jump: f, reads_mean: true }
    }

    pub fn constant(c: f64) -> Self {
        Self::predictable(move |_, _, _, _| c).ignoring_mean()
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    #[inline]
    pub fn continuous(&self, t: f64, x: f64, m: f64, e: Mark) -> f64 {
        (self.continuous)(t, x, m, e)
    }

    #[inline]
    pub fn at_jump(&self, t: f64, x_left: f64, m_left: f64, e: Mark) -> f64 {
        (self.jump)(t, x_left, m_left, e)
    }

    /// Adds `d` to both branches.
    pub fn shifted(&self, d: f64) -> Self {
        let (c, j) = (self.continuous.clone(), self.jump.clone());
        Self { reads_mean: self.reads_mean, ..Self::new(move |t, x, m, e| c(t, x, m, e) + d, move |t, x, m, e| j(t, x, m, e) + d) }
    }

    /// Projects both branches onto `set`.
    pub fn clamped(&self, set: Interval) -> Self {
        let (c, j) = (self.continuous.clone(), self.jump.clone());
        Self {
            reads_mean: self.reads_mean,
            ..Self::new(move |t, x, m, e| c(t, x, m, e).clamp(set.lo, set.hi), move |t, x, m, e| j(t, x, m, e).clamp(set.lo, set.hi))
        }
    }
}

impl fmt::Debug for ControlLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ControlLaw(..)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Epochs {
    /// Deterministic impulse times in (0, T].
    Times(Vec<f64>),
    /// 1-based indices of jump times; impulses fire at the k-th jump of each path.
    KthJumps(Vec<usize>),
}

/// `(epoch index, epoch time) -> η`.
pub type ImpulseRule = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ImpulseValues {
    Fixed(Vec<f64>),
    Rule(ImpulseRule),
}

impl fmt::Debug for ImpulseValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImpulseValues::Fixed(v) => f.debug_tuple("Fixed").field(v).finish(),
            ImpulseValues::Rule(_) => f.write_str("Rule(..)"),
        }
    }
}

/// Impulse epochs with the values bound to them.
#[derive(Debug, Clone)]
pub struct ImpulseSchedule {
    pub epochs: Epochs,
    pub values: ImpulseValues,
    warned: Arc<AtomicBool>,
}

impl ImpulseSchedule {
    pub fn new(epochs: Epochs, values: ImpulseValues) -> Self {
        Self { epochs, values, warned: Arc::new(AtomicBool::new(false)) }
    }

    pub fn none() -> Self {
        Self::new(Epochs::Times(Vec::new()), ImpulseValues::Fixed(Vec::new()))
    }

    pub fn at_times(times: Vec<f64>, values: Vec<f64>) -> Self {
        Self::new(Epochs::Times(times), ImpulseValues::Fixed(values))
    }

    pub fn with_rule(epochs: Epochs, rule: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(epochs, ImpulseValues::Rule(Arc::new(rule)))
    }

    /// Same epochs, new values.
    pub fn with_values(&self, values: ImpulseValues) -> Self {
        Self::new(self.epochs.clone(), values)
    }

    pub fn len(&self) -> usize {
        match &self.epochs {
            Epochs::Times(t) => t.len(),
            Epochs::KthJumps(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Deterministic epochs; empty for jump-indexed schedules.
    pub fn fixed_times(&self) -> &[f64] {
        match &self.epochs {
            Epochs::Times(t) => t,
            Epochs::KthJumps(_) => &[],
        }
    }

    /// Impulse size at epoch `i`. A missing value counts as zero, with one warning per schedule.
    pub fn value(&self, i: usize, t: f64) -> f64 {
        match &self.values {
            ImpulseValues::Rule(r) => r(i, t),
            ImpulseValues::Fixed(v) => match v.get(i) {
                Some(&x) => x,
                None => {
                    if !self.warned.swap(true, Ordering::Relaxed) {
                        log::warn!("impulse epoch {i} at t = {t} has no bound value; using 0");
                    }
                    0.0
                }
            },
        }
    }

    /// Epoch ordering and range checks.
    pub fn validate(&self, horizon: f64) -> Vec<ModelError> {
        let mut errs = Vec::new();
        match &self.epochs {
            Epochs::Times(t) => {
                for (i, w) in t.windows(2).enumerate() {
                    if !(w[0] < w[1]) {
                        errs.push(ModelError::BadImpulseOrder { index: i + 1 });
                    }
                }
                for (i, &x) in t.iter().enumerate() {
                    if !(x > 0.0 && x <= horizon) {
                        errs.push(ModelError::ImpulseOutOfRange { index: i, time: x });
                    }
                }
            }
            Epochs::KthJumps(k) => {
                for (i, w) in k.windows(2).enumerate() {
                    if w[0] >= w[1] {
                        errs.push(ModelError::BadImpulseOrder { index: i + 1 });
                    }
                }
                if k.first() == Some(&0) {
                    errs.push(ModelError::BadImpulseOrder { index: 0 });
                }
            }
        }
        if let ImpulseValues::Fixed(v) = &self.values {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                errs.push(ModelError::NonFiniteCoefficient { name: format!("impulse[{i}]"), t: f64::NAN });
            }
        }
        errs
    }
}

impl Default for ImpulseSchedule {
    fn default() -> Self {
        Self::none()
    }
}
