use serde::{Deserialize, Serialize};

use crate::randkit::Mark;

/// Arguments of every coefficient function.
///
/// `m`, `my`, `mz` are the means `E[x]`, `E[y]`, `E[z]`. For `Terminal` and
/// `TerminalCost` only `(x, m)` are read, `InitialCost` reads `y`, and
/// `ImpulseCost` reads `(t, u)` with `u` the impulse size.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: f64,
    pub m: f64,
    pub y: f64,
    pub my: f64,
    pub z: f64,
    pub mz: f64,
    pub u: f64,
}

impl Point {
    pub fn state(t: f64, x: f64, m: f64, u: f64) -> Self {
        Self { t, x, m, u, ..Default::default() }
    }

    pub fn with_backward(mut self, y: f64, my: f64) -> Self {
        self.y = y;
        self.my = my;
        self
    }

    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x,
            Var::M => self.m,
            Var::Y => self.y,
            Var::MY => self.my,
            Var::Z => self.z,
            Var::MZ => self.mz,
            Var::U => self.u,
        }
    }

    pub fn set(&mut self, v: Var, val: f64) {
        match v {
            Var::X => self.x = val,
            Var::M => self.m = val,
            Var::Y => self.y = val,
            Var::MY => self.my = val,
            Var::Z => self.z = val,
            Var::MZ => self.mz = val,
            Var::U => self.u = val,
        }
    }
}

/// Which coefficient function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coef {
    /// b
    Drift,
    /// σ
    Diffusion,
    /// γ, integrated against N
    Jump,
    /// c, integrated against Ñ
    Compensated,
    /// g, the backward driver
    Driver,
    /// y_T = h(x_T, E[x_T])
    Terminal,
    /// l, integrated against λ dt
    RunningCost,
    /// f, integrated against N
    JumpCost,
    /// φ(x_T, E[x_T])
    TerminalCost,
    /// ϕ(y_0)
    InitialCost,
    /// ψ(τ, η)
    ImpulseCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    M,
    Y,
    MY,
    Z,
    MZ,
    U,
}

/// Closed interval with infinite ends allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(default = "neg_inf", serialize_with = "bound::write", deserialize_with = "bound::read_lo")]
    pub lo: f64,
    #[serde(default = "pos_inf", serialize_with = "bound::write", deserialize_with = "bound::read_hi")]
    pub hi: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

/// Infinite ends are written as null (JSON has no infinity); absent or null reads back as infinite.
mod bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn write<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn read_lo<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }

    pub fn read_hi<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Interval {
    pub const REAL: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Endpoints plus a 9-point interior lattice. Empty when either end is infinite.
    pub fn lattice(&self) -> Vec<f64> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Vec::new();
        }
        (0..=10).map(|k| self.lo + (self.hi - self.lo) * k as f64 / 10.0).collect()
    }
}

impl Default for Interval {
    fn default() -> Self {
        Self::REAL
    }
}

/// Relative step for central differences.
pub const FD_STEP: f64 = 1e-6;

/// A controlled mean-field forward-backward system with jumps and impulses.
pub trait Problem: Send + Sync {
    fn horizon(&self) -> f64;
    fn x0(&self) -> f64;
    fn eval(&self, c: Coef, p: &Point, e: Mark) -> f64;

    /// ∂c/∂v at `p`. Central difference unless overridden.
    fn partial(&self, c: Coef, v: Var, p: &Point, e: Mark) -> f64 {
        central_difference(|q| self.eval(c, q, e), v, p)
    }

    /// G: impulse loading on the forward state.
    fn state_loading(&self, t: f64) -> f64;
    /// H: impulse loading on the backward state.
    fn backward_loading(&self, t: f64) -> f64;

    /// Whether any coefficient reads the mean terms. `false` skips Picard iteration.
    fn mean_field(&self) -> bool {
        true
    }

    fn control_set(&self) -> Interval {
        Interval::REAL
    }

    fn impulse_set(&self) -> Interval {
        Interval::REAL
    }
}

pub fn central_difference(f: impl Fn(&Point) -> f64, v: Var, p: &Point) -> f64 {
    let x = p.get(v);
    let h = FD_STEP * x.abs().max(1.0);
    let mut a = *p;
    let mut b = *p;
    a.set(v, x + h);
    b.set(v, x - h);
    (f(&a) - f(&b)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_is_second_order() {
        let p = Point::state(0.0, 0.7, 0.0, 0.0);
        let d = central_difference(|q| q.x.powi(3), Var::X, &p);
        assert!((d - 3.0 * 0.49).abs() < 1e-8);
    }

    #[test]
    fn lattice_covers_endpoints() {
        let l = Interval::new(-1.0, 1.0).lattice();
        assert_eq!(l.len(), 11);
        assert_eq!(l[0], -1.0);
        assert_eq!(l[10], 1.0);
        assert!(Interval::REAL.lattice().is_empty());
    }
}
