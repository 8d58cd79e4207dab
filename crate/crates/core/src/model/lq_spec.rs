use serde::{Deserialize, Serialize};

use super::curve::Curve;
use super::problem::{Coef, Interval, Point, Problem, Var};
use super::{ModelError, ValidationReport};
use crate::randkit::Mark;

/// Linear-quadratic system with deterministic coefficient curves.
///
/// ```text
/// dx = (a1 x + b1 E[x] + c1 u) λ dt + (a2 x + b2 E[x] + c2 u) λ dB
///    + ∫ (a3 x⁻ + b3 E[x⁻] + c3 u) N(dt,de) + ∫ (a4 x⁻ + b4 E[x⁻] + c4 u) Ñ(dt,de) + G dη
/// dy = -(a5 x + b5 E[x] + f1 y + f1_bar E[y] + k z - k E[z] + c5 u) λ dt + z dB + ∫ k Ñ + H dη
/// y_T = terminal_slope · x_T
///
/// cost = E[∫∫ (a6 x + b6 E[x] + f2 y + f2_bar E[y] + u²/2) λ dt
///        + ∫∫ (a7 x⁻ + b7 E[x⁻] + f3 y⁻ + f3_bar E[y⁻] + u²/2) N(dt,de)
///        + mean_weight/2 · E[x_T]² + Σ η_i²/2] + initial_weight/2 · y_0²
/// ```
/// (λ is the total mark mass; every λ-integral of a mark-free integrand is a factor λ.)
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LQSpec {
    pub horizon: f64,
    pub x0: f64,
    pub a1: Curve,
    pub a2: Curve,
    pub a3: Curve,
    pub a4: Curve,
    pub a5: Curve,
    pub a6: Curve,
    pub a7: Curve,
    pub b1: Curve,
    pub b2: Curve,
    pub b3: Curve,
    pub b4: Curve,
    pub b5: Curve,
    pub b6: Curve,
    pub b7: Curve,
    pub c1: Curve,
    pub c2: Curve,
    pub c3: Curve,
    pub c4: Curve,
    pub c5: Curve,
    pub f1: Curve,
    pub f2: Curve,
    pub f3: Curve,
    pub f1_bar: Curve,
    pub f2_bar: Curve,
    pub f3_bar: Curve,
    pub k: Curve,
    /// Slope of the terminal value `y_T = slope · x_T`.
    pub terminal_slope: f64,
    /// Weight of `E[x_T]²/2` in the cost.
    pub mean_weight: f64,
    /// Weight of `y_0²/2` in the cost.
    pub initial_weight: f64,
    /// G: impulse loading on x.
    pub state_loading: Curve,
    /// H: impulse loading on y.
    pub backward_loading: Curve,
}

impl Default for LQSpec {
    fn default() -> Self {
        let z = Curve::zero;
        Self {
            horizon: 1.0,
            x0: 1.0,
            a1: z(),
            a2: z(),
            a3: z(),
            a4: z(),
            a5: z(),
            a6: z(),
            a7: z(),
            b1: z(),
            b2: z(),
            b3: z(),
            b4: z(),
            b5: z(),
            b6: z(),
            b7: z(),
            c1: z(),
            c2: z(),
            c3: z(),
            c4: z(),
            c5: z(),
            f1: z(),
            f2: z(),
            f3: z(),
            f1_bar: z(),
            f2_bar: z(),
            f3_bar: z(),
            k: z(),
            terminal_slope: 0.0,
            mean_weight: 1.0,
            initial_weight: 1.0,
            state_loading: z(),
            backward_loading: z(),
        }
    }
}

impl LQSpec {
    /// Every coefficient curve set to the constant `c`.
    pub fn uniform(c: f64) -> Self {
        let mut s = Self::default();
        for (_, curve) in s.curves_mut() {
            *curve = Curve::Const(c);
        }
        s.terminal_slope = c;
        s
    }

    pub fn curves(&self) -> [(&'static str, &Curve); 28] {
        [
            ("a1", &self.a1),
            ("a2", &self.a2),
            ("a3", &self.a3),
            ("a4", &self.a4),
            ("a5", &self.a5),
            ("a6", &self.a6),
            ("a7", &self.a7),
            ("b1", &self.b1),
            ("b2", &self.b2),
            ("b3", &self.b3),
            ("b4", &self.b4),
            ("b5", &self.b5),
            ("b6", &self.b6),
            ("b7", &self.b7),
            ("c1", &self.c1),
            ("c2", &self.c2),
            ("c3", &self.c3),
            ("c4", &self.c4),
            ("c5", &self.c5),
            ("f1", &self.f1),
            ("f2", &self.f2),
            ("f3", &self.f3),
            ("f1_bar", &self.f1_bar),
            ("f2_bar", &self.f2_bar),
            ("f3_bar", &self.f3_bar),
            ("k", &self.k),
            ("state_loading", &self.state_loading),
            ("backward_loading", &self.backward_loading),
        ]
    }

    fn curves_mut(&mut self) -> Vec<(&'static str, &mut Curve)> {
        vec![
            ("a1", &mut self.a1),
            ("a2", &mut self.a2),
            ("a3", &mut self.a3),
            ("a4", &mut self.a4),
            ("a5", &mut self.a5),
            ("a6", &mut self.a6),
            ("a7", &mut self.a7),
            ("b1", &mut self.b1),
            ("b2", &mut self.b2),
            ("b3", &mut self.b3),
            ("b4", &mut self.b4),
            ("b5", &mut self.b5),
            ("b6", &mut self.b6),
            ("b7", &mut self.b7),
            ("c1", &mut self.c1),
            ("c2", &mut self.c2),
            ("c3", &mut self.c3),
            ("c4", &mut self.c4),
            ("c5", &mut self.c5),
            ("f1", &mut self.f1),
            ("f2", &mut self.f2),
            ("f3", &mut self.f3),
            ("f1_bar", &mut self.f1_bar),
            ("f2_bar", &mut self.f2_bar),
            ("f3_bar", &mut self.f3_bar),
            ("k", &mut self.k),
        ]
    }

    /// Checks finiteness of every curve on a probe grid, the weight signs and the horizon.
    pub fn validate(self) -> Result<Self, ValidationReport> {
        let mut errors = Vec::new();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errors.push(ModelError::BadHorizon(self.horizon));
        }
        for (name, v) in [
            ("x0", self.x0),
            ("terminal_slope", self.terminal_slope),
            ("mean_weight", self.mean_weight),
            ("initial_weight", self.initial_weight),
        ] {
            if !v.is_finite() {
                errors.push(ModelError::NonFiniteCoefficient { name: name.into(), t: f64::NAN });
            }
        }
        if self.mean_weight < 0.0 {
            errors.push(ModelError::NegativeWeight { name: "mean_weight".into(), value: self.mean_weight });
        }
        if self.initial_weight < 0.0 {
            errors.push(ModelError::NegativeWeight { name: "initial_weight".into(), value: self.initial_weight });
        }
        if self.horizon > 0.0 && self.horizon.is_finite() {
            for (name, c) in self.curves().iter() {
                if let Some(t) = probe_times(self.horizon).find(|&t| !c.eval(t).is_finite()) {
                    errors.push(ModelError::NonFiniteCoefficient { name: (*name).into(), t });
                }
            }
        }
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(ValidationReport { errors })
        }
    }

    /// π = a1 + a3 + b1 + b3.
    pub fn pi(&self, t: f64) -> f64 {
        self.a1.eval(t) + self.a3.eval(t) + self.b1.eval(t) + self.b3.eval(t)
    }

    /// κ = c1² + c3².
    pub fn kappa(&self, t: f64) -> f64 {
        self.c1.eval(t).powi(2) + self.c3.eval(t).powi(2)
    }

    /// Whether any coefficient reads the means.
    pub fn has_mean_terms(&self) -> bool {
        ![&self.b1, &self.b2, &self.b3, &self.b4].iter().all(|c| c.is_zero())
    }
}

/// Probe grid used by validation: 257 equally spaced points.
pub(crate) fn probe_times(horizon: f64) -> impl Iterator<Item = f64> {
    (0..=256).map(move |k| horizon * k as f64 / 256.0)
}

impl Problem for LQSpec {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    fn eval(&self, c: Coef, p: &Point, _e: Mark) -> f64 {
        let t = p.t;
        let lin = |a: &Curve, b: &Curve, cu: &Curve| a.eval(t) * p.x + b.eval(t) * p.m + cu.eval(t) * p.u;
        match c {
            Coef::Drift => lin(&self.a1, &self.b1, &self.c1),
            Coef::Diffusion => lin(&self.a2, &self.b2, &self.c2),
            Coef::Jump => lin(&self.a3, &self.b3, &self.c3),
            Coef::Compensated => lin(&self.a4, &self.b4, &self.c4),
            Coef::Driver => {
                let k = self.k.eval(t);
                lin(&self.a5, &self.b5, &self.c5) + self.f1.eval(t) * p.y + self.f1_bar.eval(t) * p.my + k * (p.z - p.mz)
            }
            Coef::RunningCost => {
                self.a6.eval(t) * p.x + self.b6.eval(t) * p.m + self.f2.eval(t) * p.y + self.f2_bar.eval(t) * p.my + 0.5 * p.u * p.u
            }
            Coef::JumpCost => {
                self.a7.eval(t) * p.x + self.b7.eval(t) * p.m + self.f3.eval(t) * p.y + self.f3_bar.eval(t) * p.my + 0.5 * p.u * p.u
            }
            Coef::Terminal => self.terminal_slope * p.x,
            Coef::TerminalCost => 0.5 * self.mean_weight * p.m * p.m,
            Coef::InitialCost => 0.5 * self.initial_weight * p.y * p.y,
            Coef::ImpulseCost => 0.5 * p.u * p.u,
        }
    }

    fn partial(&self, c: Coef, v: Var, p: &Point, _e: Mark) -> f64 {
        let t = p.t;
        let lin = |a: &Curve, b: &Curve, cu: &Curve| match v {
            Var::X => a.eval(t),
            Var::M => b.eval(t),
            Var::U => cu.eval(t),
            _ => 0.0,
        };
        match c {
            Coef::Drift => lin(&self.a1, &self.b1, &self.c1),
            Coef::Diffusion => lin(&self.a2, &self.b2, &self.c2),
            Coef::Jump => lin(&self.a3, &self.b3, &self.c3),
            Coef::Compensated => lin(&self.a4, &self.b4, &self.c4),
            Coef::Driver => match v {
                Var::Y => self.f1.eval(t),
                Var::MY => self.f1_bar.eval(t),
                Var::Z => self.k.eval(t),
                Var::MZ => -self.k.eval(t),
                _ => lin(&self.a5, &self.b5, &self.c5),
            },
            Coef::RunningCost => match v {
                Var::X => self.a6.eval(t),
                Var::M => self.b6.eval(t),
                Var::Y => self.f2.eval(t),
                Var::MY => self.f2_bar.eval(t),
                Var::U => p.u,
                _ => 0.0,
            },
            Coef::JumpCost => match v {
                Var::X => self.a7.eval(t),
                Var::M => self.b7.eval(t),
                Var::Y => self.f3.eval(t),
                Var::MY => self.f3_bar.eval(t),
                Var::U => p.u,
                _ => 0.0,
            },
            Coef::Terminal => match v {
                Var::X => self.terminal_slope,
                _ => 0.0,
            },
            Coef::TerminalCost => match v {
                Var::M => self.mean_weight * p.m,
                _ => 0.0,
            },
            Coef::InitialCost => match v {
                Var::Y => self.initial_weight * p.y,
                _ => 0.0,
            },
            Coef::ImpulseCost => match v {
                Var::U => p.u,
                _ => 0.0,
            },
        }
    }

    fn state_loading(&self, t: f64) -> f64 {
        self.state_loading.eval(t)
    }

    fn backward_loading(&self, t: f64) -> f64 {
        self.backward_loading.eval(t)
    }

    fn mean_field(&self) -> bool {
        self.has_mean_terms()
    }

    fn control_set(&self) -> Interval {
        Interval::REAL
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problem::central_difference;
    use proptest::prelude::*;

    const E: Mark = Mark { index: 0, value: 1.0 };

    #[test]
    fn zero_spec_is_valid() {
        assert!(LQSpec::default().validate().is_ok());
        assert!(LQSpec::uniform(1.0).validate().is_ok());
    }

    #[test]
    fn non_finite_curve_is_reported() {
        let s = LQSpec { a1: Curve::func(|t| if t > 0.5 { f64::NAN } else { 0.0 }), ..Default::default() };
        let err = s.validate().unwrap_err();
        assert!(matches!(&err.errors[0], ModelError::NonFiniteCoefficient { name, .. } if name == "a1"));
    }

    #[test]
    fn validate_is_idempotent() {
        let once = LQSpec::uniform(0.3).validate().unwrap();
        let json = serde_json::to_string(&once).unwrap();
        let twice = once.validate().unwrap();
        assert_eq!(json, serde_json::to_string(&twice).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let s = LQSpec { a1: Curve::table(vec![(0.0, 1.0), (1.0, 2.0)]), c3: 0.5.into(), ..Default::default() };
        let back: LQSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back.a1.eval(0.5), 1.5);
        assert_eq!(back.c3.eval(0.0), 0.5);
    }

    proptest! {
        #[test]
        fn analytic_partials_match_differences(
            x in -2.0f64..2.0, m in -2.0f64..2.0, y in -2.0f64..2.0, u in -2.0f64..2.0, t in 0.0f64..1.0, c in -1.0f64..1.0,
        ) {
            let mut s = LQSpec::uniform(c);
            s.a2 = Curve::func(|t| 1.0 + t);
            let p = Point { t, x, m, y, my: 0.3 * y, z: 0.1, mz: -0.2, u };
            for coef in [Coef::Drift, Coef::Diffusion, Coef::Jump, Coef::Compensated, Coef::Driver, Coef::RunningCost,
                         Coef::JumpCost, Coef::Terminal, Coef::TerminalCost, Coef::InitialCost, Coef::ImpulseCost] {
                for v in [Var::X, Var::M, Var::Y, Var::MY, Var::Z, Var::MZ, Var::U] {
                    let a = s.partial(coef, v, &p, E);
                    let d = central_difference(|q| s.eval(coef, q, E), v, &p);
                    prop_assert!((a - d).abs() < 1e-6, "{:?} {:?}: {} vs {}", coef, v, a, d);
                }
            }
        }
    }
}
