use std::fmt;
use std::sync::Arc;

use serde::de::{self, Deserializer};
use serde::ser::{self, Serializer};
use serde::{Deserialize, Serialize};

/// Deterministic coefficient curve on `[0, T]`.
#[derive(Clone)]
pub enum Curve {
    Const(f64),
    /// Piecewise-linear through sorted `(t, value)` knots, flat outside the knot range.
    Table(Vec<(f64, f64)>),
    /// Built-in closed form. Not serializable.
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Curve {
    pub fn zero() -> Self {
        Curve::Const(0.0)
    }

    pub fn func(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Curve::Func(Arc::new(f))
    }

    /// Table curve; knots are sorted by time.
    pub fn table(mut knots: Vec<(f64, f64)>) -> Self {
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        Curve::Table(knots)
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Const(c) => *c,
            Curve::Table(k) => interp_table(k, t),
            Curve::Func(f) => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Curve::Const(c) => *c == 0.0,
            Curve::Table(k) => k.iter().all(|p| p.1 == 0.0),
            Curve::Func(_) => false,
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Curve::Const(c) => Some(*c),
            _ => None,
        }
    }
}

impl Default for Curve {
    fn default() -> Self {
        Curve::zero()
    }
}

impl From<f64> for Curve {
    fn from(c: f64) -> Self {
        Curve::Const(c)
    }
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Curve::Const(c) => write!(f, "Const({c})"),
            Curve::Table(k) => f.debug_tuple("Table").field(k).finish(),
            Curve::Func(_) => f.write_str("Func(..)"),
        }
    }
}

fn interp_table(k: &[(f64, f64)], t: f64) -> f64 {
    match k.len() {
        0 => 0.0,
        1 => k[0].1,
        n => {
            if t <= k[0].0 {
                return k[0].1;
            }
            if t >= k[n - 1].0 {
                return k[n - 1].1;
            }
            let i = k.partition_point(|p| p.0 <= t);
            let (t0, v0) = k[i - 1];
            let (t1, v1) = k[i];
            if t1 == t0 {
                v1
            } else {
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    table: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CurveRepr {
    Const(f64),
    Table(TableRepr),
}

impl Serialize for Curve {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Curve::Const(c) => s.serialize_f64(*c),
            Curve::Table(k) => TableRepr { table: k.clone() }.serialize(s),
            Curve::Func(_) => Err(ser::Error::custom("closed-form curves cannot be serialized")),
        }
    }
}

impl<'de> Deserialize<'de> for Curve {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match CurveRepr::deserialize(d).map_err(|_| de::Error::custom("expected a number or {table = [[t, v], ...]}"))? {
            CurveRepr::Const(c) => Ok(Curve::Const(c)),
            CurveRepr::Table(t) => Ok(Curve::table(t.table)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolates_and_clamps() {
        let c = Curve::table(vec![(1.0, 3.0), (0.0, 1.0)]);
        assert_eq!(c.eval(0.5), 2.0);
        assert_eq!(c.eval(-1.0), 1.0);
        assert_eq!(c.eval(2.0), 3.0);
    }

    #[test]
    fn serde_shapes() {
        let c: Curve = serde_json::from_str("2.5").unwrap();
        assert_eq!(c.as_const(), Some(2.5));
        let t: Curve = serde_json::from_str(r#"{"table":[[0,1],[1,2]]}"#).unwrap();
        assert_eq!(t.eval(0.25), 1.25);
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"{"table":[[0.0,1.0],[1.0,2.0]]}"#);
        assert!(serde_json::to_string(&Curve::func(|t| t)).is_err());
    }
}
