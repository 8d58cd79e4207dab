use serde::Serialize;

use crate::randkit::NODE_TOL;

/// Deterministic curve `t ↦ E[x_t]` on template nodes.
///
/// Each node keeps both the value and the left limit so impulse epochs are
/// represented exactly; between nodes the curve is linear from the value at the
/// left node to the left limit at the right node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanCurve {
    times: Vec<f64>,
    value: Vec<f64>,
    left: Vec<f64>,
}

impl MeanCurve {
    pub fn constant(times: &[f64], v: f64) -> Self {
        Self { times: times.to_vec(), value: vec![v; times.len()], left: vec![v; times.len()] }
    }

    /// Curve from node values and left limits. Panics if lengths differ.
    pub fn new(times: Vec<f64>, value: Vec<f64>, left: Vec<f64>) -> Self {
        assert!(times.len() == value.len() && times.len() == left.len() && !times.is_empty());
        Self { times, value, left }
    }

    /// Continuous curve sampled from a function.
    pub fn from_fn(times: &[f64], f: impl Fn(f64) -> f64) -> Self {
        let value: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        Self { times: times.to_vec(), left: value.clone(), value }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn left_values(&self) -> &[f64] {
        &self.left
    }

    pub fn terminal(&self) -> f64 {
        *self.value.last().unwrap()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.cursor().at(t).0
    }

    pub fn left_at(&self, t: f64) -> f64 {
        self.cursor().at(t).1
    }

    /// Largest difference in values or left limits. Curves must share nodes.
    pub fn sup_distance(&self, other: &MeanCurve) -> f64 {
        self.value.iter().zip(&other.value).chain(self.left.iter().zip(&other.left)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub(crate) fn cursor(&self) -> MeanCursor<'_> {
        MeanCursor { curve: self, k: 0, tol: NODE_TOL * self.times.last().unwrap().abs().max(1.0) }
    }
}

/// Evaluates a curve at non-decreasing times in amortized constant time.
pub(crate) struct MeanCursor<'a> {
    curve: &'a MeanCurve,
    k: usize,
    tol: f64,
}

impl MeanCursor<'_> {
    /// `(value, left limit)` at `t`.
    pub fn at(&mut self, t: f64) -> (f64, f64) {
        let c = self.curve;
        let n = c.times.len();
        if t < c.times[self.k] - self.tol {
            self.k = c.times.partition_point(|&s| s <= t + self.tol).saturating_sub(1);
        }
        while self.k + 1 < n && c.times[self.k + 1] <= t + self.tol {
            self.k += 1;
        }
        let k = self.k;
        if (t - c.times[k]).abs() <= self.tol || k + 1 == n {
            return (c.value[k], c.left[k]);
        }
        let w = (t - c.times[k]) / (c.times[k + 1] - c.times[k]);
        let v = c.value[k] + w * (c.left[k + 1] - c.value[k]);
        (v, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_toward_left_limits() {
        let c = MeanCurve::new(vec![0.0, 0.5, 1.0], vec![0.0, 2.0, 2.0], vec![0.0, 1.0, 2.0]);
        assert_eq!(c.value_at(0.25), 0.5);
        assert_eq!(c.value_at(0.5), 2.0);
        assert_eq!(c.left_at(0.5), 1.0);
        assert_eq!(c.value_at(0.75), 2.0);
        let mut cur = c.cursor();
        assert_eq!(cur.at(0.25), (0.5, 0.5));
        assert_eq!(cur.at(1.0), (2.0, 2.0));
        assert_eq!(cur.at(0.0), (0.0, 0.0));
    }
}
