//! Sampling and integration primitives: finite mark spaces, Poisson random
//! measure realizations, Brownian increments and compensated integrals.
//!
//! Every random draw goes through [`path_rng`], a ChaCha8 stream keyed by
//! `(master_seed, path_index, stream)`. Ensembles built from it do not depend
//! on how paths are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RandError {
    #[error("mark space has no atoms")]
    EmptyMarkSpace,
    #[error("mark weight {0} at atom {1} is not strictly positive and finite")]
    BadWeight(f64, usize),
    #[error("mark value at atom {0} is not finite")]
    BadValue(usize),
    #[error("duplicate mark id {0:?}")]
    DuplicateId(String),
    #[error("horizon {0} must be positive and finite")]
    BadHorizon(f64),
    #[error("step {0} must be positive and finite")]
    BadStep(f64),
    #[error("node {0} lies outside [0, {1}]")]
    NodeOutOfRange(f64, f64),
}

pub type Result<T> = std::result::Result<T, RandError>;

/// Stream ids used with [`path_rng`].
pub const STREAM_JUMPS: u64 = 0;
pub const STREAM_BROWNIAN: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one path: `mix(master_seed, path_index)`.
pub fn path_seed(master: u64, path: u64) -> u64 {
    splitmix64(splitmix64(master) ^ path.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Deterministic generator for `(master, path, stream)`.
pub fn path_rng(master: u64, path: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(path_seed(master, path));
    rng.set_stream(stream);
    rng
}

/// One atom of the mark measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub value: f64,
    pub weight: f64,
}

/// A mark as seen by coefficient functions: its position in the atom list and its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mark {
    pub index: usize,
    pub value: f64,
}

#[derive(Deserialize)]
struct MarkSpaceRepr {
    atoms: Vec<Atom>,
}

/// Finite discrete measure λ on the mark set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarkSpaceRepr")]
pub struct MarkSpace {
    atoms: Vec<Atom>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl TryFrom<MarkSpaceRepr> for MarkSpace {
    type Error = RandError;
    fn try_from(r: MarkSpaceRepr) -> Result<Self> {
        MarkSpace::new(r.atoms)
    }
}

impl MarkSpace {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(RandError::EmptyMarkSpace);
        }
        let mut seen = std::collections::HashSet::new();
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for (i, a) in atoms.iter().enumerate() {
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(RandError::BadWeight(a.weight, i));
            }
            if !a.value.is_finite() {
                return Err(RandError::BadValue(i));
            }
            if let Some(id) = &a.id {
                if !seen.insert(id.clone()) {
                    return Err(RandError::DuplicateId(id.clone()));
                }
            }
            acc += a.weight;
            cumulative.push(acc);
        }
        Ok(Self { atoms, cumulative })
    }

    /// Single atom with the given value and weight.
    pub fn single(value: f64, weight: f64) -> Result<Self> {
        Self::new(vec![Atom { id: None, value, weight }])
    }

    /// Atoms from `(value, weight)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(value, weight)| Atom { id: None, value, weight }).collect())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// λ(E).
    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().expect("validated non-empty")
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.atoms[i].weight
    }

    pub fn mark(&self, i: usize) -> Mark {
        Mark { index: i, value: self.atoms[i].value }
    }

    /// Atom index for a uniform draw `u` in [0, 1).
    pub fn index_for(&self, u: f64) -> usize {
        let target = u * self.total_mass();
        self.cumulative.partition_point(|&c| c <= target).min(self.atoms.len() - 1)
    }

    /// `Σ_e f(e)·w_e`.
    pub fn integrate(&self, mut f: impl FnMut(Mark) -> f64) -> f64 {
        (0..self.len()).map(|i| f(self.mark(i)) * self.atoms[i].weight).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: usize,
}

/// One realization of the Poisson random measure on `(0, T] × E`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpStream {
    pub horizon: f64,
    pub events: Vec<JumpEvent>,
}

impl JumpStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }
}

/// Poisson(T·λ(E)) events, uniform times, marks drawn with probability `w_j / λ(E)`.
pub fn sample_jump_stream<R: Rng + ?Sized>(ms: &MarkSpace, horizon: f64, rng: &mut R) -> Result<JumpStream> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(RandError::BadHorizon(horizon));
    }
    let intensity = horizon * ms.total_mass();
    let count = Poisson::new(intensity).map(|p| p.sample(rng) as usize).unwrap_or(0);
    let mut events: Vec<JumpEvent> = (0..count)
        .map(|_| {
            // (0, T]: 1 - U is in (0, 1].
            let time = horizon * (1.0 - rng.gen::<f64>());
            let mark = ms.index_for(rng.gen::<f64>());
            JumpEvent { time, mark }
        })
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    // Ties have probability zero; drop any produced by rounding so times stay strictly increasing.
    events.dedup_by(|b, a| b.time <= a.time);
    Ok(JumpStream { horizon, events })
}

/// Sorted simulation nodes: a uniform base grid merged with extra event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub dt: f64,
    nodes: Vec<f64>,
}

/// Two times closer than this (relative to the horizon) are the same node.
pub const NODE_TOL: f64 = 1e-12;

impl TimeGrid {
    /// Uniform grid with `ceil(T/dt)` intervals.
    pub fn uniform(horizon: f64, dt: f64) -> Result<Self> {
        Self::with_events(horizon, dt, std::iter::empty())
    }

    pub fn with_events(horizon: f64, dt: f64, events: impl IntoIterator<Item = f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(RandError::BadHorizon(horizon));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(RandError::BadStep(dt));
        }
        let base = uniform_nodes(horizon, dt);
        let mut extra: Vec<f64> = Vec::new();
        for t in events {
            if !(t >= 0.0 && t <= horizon * (1.0 + NODE_TOL)) {
                return Err(RandError::NodeOutOfRange(t, horizon));
            }
            extra.push(t.min(horizon));
        }
        extra.sort_by(f64::total_cmp);
        Ok(Self { horizon, dt, nodes: merge_nodes(&base, &extra, horizon) })
    }

    /// Adds event times to an existing grid.
    pub fn refined(&self, events: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut extra: Vec<f64> = events.into_iter().collect();
        for &t in &extra {
            if !(t >= 0.0 && t <= self.horizon * (1.0 + NODE_TOL)) {
                return Err(RandError::NodeOutOfRange(t, self.horizon));
            }
        }
        extra.sort_by(f64::total_cmp);
        Ok(Self { horizon: self.horizon, dt: self.dt, nodes: merge_nodes(&self.nodes, &extra, self.horizon) })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Index of the node equal to `t` (within tolerance).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        node_index(&self.nodes, t, self.horizon)
    }
}

pub(crate) fn uniform_nodes(horizon: f64, dt: f64) -> Vec<f64> {
    let n = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut v: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    v[n] = horizon;
    v
}

/// Merges sorted `extra` into sorted `base`; times within tolerance of an existing node snap to it.
pub(crate) fn merge_nodes(base: &[f64], extra: &[f64], horizon: f64) -> Vec<f64> {
    let tol = NODE_TOL * horizon.max(1.0);
    let mut out = Vec::with_capacity(base.len() + extra.len());
    let (mut i, mut j) = (0, 0);
    while i < base.len() || j < extra.len() {
        let next = if j >= extra.len() || (i < base.len() && base[i] <= extra[j]) {
            i += 1;
            base[i - 1]
        } else {
            j += 1;
            extra[j - 1]
        };
        match out.last() {
            Some(&last) if next - last <= tol => {}
            _ => out.push(next),
        }
    }
    out
}

pub(crate) fn node_index(nodes: &[f64], t: f64, horizon: f64) -> Option<usize> {
    let tol = NODE_TOL * horizon.max(1.0);
    let k = nodes.partition_point(|&n| n < t - tol);
    (k < nodes.len() && (nodes[k] - t).abs() <= tol).then_some(k)
}

/// Independent N(0, h_k) increments, one per grid interval.
pub fn brownian_increments<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.intervals());
    fill_brownian(grid.nodes(), rng, &mut out);
    out
}

pub(crate) fn fill_brownian<R: Rng + ?Sized>(nodes: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    out.extend(nodes.windows(2).map(|w| {
        let z: f64 = StandardNormal.sample(rng);
        z * (w[1] - w[0]).sqrt()
    }));
}

/// `∫∫ H dÑ = Σ_n H(T_n, U_n, jump) − ∫ Σ_e H(t, e, no-jump) w_e dt`.
///
/// The `is_jump = false` branch is the predictable projection of `H`, integrated by
/// left-point quadrature on `grid`.
pub fn integrate_compensated(h: impl Fn(f64, Mark, bool) -> f64, js: &JumpStream, ms: &MarkSpace, grid: &TimeGrid) -> f64 {
    let jumps: f64 = js.events.iter().map(|ev| h(ev.time, ms.mark(ev.mark), true)).sum();
    let compensator: f64 = grid.nodes().windows(2).map(|w| ms.integrate(|e| h(w[0], e, false)) * (w[1] - w[0])).sum();
    jumps - compensator
}

/// Quadratic variation `[H·Ñ, H·Ñ]_T = Σ_n H(T_n, U_n)²`.
pub fn compensated_bracket(h: impl Fn(f64, Mark, bool) -> f64, js: &JumpStream, ms: &MarkSpace) -> f64 {
    js.events.iter().map(|ev| h(ev.time, ms.mark(ev.mark), true).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn mark_space_rejects_bad_input() {
        assert_eq!(MarkSpace::new(vec![]), Err(RandError::EmptyMarkSpace));
        assert!(matches!(MarkSpace::from_pairs(&[(1.0, 0.0)]), Err(RandError::BadWeight(..))));
        let dup = vec![Atom { id: Some("a".into()), value: 0.0, weight: 1.0 }, Atom { id: Some("a".into()), value: 1.0, weight: 1.0 }];
        assert!(matches!(MarkSpace::new(dup), Err(RandError::DuplicateId(_))));
    }

    #[test]
    fn mark_space_json_round_trip() {
        let ms = MarkSpace::from_pairs(&[(0.5, 1.0), (2.0, 3.0)]).unwrap();
        let s = serde_json::to_string(&ms).unwrap();
        assert_eq!(s, r#"{"atoms":[{"value":0.5,"weight":1.0},{"value":2.0,"weight":3.0}]}"#);
        let back: MarkSpace = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ms);
        assert_eq!(back.total_mass(), 4.0);
        assert!(serde_json::from_str::<MarkSpace>(r#"{"atoms":[]}"#).is_err());
    }

    #[test]
    fn mean_count_unit_intensity() {
        let ms = MarkSpace::single(1.0, 1.0).unwrap();
        let counts: Vec<f64> =
            (0..20_000).map(|i| sample_jump_stream(&ms, 1.0, &mut path_rng(7, i, STREAM_JUMPS)).unwrap().len() as f64).collect();
        let (m, s) = stats(&counts);
        assert!((m - 1.0).abs() < 4.0 * s / (counts.len() as f64).sqrt());
    }

    #[test]
    fn counts_follow_poisson_law() {
        // chi-square goodness of fit against Poisson(6) over 1e5 streams
        use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson as P};
        let ms = MarkSpace::single(0.0, 2.0).unwrap();
        let m = 100_000u64;
        let mut hist = [0u64; 16];
        let mut total = 0.0;
        for i in 0..m {
            let n = sample_jump_stream(&ms, 3.0, &mut path_rng(11, i, STREAM_JUMPS)).unwrap().len();
            total += n as f64;
            hist[n.min(15)] += 1;
        }
        let mean = total / m as f64;
        assert!((mean - 6.0).abs() < 4.0 * (6.0f64 / m as f64).sqrt());
        let law = P::new(6.0).unwrap();
        let mut chi2 = 0.0;
        let mut tail = 1.0;
        for (k, &obs) in hist.iter().enumerate() {
            let p = if k == 15 { tail } else { law.pmf(k as u64) };
            tail -= p;
            let exp = p * m as f64;
            chi2 += (obs as f64 - exp).powi(2) / exp;
        }
        let crit = ChiSquared::new(15.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }

    #[test]
    fn mark_frequencies_match_weights() {
        let ms = MarkSpace::from_pairs(&[(0.0, 1.0), (1.0, 3.0)]).unwrap();
        let (mut n0, mut n) = (0.0, 0.0);
        for i in 0..20_000 {
            for ev in sample_jump_stream(&ms, 1.0, &mut path_rng(3, i, STREAM_JUMPS)).unwrap().events {
                n += 1.0;
                if ev.mark == 0 {
                    n0 += 1.0;
                }
            }
        }
        let p = n0 / n;
        let se = (0.25f64 * 0.75 / n).sqrt();
        assert!((p - 0.25).abs() < 4.0 * se, "p0 = {p}");
    }

    #[test]
    fn brownian_single_interval_variance() {
        let grid = TimeGrid::uniform(1.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..50_000).map(|i| brownian_increments(&grid, &mut path_rng(5, i, STREAM_BROWNIAN))[0]).collect();
        let (_, s) = stats(&xs);
        // variance of the sample variance for a normal law is 2σ⁴/(n−1)
        assert!((s * s - 1.0).abs() < 4.0 * (2.0f64 / 50_000.0).sqrt());
    }

    #[test]
    fn brownian_endpoint_is_standard_normal() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let grid = TimeGrid::uniform(1.0, 0.01).unwrap();
        let mut xs: Vec<f64> = (0..5_000).map(|i| brownian_increments(&grid, &mut path_rng(9, i, STREAM_BROWNIAN)).iter().sum()).collect();
        xs.sort_by(f64::total_cmp);
        let law = Normal::new(0.0, 1.0).unwrap();
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = law.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the Kolmogorov-Smirnov statistic
        assert!(d < 1.63 / n.sqrt(), "KS distance {d}");
    }

    #[test]
    fn same_seed_same_draws() {
        let ms = MarkSpace::from_pairs(&[(0.0, 1.0), (1.0, 2.0)]).unwrap();
        let a = sample_jump_stream(&ms, 2.0, &mut path_rng(1, 4, STREAM_JUMPS)).unwrap();
        let b = sample_jump_stream(&ms, 2.0, &mut path_rng(1, 4, STREAM_JUMPS)).unwrap();
        assert_eq!(a, b);
        let g = TimeGrid::uniform(1.0, 0.1).unwrap();
        assert_eq!(
            brownian_increments(&g, &mut path_rng(1, 4, STREAM_BROWNIAN)),
            brownian_increments(&g, &mut path_rng(1, 4, STREAM_BROWNIAN))
        );
        assert_ne!(path_seed(1, 4), path_seed(1, 5));
    }

    #[test]
    fn grid_contains_events() {
        let g = TimeGrid::with_events(1.0, 0.25, [0.3, 0.5, 0.9]).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.3, 0.5, 0.75, 0.9, 1.0]);
        assert_eq!(g.index_of(0.9), Some(5));
        assert_eq!(g.index_of(0.8), None);
        assert!(TimeGrid::with_events(1.0, 0.25, [1.5]).is_err());
        assert!(TimeGrid::uniform(1.0, 0.0).is_err());
    }

    #[test]
    fn compensated_integral_of_zero_and_one() {
        let ms = MarkSpace::single(0.0, 1.0).unwrap();
        let js = sample_jump_stream(&ms, 1.0, &mut path_rng(2, 0, STREAM_JUMPS)).unwrap();
        let grid = TimeGrid::with_events(1.0, 0.01, js.times()).unwrap();
        assert_eq!(integrate_compensated(|_, _, _| 0.0, &js, &ms, &grid), 0.0);
        let v = integrate_compensated(|_, _, _| 1.0, &js, &ms, &grid);
        assert!((v - (js.len() as f64 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn compensated_integral_has_zero_mean() {
        let ms = MarkSpace::single(0.0, 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 0.05).unwrap();
        let xs: Vec<f64> = (0..100_000)
            .map(|i| {
                let js = sample_jump_stream(&ms, 1.0, &mut path_rng(13, i, STREAM_JUMPS)).unwrap();
                integrate_compensated(|_, _, _| 1.0, &js, &ms, &grid)
            })
            .collect();
        let (m, s) = stats(&xs);
        assert!(m.abs() < 4.0 * s / (xs.len() as f64).sqrt());
    }

    proptest! {
        #[test]
        fn bracket_equals_sum_of_squared_jumps(seed in 0u64..1000, c in -3.0f64..3.0) {
            let ms = MarkSpace::from_pairs(&[(1.0, 0.5), (-2.0, 1.5)]).unwrap();
            let js = sample_jump_stream(&ms, 2.0, &mut path_rng(seed, 0, STREAM_JUMPS)).unwrap();
            let h = |t: f64, e: Mark, _j: bool| c * t + e.value;
            let direct: f64 = js.events.iter().map(|ev| (c * ev.time + ms.atoms()[ev.mark].value).powi(2)).sum();
            prop_assert!((compensated_bracket(h, &js, &ms) - direct).abs() < 1e-12);
        }

        #[test]
        fn stream_times_strictly_increasing(seed in 0u64..5000, mass in 0.1f64..20.0, horizon in 0.1f64..5.0) {
            let ms = MarkSpace::single(0.0, mass).unwrap();
            let js = sample_jump_stream(&ms, horizon, &mut path_rng(seed, 1, STREAM_JUMPS)).unwrap();
            prop_assert!(js.events.windows(2).all(|w| w[0].time < w[1].time));
            prop_assert!(js.events.iter().all(|e| e.time > 0.0 && e.time <= horizon));
        }

        #[test]
        fn grid_sorted_unique_and_bounded(dt in 0.001f64..0.5, ev in proptest::collection::vec(0.0f64..=1.0, 0..20)) {
            let g = TimeGrid::with_events(1.0, dt, ev.clone()).unwrap();
            let n = g.nodes();
            prop_assert_eq!(n[0], 0.0);
            prop_assert_eq!(*n.last().unwrap(), 1.0);
            prop_assert!(n.windows(2).all(|w| w[0] < w[1]));
            for t in ev {
                prop_assert!(g.index_of(t).is_some());
            }
        }
    }
}
