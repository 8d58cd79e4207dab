use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{Direction, Kernel, PathState, PerturbedKernel, StateKernel};
use super::mean::MeanCurve;
use super::noise::{NoiseSetup, PathNoise};
use super::ForwardError;
use crate::model::{validate_impulses, Coef, ControlLaw, ImpulseSchedule, Point, Problem};
use crate::randkit::MarkSpace;

/// Paths per parallel job. Fixed so reductions are identical for any thread count.
const BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub paths: usize,
    pub dt: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { paths: 1000, dt: 1e-2, picard_tol: 1e-10, picard_max: 50 }
    }
}

impl SimConfig {
    pub fn new(paths: usize, dt: f64) -> Self {
        Self { paths, dt, ..Default::default() }
    }

    fn check(&self) -> Result<(), ForwardError> {
        if self.paths == 0 {
            return Err(ForwardError::InvalidConfig("paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ForwardError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if self.picard_max == 0 {
            return Err(ForwardError::InvalidConfig("picard_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-path scalars recorded during the final pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PathSummary {
    pub x_terminal: f64,
    /// `sup_t |x_t|²` over nodes and left limits.
    pub sup_sq: f64,
    /// `∫ |x_t|² dt`, trapezoid with left limits at interval ends.
    pub int_sq: f64,
    pub jumps: u32,
    pub impulses: u32,
    /// `∫ Σ_e w_e g(t, x, m, 0, 0, 0, 0, u_cont, e) dt`, trapezoid on template nodes.
    pub driver_integral: f64,
    /// `Σ_i H(τ_i) η_i`.
    pub impulse_sum: f64,
}

/// Template-node averages from the final pass.
#[derive(Debug, Clone, Default, Serialize)]
pub(crate) struct NodeStats {
    pub x: Vec<f64>,
    pub x_left: Vec<f64>,
    /// `E[Σ_e w_e g(·, y = ȳ = z = z̄ = 0, u_cont)]`.
    pub driver0: Vec<f64>,
    /// `E[H η]` attributed to the template node at or after each impulse.
    pub impulse: Vec<f64>,
}

/// One replayed path.
pub struct Path<'a> {
    pub(crate) noise: &'a PathNoise,
    pub(crate) state: &'a PathState,
    pub(crate) atoms: usize,
}

impl Path<'_> {
    pub fn len(&self) -> usize {
        self.noise.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.nodes.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.noise.nodes
    }

    pub fn x(&self) -> &[f64] {
        &self.state.x
    }

    pub fn x_left(&self) -> &[f64] {
        &self.state.x_left
    }

    pub fn mean(&self) -> &[f64] {
        &self.state.mean
    }

    pub fn mean_left(&self) -> &[f64] {
        &self.state.mean_left
    }

    pub fn increments(&self) -> &[f64] {
        &self.noise.increments
    }

    /// Mark index of the jump at node `k`.
    pub fn jump(&self, k: usize) -> Option<usize> {
        self.noise.jump[k].map(|a| a as usize)
    }

    /// Epoch index of the impulse at node `k`.
    pub fn impulse(&self, k: usize) -> Option<usize> {
        self.noise.impulse[k].map(|i| i as usize)
    }

    pub fn eta(&self, k: usize) -> f64 {
        self.state.eta[k]
    }

    pub fn u_cont(&self, k: usize, atom: usize) -> f64 {
        self.state.u_cont[k * self.atoms + atom]
    }

    /// Jump-branch control at the current state (what the compensator sees).
    pub fn u_comp(&self, k: usize, atom: usize) -> f64 {
        self.state.u_comp[k * self.atoms + atom]
    }

    /// Jump-branch control at a realized jump; NaN at other nodes.
    pub fn u_jump(&self, k: usize) -> f64 {
        self.state.u_jump[k]
    }

    pub fn jump_count(&self) -> usize {
        self.noise.n_jumps
    }

    /// Path-node index of each template node.
    pub fn template_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.noise.template_pos.iter().map(|&p| p as usize)
    }
}

/// Simulated paths, stored as the recipe to replay them plus final-pass statistics.
#[derive(Clone)]
pub struct PathEnsemble {
    pub(crate) kernel: Arc<Kernel>,
    pub(crate) setup: Arc<NoiseSetup>,
    seed: u64,
    config: SimConfig,
    mean: MeanCurve,
    picard_iterations: usize,
    picard_change: f64,
    summaries: Vec<PathSummary>,
    pub(crate) stats: NodeStats,
}

impl std::fmt::Debug for PathEnsemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PathEnsemble")
            .field("seed", &self.seed)
            .field("config", &self.config)
            .field("picard_iterations", &self.picard_iterations)
            .finish_non_exhaustive()
    }
}

/// Norm estimates `E[sup |x|²]` and `E[∫ |x|² dt]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathNorms {
    pub sup_sq: f64,
    pub int_sq: f64,
}

struct Scratch {
    noise: PathNoise,
    state: PathState,
    aux: PathState,
}

impl Scratch {
    fn new() -> Self {
        Self { noise: PathNoise::default(), state: PathState::default(), aux: PathState::default() }
    }
}

#[derive(Default)]
struct PassAcc {
    x: Vec<f64>,
    x_left: Vec<f64>,
    driver0: Vec<f64>,
    impulse: Vec<f64>,
    summaries: Vec<PathSummary>,
}

impl PassAcc {
    fn new(n: usize) -> Self {
        Self { x: vec![0.0; n], x_left: vec![0.0; n], driver0: vec![0.0; n], impulse: vec![0.0; n], summaries: Vec::new() }
    }

    fn merge(&mut self, o: PassAcc) {
        for (a, b) in [(&mut self.x, o.x), (&mut self.x_left, o.x_left), (&mut self.driver0, o.driver0), (&mut self.impulse, o.impulse)] {
            a.iter_mut().zip(b).for_each(|(s, v)| *s += v);
        }
        self.summaries.extend(o.summaries);
    }
}

impl PathEnsemble {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn paths(&self) -> usize {
        self.config.paths
    }

    pub fn mean(&self) -> &MeanCurve {
        &self.mean
    }

    /// Template nodes: the uniform grid plus deterministic impulse times.
    pub fn template(&self) -> &[f64] {
        &self.setup.template
    }

    pub fn horizon(&self) -> f64 {
        self.setup.horizon
    }

    pub fn marks(&self) -> &MarkSpace {
        &self.setup.marks
    }

    pub fn problem(&self) -> &Arc<dyn Problem> {
        self.kernel.problem()
    }

    pub fn impulses(&self) -> &ImpulseSchedule {
        self.kernel.impulses()
    }

    pub fn picard_iterations(&self) -> usize {
        self.picard_iterations
    }

    /// Sup change of the mean curve in the last Picard pass.
    pub fn picard_change(&self) -> f64 {
        self.picard_change
    }

    pub fn summaries(&self) -> &[PathSummary] {
        &self.summaries
    }

    /// Ensemble average of `x` at template nodes from the final pass.
    pub fn node_average(&self) -> &[f64] {
        &self.stats.x
    }

    /// Whether this ensemble holds states (as opposed to first variations).
    pub fn is_state(&self) -> bool {
        self.kernel.is_state()
    }

    /// Same seed, grid, marks and path count.
    pub fn shares_noise_with(&self, other: &PathEnsemble) -> bool {
        self.seed == other.seed
            && self.config.paths == other.config.paths
            && self.setup.template == other.setup.template
            && self.setup.marks == other.setup.marks
            && self.setup.epochs == other.setup.epochs
    }

    /// Replays path `i` and hands it to `f`.
    pub fn with_path<R>(&self, i: usize, f: impl FnOnce(&Path) -> R) -> Result<R, ForwardError> {
        let mut s = Scratch::new();
        self.replay(i, &mut s)?;
        Ok(f(&Path { noise: &s.noise, state: &s.state, atoms: self.setup.marks.len() }))
    }

    fn replay(&self, i: usize, s: &mut Scratch) -> Result<(), ForwardError> {
        self.setup.fill(self.seed, i, &mut s.noise);
        self.kernel.run(i, &s.noise, &self.mean, &mut s.state, &mut s.aux)
    }

    /// Deterministic parallel reduction over all paths in index order.
    ///
    /// Paths are grouped in fixed blocks; each block is folded sequentially and
    /// blocks are merged in order, so the result does not depend on the thread count.
    pub fn fold_paths<A: Send>(
        &self,
        init: impl Fn() -> A + Sync,
        step: impl Fn(&mut A, usize, &Path) + Sync,
        merge: impl Fn(&mut A, A),
    ) -> Result<A, ForwardError> {
        let m = self.config.paths;
        let atoms = self.setup.marks.len();
        let blocks: Vec<Result<A, ForwardError>> = (0..m.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut acc = init();
                let mut s = Scratch::new();
                for i in b * BLOCK..((b + 1) * BLOCK).min(m) {
                    self.replay(i, &mut s)?;
                    step(&mut acc, i, &Path { noise: &s.noise, state: &s.state, atoms });
                }
                Ok(acc)
            })
            .collect();
        let mut out = init();
        for b in blocks {
            merge(&mut out, b?);
        }
        Ok(out)
    }

    /// Jointly replays path `i` of several ensembles built on the same noise.
    pub fn fold_paths_zip<A: Send>(
        ensembles: &[&PathEnsemble],
        init: impl Fn() -> A + Sync,
        step: impl Fn(&mut A, usize, &[Path]) + Sync,
        merge: impl Fn(&mut A, A),
    ) -> Result<A, ForwardError> {
        let first = ensembles[0];
        if ensembles.iter().any(|e| !first.shares_noise_with(e)) {
            return Err(ForwardError::EnsembleMismatch);
        }
        let m = first.config.paths;
        let atoms = first.setup.marks.len();
        let blocks: Vec<Result<A, ForwardError>> = (0..m.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut acc = init();
                let mut s: Vec<Scratch> = ensembles.iter().map(|_| Scratch::new()).collect();
                for i in b * BLOCK..((b + 1) * BLOCK).min(m) {
                    for (e, sc) in ensembles.iter().zip(s.iter_mut()) {
                        e.replay(i, sc)?;
                    }
                    let paths: Vec<Path> = s.iter().map(|sc| Path { noise: &sc.noise, state: &sc.state, atoms }).collect();
                    step(&mut acc, i, &paths);
                }
                Ok(acc)
            })
            .collect();
        let mut out = init();
        for b in blocks {
            merge(&mut out, b?);
        }
        Ok(out)
    }

    fn run(kernel: Kernel, setup: NoiseSetup, cfg: &SimConfig, seed: u64, frozen: Option<MeanCurve>) -> Result<Self, ForwardError> {
        cfg.check()?;
        let kernel = Arc::new(kernel);
        let setup = Arc::new(setup);
        let mean = frozen.clone().unwrap_or_else(|| MeanCurve::constant(&setup.template, kernel.x0()));
        if mean.times() != setup.template.as_slice() {
            return Err(ForwardError::InvalidConfig("frozen mean curve must live on the template nodes".into()));
        }
        let mut ens = PathEnsemble {
            kernel,
            setup,
            seed,
            config: cfg.clone(),
            mean,
            picard_iterations: 0,
            picard_change: f64::INFINITY,
            summaries: Vec::new(),
            stats: NodeStats::default(),
        };
        let single = frozen.is_some() || !ens.kernel.reads_mean();
        let mut prev = f64::INFINITY;
        let mut grew = 0;
        loop {
            let acc = ens.pass()?;
            ens.picard_iterations += 1;
            let mp = cfg.paths as f64;
            let avg = MeanCurve::new(
                ens.setup.template.clone(),
                acc.x.iter().map(|v| v / mp).collect(),
                acc.x_left.iter().map(|v| v / mp).collect(),
            );
            let change = avg.sup_distance(&ens.mean);
            ens.picard_change = change;
            ens.stats = NodeStats {
                x: avg.values().to_vec(),
                x_left: avg.left_values().to_vec(),
                driver0: acc.driver0.iter().map(|v| v / mp).collect(),
                impulse: acc.impulse.iter().map(|v| v / mp).collect(),
            };
            ens.summaries = acc.summaries;
            if single && frozen.is_none() {
                // Nothing read the mean, so the paths are unchanged under the exact average.
                ens.mean = avg;
                break;
            }
            if single || change < cfg.picard_tol {
                break;
            }
            grew = if change > prev { grew + 1 } else { 0 };
            if grew >= 2 {
                return Err(ForwardError::PicardDiverged { iteration: ens.picard_iterations, change });
            }
            if ens.picard_iterations >= cfg.picard_max {
                log::warn!("Picard iteration stopped at {} passes with change {change:e}", cfg.picard_max);
                break;
            }
            prev = change;
            ens.mean = avg;
        }
        Ok(ens)
    }

    /// One pass over all paths with the current frozen mean.
    fn pass(&self) -> Result<PassAcc, ForwardError> {
        let nt = self.setup.template.len();
        let pb = self.kernel.problem().clone();
        let marks = &self.setup.marks;
        let is_state = self.kernel.is_state();
        self.fold_paths(
            || PassAcc::new(nt),
            |acc, _, p| {
                let tpos: Vec<usize> = p.template_positions().collect();
                let mut driver_integral = 0.0;
                let mut prev_g = 0.0;
                for (kk, &k) in tpos.iter().enumerate() {
                    acc.x[kk] += p.x()[k];
                    acc.x_left[kk] += p.x_left()[k];
                    if is_state {
                        let t = p.times()[k];
                        let g = (0..marks.len())
                            .map(|a| {
                                let pt = Point::state(t, p.x()[k], p.mean()[k], p.u_cont(k, a));
                                marks.weight(a) * pb.eval(Coef::Driver, &pt, marks.mark(a))
                            })
                            .sum::<f64>();
                        acc.driver0[kk] += g;
                        if kk > 0 {
                            driver_integral += 0.5 * (g + prev_g) * (t - p.times()[tpos[kk - 1]]);
                        }
                        prev_g = g;
                    }
                }
                let (mut sup_sq, mut int_sq, mut impulse_sum, mut impulses) = (0.0f64, 0.0, 0.0, 0u32);
                let mut kk = 0;
                for k in 0..p.len() {
                    sup_sq = sup_sq.max(p.x()[k].powi(2)).max(p.x_left()[k].powi(2));
                    if k + 1 < p.len() {
                        int_sq += 0.5 * (p.x()[k].powi(2) + p.x_left()[k + 1].powi(2)) * (p.times()[k + 1] - p.times()[k]);
                    }
                    while kk < tpos.len() && tpos[kk] < k {
                        kk += 1;
                    }
                    if p.impulse(k).is_some() && is_state {
                        let t = p.times()[k];
                        let h = pb.backward_loading(t) * p.eta(k);
                        impulse_sum += h;
                        impulses += 1;
                        acc.impulse[kk.min(nt - 1)] += h;
                    }
                }
                acc.summaries.push(PathSummary {
                    x_terminal: *p.x().last().unwrap(),
                    sup_sq,
                    int_sq,
                    jumps: p.jump_count() as u32,
                    impulses,
                    driver_integral,
                    impulse_sum,
                });
            },
            |a, b| a.merge(b),
        )
    }
}

fn setup_for(problem: &dyn Problem, imp: &ImpulseSchedule, ms: &MarkSpace, cfg: &SimConfig) -> Result<NoiseSetup, ForwardError> {
    validate_impulses(imp, problem.horizon())?;
    Ok(NoiseSetup::new(ms.clone(), problem.horizon(), cfg.dt, imp.epochs.clone())?)
}

/// Simulates the controlled forward state with the mean obtained by Picard iteration.
pub fn simulate(
    problem: Arc<dyn Problem>,
    law: &ControlLaw,
    imp: &ImpulseSchedule,
    ms: &MarkSpace,
    cfg: &SimConfig,
    seed: u64,
) -> Result<PathEnsemble, ForwardError> {
    let setup = setup_for(&*problem, imp, ms, cfg)?;
    let kernel = Kernel::State(StateKernel { problem, law: law.clone(), impulses: imp.clone(), marks: ms.clone() });
    PathEnsemble::run(kernel, setup, cfg, seed, None)
}

/// Single pass with a given mean curve (for example the exact LQ mean) instead of Picard iteration.
/// The curve is resampled onto the template nodes.
pub fn simulate_with_mean(
    problem: Arc<dyn Problem>,
    law: &ControlLaw,
    imp: &ImpulseSchedule,
    ms: &MarkSpace,
    cfg: &SimConfig,
    seed: u64,
    mean: impl Fn(f64) -> f64,
) -> Result<PathEnsemble, ForwardError> {
    let setup = setup_for(&*problem, imp, ms, cfg)?;
    let curve = MeanCurve::from_fn(&setup.template, mean);
    let kernel = Kernel::State(StateKernel { problem, law: law.clone(), impulses: imp.clone(), marks: ms.clone() });
    PathEnsemble::run(kernel, setup, cfg, seed, Some(curve))
}

fn perturbed_kernel(base: &PathEnsemble, direction: &Direction, eps_u: f64, eps_eta: f64) -> Result<PerturbedKernel, ForwardError> {
    match &*base.kernel {
        Kernel::State(k) => {
            Ok(PerturbedKernel { base: k.clone(), base_mean: base.mean.clone(), direction: direction.clone(), eps_u, eps_eta })
        }
        _ => Err(ForwardError::NotABaseEnsemble),
    }
}

/// State under `u^ε = û + ε₁(v − û)`, `η^ε = η̂ + ε₂(ξ − η̂)`, on the base ensemble's noise.
pub fn simulate_perturbed(base: &PathEnsemble, direction: &Direction, eps_u: f64, eps_eta: f64) -> Result<PathEnsemble, ForwardError> {
    let k = perturbed_kernel(base, direction, eps_u, eps_eta)?;
    PathEnsemble::run(Kernel::Perturbed(k), (*base.setup).clone(), &base.config, base.seed, None)
}

/// First variation `x¹` along the base ensemble's paths.
pub fn simulate_first_variation(
    base: &PathEnsemble,
    direction: &Direction,
    eps_u: f64,
    eps_eta: f64,
) -> Result<PathEnsemble, ForwardError> {
    let k = perturbed_kernel(base, direction, eps_u, eps_eta)?;
    PathEnsemble::run(Kernel::Variation(k), (*base.setup).clone(), &base.config, base.seed, None)
}

pub fn path_norms(ens: &PathEnsemble) -> PathNorms {
    let m = ens.summaries.len().max(1) as f64;
    PathNorms {
        sup_sq: ens.summaries.iter().map(|s| s.sup_sq).sum::<f64>() / m,
        int_sq: ens.summaries.iter().map(|s| s.int_sq).sum::<f64>() / m,
    }
}
