use crate::model::Epochs;
use crate::randkit::{
    fill_brownian, merge_nodes, node_index, path_rng, sample_jump_stream, uniform_nodes, MarkSpace, RandError, NODE_TOL, STREAM_BROWNIAN,
    STREAM_JUMPS,
};

/// Everything needed to regenerate the random inputs of any path.
#[derive(Debug, Clone)]
pub(crate) struct NoiseSetup {
    pub marks: MarkSpace,
    pub horizon: f64,
    /// Uniform nodes merged with deterministic impulse times.
    pub template: Vec<f64>,
    pub epochs: Epochs,
    /// Template index of each deterministic impulse time.
    fixed_impulse_nodes: Vec<usize>,
}

impl NoiseSetup {
    pub fn new(marks: MarkSpace, horizon: f64, dt: f64, epochs: Epochs) -> Result<Self, RandError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(RandError::BadHorizon(horizon));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(RandError::BadStep(dt));
        }
        let mut fixed = match &epochs {
            Epochs::Times(t) => t.clone(),
            Epochs::KthJumps(_) => Vec::new(),
        };
        fixed.sort_by(f64::total_cmp);
        let template = merge_nodes(&uniform_nodes(horizon, dt), &fixed, horizon);
        let fixed_impulse_nodes = match &epochs {
            Epochs::Times(t) => t
                .iter()
                .map(|&s| node_index(&template, s, horizon).ok_or(RandError::NodeOutOfRange(s, horizon)))
                .collect::<Result<_, _>>()?,
            Epochs::KthJumps(_) => Vec::new(),
        };
        Ok(Self { marks, horizon, template, epochs, fixed_impulse_nodes })
    }

    /// Regenerates path `path` of the ensemble keyed by `seed` into `out`.
    pub fn fill(&self, seed: u64, path: usize, out: &mut PathNoise) {
        out.clear();
        let mut rng = path_rng(seed, path as u64, STREAM_JUMPS);
        let js = sample_jump_stream(&self.marks, self.horizon, &mut rng).expect("setup validated");
        let tol = NODE_TOL * self.horizon.max(1.0);

        // Merge template nodes with jump times; a jump within tolerance of a node lands on it.
        let tpl = &self.template;
        let ev = &js.events;
        let (mut i, mut j) = (0, 0);
        while i < tpl.len() || j < ev.len() {
            let take_tpl = j >= ev.len() || (i < tpl.len() && tpl[i] <= ev[j].time + tol);
            if take_tpl {
                let t = tpl[i];
                out.template_pos.push(out.nodes.len() as u32);
                out.nodes.push(t);
                out.jump.push(None);
                i += 1;
                if j < ev.len() && (ev[j].time - t).abs() <= tol {
                    *out.jump.last_mut().unwrap() = Some(ev[j].mark as u32);
                    j += 1;
                }
            } else {
                out.nodes.push(ev[j].time);
                out.jump.push(Some(ev[j].mark as u32));
                j += 1;
            }
        }
        out.n_jumps = ev.len();
        out.impulse.resize(out.nodes.len(), None);
        match &self.epochs {
            Epochs::Times(_) => {
                for (e, &k) in self.fixed_impulse_nodes.iter().enumerate() {
                    out.impulse[out.template_pos[k] as usize] = Some(e as u32);
                }
            }
            Epochs::KthJumps(ks) => {
                let jump_nodes: Vec<usize> = (0..out.nodes.len()).filter(|&k| out.jump[k].is_some()).collect();
                for (e, &kth) in ks.iter().enumerate() {
                    if let Some(&node) = kth.checked_sub(1).and_then(|i| jump_nodes.get(i)) {
                        out.impulse[node] = Some(e as u32);
                    }
                }
            }
        }
        let mut rng = path_rng(seed, path as u64, STREAM_BROWNIAN);
        fill_brownian(&out.nodes, &mut rng, &mut out.increments);
    }
}

/// Random inputs of one path on its event-merged grid.
#[derive(Debug, Clone, Default)]
pub struct PathNoise {
    pub(crate) nodes: Vec<f64>,
    pub(crate) increments: Vec<f64>,
    pub(crate) jump: Vec<Option<u32>>,
    pub(crate) impulse: Vec<Option<u32>>,
    pub(crate) template_pos: Vec<u32>,
    pub(crate) n_jumps: usize,
}

impl PathNoise {
    fn clear(&mut self) {
        self.nodes.clear();
        self.increments.clear();
        self.jump.clear();
        self.impulse.clear();
        self.template_pos.clear();
        self.n_jumps = 0;
    }
}
