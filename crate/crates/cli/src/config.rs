//! Run configuration: a TOML file with `[spec]`, `[marks]`, `[mc]`, `[tolerances]` and
//! per-command sections, overlaid with command-line flags.

use std::path::{Path, PathBuf};

use mfsmp::forward::SimConfig;
use mfsmp::model::LQSpec;
use mfsmp::randkit::MarkSpace;
use mfsmp::smp::SmpTolerances;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// The reference LQ instance with every coefficient family active.
    Example1,
    /// The scalar progressive-versus-predictable comparison system.
    #[default]
    Example2,
    /// A user-supplied LQ system.
    Lq,
    /// A smooth nonlinear mean-field system.
    Nonlinear,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecSection {
    pub kind: Kind,
    /// `optimal` (LQ kinds), `progressive` or `predictable` (example2), `zero` (any kind).
    pub law: Option<String>,
    /// Constant added to both branches of the law.
    pub shift: f64,
    /// TOML file holding an LQ system, resolved against the config file's directory.
    pub file: Option<PathBuf>,
    /// Inline LQ system.
    pub lq: Option<LQSpec>,
    /// Deterministic impulse epochs for LQ kinds.
    pub impulses: Option<Vec<f64>>,
    /// Node spacing of the closed-form LQ grid.
    pub lq_dt: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub picard_tol: Option<f64>,
    pub picard_max: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Independent ensembles for the duality residual; below 2 skips it.
    pub duality_replicates: usize,
    /// Law shift defining the duality direction.
    pub duality_shift: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { duality_replicates: 8, duality_shift: 0.3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub lambdas: Vec<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { lambdas: vec![1.0] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub eps: Vec<f64>,
    /// Law shift defining the perturbation direction; zero gives the zero direction.
    pub shift: f64,
    /// Steps for the grid-refinement study; defaults to `dt, dt/2, dt/4, dt/8`.
    pub dts: Option<Vec<f64>>,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self { eps: vec![0.2, 0.1, 0.05, 0.025], shift: 0.3, dts: None }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Parsed config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Optional; must agree with the subcommand when present.
    pub command: Option<String>,
    pub spec: SpecSection,
    pub marks: Option<MarkSpace>,
    pub mc: McSection,
    pub tolerances: SmpTolerances,
    pub verify: VerifySection,
    pub compare: CompareSection,
    pub convergence: ConvergenceSection,
    pub output: OutputSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        if let Some(file) = &cfg.spec.file {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.spec.file = Some(base.join(file));
        }
        Ok(cfg)
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: String,
    pub spec: SpecSection,
    pub marks: MarkSpace,
    pub sim: SimConfig,
    pub seed: Option<u64>,
    pub tolerances: SmpTolerances,
    pub verify: VerifySection,
    pub compare: CompareSection,
    pub convergence: ConvergenceSection,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(command: &str, file: FileConfig, o: Overrides) -> Result<Self, Failure> {
        if let Some(c) = &file.command {
            if c != command {
                return Err(Failure::Config(format!("config is for command {c:?}, not {command:?}")));
            }
        }
        let defaults = SimConfig::default();
        let sim = SimConfig {
            paths: o.paths.or(file.mc.paths).unwrap_or(defaults.paths),
            dt: o.dt.or(file.mc.dt).unwrap_or(defaults.dt),
            picard_tol: file.mc.picard_tol.unwrap_or(defaults.picard_tol),
            picard_max: file.mc.picard_max.unwrap_or(defaults.picard_max),
        };
        if sim.paths == 0 {
            return Err(Failure::Config("paths must be at least 1".into()));
        }
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(Failure::Config(format!("dt = {} must be positive", sim.dt)));
        }
        let marks = match file.marks {
            Some(m) => m,
            None => MarkSpace::single(0.0, 1.0).expect("unit mark space"),
        };
        Ok(Self {
            command: command.to_owned(),
            spec: file.spec,
            marks,
            sim,
            seed: o.seed.or(file.mc.seed),
            tolerances: file.tolerances,
            verify: file.verify,
            compare: file.compare,
            convergence: file.convergence,
            out: o.out.or(file.output.dir).unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    /// The seed, which every stochastic command requires.
    pub fn require_seed(&self) -> Result<u64, Failure> {
        self.seed.ok_or_else(|| Failure::Config(format!("{} needs a seed: pass --seed N or set [mc] seed", self.command)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("[mc]\npaths = 10\ndt = 0.1\nseed = 3\n").unwrap();
        let o = Overrides { paths: Some(20), ..Default::default() };
        let cfg = RunConfig::resolve("simulate", file, o).unwrap();
        assert_eq!((cfg.sim.paths, cfg.sim.dt, cfg.seed), (20, 0.1, Some(3)));
        assert_eq!(cfg.marks.total_mass(), 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[mc]\npath = 10\n").is_err());
        assert!(toml::from_str::<FileConfig>("[tolerances]\ncontinous = 1e-3\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            [spec]
            kind = "lq"
            impulses = [0.5]
            [spec.lq]
            a1 = -0.5
            c1 = { table = [[0.0, 1.0], [1.0, 2.0]] }
            mean_weight = 2.0
            [marks]
            atoms = [{ value = 0.0, weight = 0.5 }, { value = 1.0, weight = 1.5 }]
            [tolerances]
            continuous = 1e-4
        "#;
        let file: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(file.spec.kind, Kind::Lq);
        let lq = file.spec.lq.unwrap();
        assert_eq!(lq.mean_weight, 2.0);
        assert_eq!(lq.c1.eval(0.5), 1.5);
        assert_eq!(file.marks.unwrap().total_mass(), 2.0);
        assert_eq!(file.tolerances.continuous, 1e-4);
        assert_eq!(file.tolerances.jump, 1e-6);
    }

    #[test]
    fn mismatched_command_is_an_error() {
        let file: FileConfig = toml::from_str("command = \"compare\"\n").unwrap();
        assert!(RunConfig::resolve("simulate", file, Overrides::default()).is_err());
    }
}
