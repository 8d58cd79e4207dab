//! Builds the problem, the control law and (when known) the adjoints from a `[spec]` section.

use std::sync::Arc;

use mfsmp::lq::{fixed_point_y0, lq_nodes, optimal_feedback, RiccatiSolution};
use mfsmp::model::{
    example1_impulse_times, example1_spec, example2_spec, nonlinear_demo_spec, ControlLaw, ImpulseSchedule, LQSpec, Problem,
};
use mfsmp::randkit::MarkSpace;
use mfsmp::smp::{assemble_adjoints, example2_adjoints, AdjointPaths};

use crate::config::{Kind, SpecSection};
use crate::Failure;

const DEFAULT_LQ_DT: f64 = 1e-3;

pub struct Scenario {
    pub kind: Kind,
    pub problem: Arc<dyn Problem>,
    pub law: ControlLaw,
    pub law_name: String,
    pub impulses: ImpulseSchedule,
    pub adjoints: Option<AdjointPaths>,
    /// LQ kinds only.
    pub lq: Option<(LQSpec, RiccatiSolution)>,
}

/// The LQ system named by the section, with its impulse epochs.
pub fn lq_system(spec: &SpecSection) -> Result<(LQSpec, Vec<f64>), Failure> {
    let (lq, default_times) = match spec.kind {
        Kind::Example1 => (example1_spec(), example1_impulse_times()),
        Kind::Lq => {
            let lq = match (&spec.lq, &spec.file) {
                (Some(_), Some(_)) => return Err(Failure::Config("give either [spec.lq] or spec.file, not both".into())),
                (Some(lq), None) => lq.clone(),
                (None, Some(path)) => {
                    let text =
                        std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
                    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
                }
                (None, None) => return Err(Failure::Config("kind = \"lq\" needs [spec.lq] or spec.file".into())),
            };
            (lq, Vec::new())
        }
        k => return Err(Failure::Config(format!("{k:?} is not an LQ system"))),
    };
    let lq = lq.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok((lq, spec.impulses.clone().unwrap_or(default_times)))
}

/// Solves the LQ optimum on the closed-form grid.
pub fn lq_solution(spec: &SpecSection, lq: &LQSpec, times: &[f64], marks: &MarkSpace) -> Result<RiccatiSolution, Failure> {
    let nodes = lq_nodes(lq.horizon, spec.lq_dt.unwrap_or(DEFAULT_LQ_DT), times)?;
    Ok(fixed_point_y0(lq, marks.total_mass(), &nodes, times)?)
}

impl Scenario {
    pub fn build(spec: &SpecSection, marks: &MarkSpace) -> Result<Self, Failure> {
        let law_name = spec.law.clone().unwrap_or_else(|| match spec.kind {
            Kind::Example2 => "progressive".into(),
            Kind::Nonlinear => "zero".into(),
            _ => "optimal".into(),
        });
        let bad_law = || Failure::Config(format!("law {law_name:?} is not available for {:?}", spec.kind));
        let mut s = match spec.kind {
            Kind::Example2 => {
                let ex = example2_spec(marks);
                let law = match law_name.as_str() {
                    "progressive" => ex.progressive.clone(),
                    "predictable" => ex.predictable.clone(),
                    "zero" => ControlLaw::zero(),
                    _ => return Err(bad_law()),
                };
                let spec = ex.spec.validate(marks).map_err(|e| Failure::Config(e.to_string()))?;
                Scenario {
                    kind: Kind::Example2,
                    problem: Arc::new(spec),
                    law,
                    law_name: law_name.clone(),
                    impulses: ImpulseSchedule::none(),
                    adjoints: Some(example2_adjoints(ex.lambda, 1.0)),
                    lq: None,
                }
            }
            Kind::Example1 | Kind::Lq => {
                let (lq, times) = lq_system(spec)?;
                let sol = lq_solution(spec, &lq, &times, marks)?;
                let adj = assemble_adjoints(&lq, &sol)?;
                let (law, impulses) = match law_name.as_str() {
                    "optimal" => optimal_feedback(&lq, &sol),
                    "zero" => (ControlLaw::zero(), ImpulseSchedule::at_times(times.clone(), vec![0.0; times.len()])),
                    _ => return Err(bad_law()),
                };
                Scenario {
                    kind: spec.kind,
                    problem: Arc::new(lq.clone()),
                    law,
                    law_name: law_name.clone(),
                    impulses,
                    adjoints: Some(adj),
                    lq: Some((lq, sol)),
                }
            }
            Kind::Nonlinear => {
                if law_name != "zero" {
                    return Err(bad_law());
                }
                let spec = nonlinear_demo_spec().validate(marks).map_err(|e| Failure::Config(e.to_string()))?;
                Scenario {
                    kind: Kind::Nonlinear,
                    problem: Arc::new(spec),
                    law: ControlLaw::zero(),
                    law_name: law_name.clone(),
                    impulses: ImpulseSchedule::none(),
                    adjoints: None,
                    lq: None,
                }
            }
        };
        if !spec.shift.is_finite() {
            return Err(Failure::Config(format!("shift = {} must be finite", spec.shift)));
        }
        if spec.shift != 0.0 {
            s.law = s.law.shifted(spec.shift);
        }
        Ok(s)
    }
}
