//! Problem specification: coefficient curves and evaluators, control laws,
//! impulse schedules and the built-in example systems.

mod curve;
mod examples;
mod general;
mod law;
mod lq_spec;
mod problem;

use thiserror::Error;

pub use curve::Curve;
pub use examples::{
    example1_impulse_times, example1_spec, example2_predictable_value, example2_progressive_value, example2_spec, nonlinear_demo_spec,
    Example2,
};
pub use general::{Field, Field1, Field2, GeneralSpec};
pub use law::{ControlLaw, Epochs, Feedback, ImpulseRule, ImpulseSchedule, ImpulseValues};
pub use lq_spec::LQSpec;
pub use problem::{central_difference, Coef, Interval, Point, Problem, Var, FD_STEP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("coefficient {name} is not finite at t = {t}")]
    NonFiniteCoefficient { name: String, t: f64 },
    #[error("impulse epoch {index} does not come strictly after its predecessor")]
    BadImpulseOrder { index: usize },
    #[error("impulse epoch {index} at t = {time} lies outside (0, T]")]
    ImpulseOutOfRange { index: usize, time: f64 },
    #[error("mark space has no atoms")]
    EmptyMarkSpace,
    #[error("{name} = {value} must be non-negative")]
    NegativeWeight { name: String, value: f64 },
    #[error("horizon {0} must be positive and finite")]
    BadHorizon(f64),
}

/// All problems found by a validation pass.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid specification: {}", .errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationReport {
    pub errors: Vec<ModelError>,
}

impl From<crate::randkit::RandError> for ValidationReport {
    fn from(e: crate::randkit::RandError) -> Self {
        let err = match e {
            crate::randkit::RandError::EmptyMarkSpace => ModelError::EmptyMarkSpace,
            other => ModelError::NonFiniteCoefficient { name: format!("marks: {other}"), t: f64::NAN },
        };
        ValidationReport { errors: vec![err] }
    }
}

/// Validates an impulse schedule against a horizon.
pub fn validate_impulses(imp: &ImpulseSchedule, horizon: f64) -> Result<(), ValidationReport> {
    let errors = imp.validate(horizon);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ValidationReport { errors })
    }
}
