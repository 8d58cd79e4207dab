//! Event-merged Euler simulation of the controlled mean-field jump SDE.
//!
//! Each path lives on the uniform grid merged with its own jump times and the
//! impulse epochs. Between nodes the state takes an explicit Euler step whose drift
//! is `Σ_e w_e [b(·, u_cont) − c(·, u_comp)]`, the second term being the
//! compensator of the Ñ-integral. At a jump `x += γ + c` is evaluated at left limits
//! with the jump-branch control, and at an impulse `x += G(τ) η`.
//!
//! The mean `E[x_t]` is a frozen deterministic curve refined by Picard iteration.
//! Paths are never stored: every path is regenerated from `(seed, index)` when needed.

mod engine;
mod kernel;
mod mean;
mod noise;

use thiserror::Error;

pub use engine::{
    path_norms, simulate, simulate_first_variation, simulate_perturbed, simulate_with_mean, Path, PathEnsemble, PathNorms, PathSummary,
    SimConfig,
};
pub use kernel::Direction;
pub use mean::MeanCurve;
pub use noise::PathNoise;

use crate::model::ValidationReport;
use crate::randkit::RandError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error("Picard iteration diverged: mean change {change:e} grew twice in a row (pass {iteration})")]
    PicardDiverged { iteration: usize, change: f64 },
    #[error("state became non-finite on path {path} at t = {t}")]
    NonFiniteState { path: usize, t: f64 },
    #[error("ensembles do not share seed, grid and marks")]
    EnsembleMismatch,
    #[error("perturbations need an ensemble simulated under a control law")]
    NotABaseEnsemble,
    #[error("invalid simulation settings: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rand(#[from] RandError),
    #[error(transparent)]
    Validation(#[from] ValidationReport),
}

#[cfg(test)]
mod tests;
