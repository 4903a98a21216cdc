//! Dense `f64` arrays with tape-based reverse-mode differentiation.
//!
//! Forward operations execute eagerly on a [`Tape`], which records enough
//! of each primitive to run its vector-Jacobian product during the single
//! reverse sweep in [`Tape::backward`]. Trainable weights live in a
//! [`ParamSet`] and are bound onto a tape with [`Tape::param`].

mod check;
mod grid;
mod param;
mod tape;

pub use check::{grad_check, GradCheckReport};
pub use grid::ValueGrid;
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Tape, Var, LAYER_NORM_EPS, MASK_SENTINEL};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("softmax row {row} is fully masked")]
    DegenerateMask { row: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}
