//! Dense double-precision numerics: matrices, reverse-mode tape, Adam,
//! finite-difference gradient checking and the checkpoint format.

mod checkpoint;
mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION, MAGIC};
pub use gradcheck::{grad_check, BlockCheck, GradCheckReport};
pub use matrix::{linear, softmax, Matrix};
pub use params::{Adam, Gradients, ParamId, ParamStore};
pub use tape::{AttnShape, Bound, Tape, Var};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
}
