//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, Section, CHECKPOINT_HEADER};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Fault, Graph, Var};
pub use params::{BoundParams, ParamStore};
pub use tensor::Tensor;
