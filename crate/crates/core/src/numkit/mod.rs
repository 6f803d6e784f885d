//! Minimal reverse-mode differentiable tensor engine: graph ops, parameter
//! storage, Adam, and finite-difference gradient verification.

mod adam;
mod gradcheck;
mod graph;
pub mod init;
mod kernels;
pub mod layers;
mod params;
mod real;
mod tensor;

pub use adam::{adam_update, AdamState};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use real::Real;
pub use tensor::{numel, Tensor};
