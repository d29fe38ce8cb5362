//! Dense tensors, reverse-mode differentiation and the finite-difference
//! gradient checker.

mod gradcheck;
pub(crate) mod kernels;
pub mod sgtr;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport, DEFAULT_EPS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
