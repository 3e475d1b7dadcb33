//! Minimal reverse-mode differentiable tensor engine.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, InputCheck};
pub use graph::{BinaryKind, Conv2dSpec, Graph, Var};
pub use kernels::Padding;
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use graph::{sigmoid_scalar, softplus_scalar};
