//! A small reverse-mode automatic differentiation engine.
//!
//! Tensors are dense, row-major and channel-last (`[B, T, F, C]` for
//! feature maps, `[B, T, D]` for sequences).

mod conv;
mod ftz;
mod gradcheck;
mod graph;
mod loss;
mod lstm;
mod norm;
mod tensor;

pub use ftz::without_subnormals;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use graph::{Graph, Var};
pub use loss::{cce_loss, softmax, LOG_GUARD};
pub use norm::{BatchStats, BN_EPS};
pub use tensor::{Scalar, Tensor};
