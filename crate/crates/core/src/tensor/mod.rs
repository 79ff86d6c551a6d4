//! Dense matrices and the reverse-mode tape used for training.

mod kernels;
mod matrix;
#[allow(clippy::needless_range_loop)] // index loops mirror the derivative formulas
mod tape;

pub use kernels::{joint_block_softmax, JointSoftmax};
pub use matrix::{dot, masked_softmax, softmax, Matrix};
pub use tape::{gelu, Gradients, Tape, Var};
