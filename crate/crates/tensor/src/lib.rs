//! Dense tensors with BLAS matmul and a tape autodiff engine sized
//! for small transformer training on CPU.

pub mod gradcheck;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use scalar::{init_blas, Scalar};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
