//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_many, finite_difference_check, GradCheck};
pub use tape::{Primitive, Tape, Var};
pub use tensor::Tensor;
