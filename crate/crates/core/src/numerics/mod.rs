//! Dense matrices, a recording tape for reverse-mode gradients, and a
//! finite-difference checker.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, grad_check_subset, relative_error, GradCheckReport};
pub(crate) use matrix::dot_unchecked;
pub use matrix::{cross_entropy, dot, softmax_rows, Matrix};
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};
