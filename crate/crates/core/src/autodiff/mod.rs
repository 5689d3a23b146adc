//! Dense matrices with reverse-mode differentiation.

mod array;
pub mod checkpoint;
mod gradcheck;
mod tape;

pub use array::{Array, Scalar};
pub use checkpoint::Checkpoint;
pub use gradcheck::{gradcheck, GradCheck, GRADCHECK_FLOOR, GRADCHECK_STEP};
pub use tape::{Axis, Gradients, Tape, Var, LAYERNORM_EPS};
