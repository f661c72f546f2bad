//! Tape-based reverse-mode automatic differentiation over tensors.

pub mod gradcheck;
pub mod ops;
pub mod tape;

pub use gradcheck::{finite_difference_check, finite_difference_check_sampled};
pub use ops::{concat, BinaryOp, ReduceOp};
pub use tape::{BackwardArgs, BackwardFn, Gradients, Tape, Var};
