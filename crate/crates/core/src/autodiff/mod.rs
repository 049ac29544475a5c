//! Reverse-mode automatic differentiation on a dynamically built tape.
//!
//! Backward rules are themselves expressed as tape operations, so passing
//! `create_graph = true` to [`grad`] yields gradients that can be
//! differentiated again (gradient penalties need this).

mod check;
mod grad;
mod tape;

pub use check::{finite_difference_check, max_relative_error, numeric_gradient};
pub use grad::{batch_jacobian, grad, grad_values, jacobian};
pub use tape::{Tape, Var};
