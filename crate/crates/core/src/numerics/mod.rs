//! Dense tensors, reverse-mode gradients, Adam, and the finite-difference
//! gradient checker that underwrites every gradient the attack consumes.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{evaluate, evaluate_with_gradients, grad_check, Gradients, Tape, Var};
pub use tensor::{slice_dot, slice_l2_norm, Real, Tensor};
