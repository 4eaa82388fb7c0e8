//! Minimal dense reverse-mode differentiation and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
