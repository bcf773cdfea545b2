//! Minimal dense-matrix reverse-mode automatic differentiation.
//!
//! The engine is a Wengert list: [`Tape`] records eagerly-evaluated
//! operations over [`Tensor`] values and replays them in reverse to
//! accumulate gradients on `requires_grad` leaves. Each optimization
//! iteration builds a fresh tape; there is no taping across iterations.
//!
//! Everything is 64-bit floating point and dense. The graphs in scope are
//! small (tens to a few hundred nodes), so sparse kernels would buy nothing.

mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, sgd_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
