//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Networks are written as ordinary Rust that records ops on a [`Tape`]
//! borrowing a [`ParamStore`]; [`Tape::backward`] returns gradients that an
//! [`AdamState`] applies back to the store.

mod adam;
pub mod gradcheck;
mod kernels;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{Conv2d, Linear};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, ParamGrads, Tape, Var};
pub use tensor::{Float, Tensor};
