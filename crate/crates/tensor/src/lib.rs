//! Minimal dense-matrix engine used by the community-search model.
//!
//! [`Tensor`] is a row-major `f64` matrix. [`Tape`] records operations on
//! tensors and replays them in reverse to produce gradients for every leaf
//! registered with [`Tape::param`]. [`Adam`] and [`Sgd`] consume those
//! gradients.

mod error;
mod optim;
mod tape;
mod tensor;

pub use error::TensorError;
pub use optim::{Adam, AdamState, Optimizer, Sgd};
pub use tape::{Gradients, Segments, Tape, Var};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
