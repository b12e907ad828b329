//! Multi-agent trajectory prediction with an attention temporal encoder,
//! gated graph message passing and a Laplace mixture decoder.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem, wall clocks or the command line lives in the `gatraj` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
mod error;
pub mod interaction;
pub mod loss;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Ablation, InputMode, Model, ModelConfig};
pub use train::{Checkpoint, TrainConfig};
pub use tensor::Tensor;
