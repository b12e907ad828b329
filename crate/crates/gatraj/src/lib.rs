//! Files, reports, benchmarks and the command-line driver around
//! [`gatraj_core`].

pub mod bench;
pub mod ckpt;
pub mod cli;
pub mod dataset;
mod error;
pub mod eval;
pub mod ethucy;
pub mod reports;
pub mod sweep;

pub use error::{Error, Result};
pub use gatraj_core;
