//! Encoder laboratory for Fourier token mixing and its baselines.

pub mod bench;
pub mod cli;
mod codec;
pub mod error;
pub mod gradsuite;
pub mod kv;
pub mod model;
pub mod numerics;
pub mod tasks;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
