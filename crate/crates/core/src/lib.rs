//! Multi-scale temporal convolutional networks for word-level visual
//! speech recognition, with a small tensor autodiff engine, a synthetic
//! clip generator and a deterministic training loop.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod frontend;
pub mod model;
pub mod nn;
pub mod rng;
pub mod temporal;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
