//! Causal dual-branch speech enhancement.
//!
//! A time-domain and a frequency-domain encoder-decoder run side by side on
//! 20 ms frames and trade features at every depth through learnable
//! bridges. The crate holds the tensor/autodiff core, the DSP front end,
//! the model with offline and streaming inference, losses and metrics, data
//! synthesis, and persistence.

pub mod data;
pub mod dsp;
pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
pub use model::{init_model, Model, ModelConfig};
