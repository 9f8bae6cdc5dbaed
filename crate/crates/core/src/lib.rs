//! Frequency-domain fusion of text embeddings with time-series spectra.
//!
//! A univariate lookback window is moved to the frequency domain with a real
//! FFT, embedded by complex-valued layers, modulated by text through complex
//! cross-attention and elementwise complex multiplication, mapped to the
//! horizon's spectrum and inverted back to the time domain.

pub mod cli;
pub mod ctensor;
pub mod data;
pub mod error;
pub mod model;
pub mod spectral;
pub mod textenc;
pub mod train;
pub mod verify;

pub use error::{Result, SpectfError};
