//! Adaptive spike-train representation of single-channel EEG and a small
//! transformer encoder for five-class sleep staging.
//!
//! ```text
//! record ─▶ signal_io::epochize ─▶ filterbank::decompose ─▶ spike_encoder ─▶ model ─▶ evaluation
//! ```

pub mod evaluation;
pub mod filterbank;
pub mod model;
pub mod signal_io;
pub mod spike_encoder;
