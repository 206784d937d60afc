//! Sequence decoding for multi-channel synthetic imagined-speech EEG: a
//! compact convolutional feature extractor over fixed 50-sample segments, a
//! one-layer unidirectional LSTM, and connectionist temporal classification
//! for training and decoding variable-length label sequences without
//! per-segment labels.
//!
//! The numeric core is self-contained: dense f64 tensors with hand-written
//! forward operations and analytic gradients, all verified against central
//! finite differences.

mod binio;
pub mod ctc;
pub mod eegnet;
pub mod error;
pub mod model;
pub mod rnn;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
