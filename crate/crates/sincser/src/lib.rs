//! Raw-waveform emotion recognition built around a learnable sinc
//! band-pass filterbank.
//!
//! The crate is organized as a pipeline:
//!
//! - [`dsp`] — sinc band-pass kernel math: cutoff constraints, windowed
//!   time-domain kernels, analytic cutoff gradients, mel-spaced bank
//!   initialization and DFT inspection helpers.
//! - [`layers`] — forward and hand-derived backward passes for everything
//!   the models need: 1-D convolution, sinc convolution, batch normalization,
//!   pooling/activation, an LSTM cell, self-attention pooling, dense and
//!   softmax cross-entropy.
//! - [`models`] — the acoustic variants (conv baseline, sinc+DNN,
//!   sinc+LSTM), the linguistic LSTM+attention stack, and the gated
//!   feature-fusion head, plus bit-exact checkpointing.
//! - [`training`] — chunk sampling, minibatch Adam, and the WA/UA/SER
//!   metrics over 4x4 confusion matrices.
//! - [`ded`] — the dialog-level sequential decoder (beam search over class
//!   sequences with a history prior and a shift penalty) and its exact
//!   brute-force oracle.
//! - [`data`] — WAV I/O, manifests, tokenization and the synthetic
//!   band-limited dataset generator.
//! - [`cli`] — config file handling and the command entry points used by
//!   the `sincser` binary.
//!
//! With the default `parallel` feature the batch-level loops fan out on
//! rayon; results are always reduced in input order, so outputs are
//! identical with or without the feature.

pub mod cli;
pub mod data;
pub mod ded;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub(crate) mod par;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
