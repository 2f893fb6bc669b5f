//! Smart-filter-aided domain adversarial training for 1-D condition
//! monitoring signals.
//!
//! The pipeline has two parts. A smart filter pairs a frozen wavelet packet
//! transform (WPT) with a learnable one (LWPT); a guidance loss pulls the
//! per-band coefficient magnitudes of the learnable branch toward those of
//! the frozen branch. The reconstructed signals then feed a domain
//! adversarial network: a small 1-D CNN feature extractor, a classifier head
//! and a domain discriminator behind a gradient reversal connection.
//!
//! Everything is computed in `f64` with hand-written reverse-mode passes.
//!
//! Modules, bottom-up:
//! - [`signal`]: recordings, windows, z-score, noise at exact SNR, loaders
//!   and a synthetic bearing-like generator.
//! - [`wavelet`]: the cascade encoder/decoder and the hard-threshold
//!   activation.
//! - [`smartfilter`]: domain routing and the guidance loss.
//! - [`adversarial`]: feature extractor, heads, losses and the lambda ramp.
//! - [`optim`]: parameter registry, Adam, step schedule, checkpoints and the
//!   finite-difference checker.
//! - [`train`]: batching, the training loop, evaluation and multi-seed runs.
//! - [`harness`]: experiment configs, ablations and spectral/feature export.

pub mod adversarial;
pub mod error;
pub mod harness;
pub mod optim;
pub mod signal;
pub mod smartfilter;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
