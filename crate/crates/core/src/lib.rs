//! Core library for speaker age and gender modelling.
//!
//! The crate is split along the processing pipeline:
//!
//! - [`tensor`]: dense tensors with reverse-mode automatic differentiation
//!   and a finite-difference gradient checker
//! - [`model`]: the encoder (frozen convolutional feature stage, transformer
//!   stack, average pooling) with age and gender heads, plus layer truncation
//! - [`cost`]: closed-form parameter and MAC accounting
//! - [`loss`]: CCC and cross-entropy training losses on the tape
//! - [`metrics`]: evaluation (MAE, CCC, ACC, UAR, confusion matrices) and the
//!   4-class / 3-class / 7-class mappings
//! - [`curation`]: manifest validation, per-speaker caps, balanced speaker
//!   selection, speaker-disjoint splits, VAD segmentation
//! - [`synth`]: deterministic synthetic speech corpora for desk-scale runs
//! - [`train`]: ADAM fine-tuning loop with dev-based checkpoint selection
//! - [`experiment`]: combined-vs-single, layer-sweep and cross-corpus runs
//!
//! Everything is `no_std` compatible (with `alloc`); IO and file formats live
//! in the companion `speechtraits-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cost;
pub mod curation;
mod error;
pub mod experiment;
pub mod fmath;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vad;

pub use error::{Error, Result};
