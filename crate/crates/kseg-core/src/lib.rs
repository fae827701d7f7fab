//! Core math for predicting cardiac segmentation maps directly from sparse,
//! undersampled k-space samples — no zero-filling, no intermediate image
//! reconstruction.
//!
//! The crate is organized in roughly dependency order:
//!
//! * [`tensor`] / [`graph`] — dense row-major f64 tensors and a Wengert-tape
//!   reverse-mode autodiff graph rebuilt from scratch every step.
//! * [`gradcheck`] — central finite-difference utilities used by the tests to
//!   validate every adjoint rule and the full model gradient.
//! * [`kspace`] — centered 2D DFT, off-resonance (B0) phase synthesis,
//!   Cartesian line masks and sparse sample extraction.
//! * [`phantom`] — procedural short-axis cine phantoms with ground-truth
//!   labels, plus deterministic dataset splits.
//! * [`encoding`] — sinusoidal positional features for coordinates and
//!   complex sample values.
//! * [`model`] — the latent-bottleneck attention encoder/decoder operating on
//!   unordered sample sets.
//! * [`loss`] / [`metrics`] — soft Dice + cross-entropy training losses and
//!   hard Dice / Hausdorff evaluation metrics.
//! * [`train`] — Adam, query sampling, the per-step synthesis+update loop,
//!   and full-grid prediction.
//!
//! Everything here is `no_std + alloc` compatible and does no file IO; the
//! companion `kseg` crate owns serialization formats and the CLI.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod encoding;
pub mod fmath;
pub mod gradcheck;
pub mod graph;
pub mod kspace;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod rng;
pub mod tensor;
pub mod train;

pub use graph::{Graph, Var};
pub use tensor::Tensor;
