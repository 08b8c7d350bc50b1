//! Logical regularization (L-Reg) for classification generalization.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense matrices, stable softmax/entropy, seeded RNG, finite differences
//! - [`regularizers`]: L-Reg with analytic gradients, plus L1/L2 and Ortho-Reg
//! - [`network`]: a small MLP with hand-written backprop and a tap point for the semantic features
//! - [`synthdata`]: deterministic generators for the toy, data-shift, target-shift and all-shift tasks
//! - [`gcdeval`]: Hungarian-matched clustering accuracy and a k-means baseline
//! - [`diagnostics`]: complexity and interpretability measurements
//! - [`experiments`]: end-to-end procedures shared by the CLI and the acceptance suite

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod gcdeval;
pub mod numerics;
pub mod network;
pub mod regularizers;
pub mod synthdata;

pub use error::{Error, Result};
pub use numerics::{Matrix, ProbVector, Rng};
