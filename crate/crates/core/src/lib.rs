//! A desk-scale laboratory for the dynamic slope ReLU (DSReLU) activation.
//!
//! DSReLU passes non-positive inputs through unchanged and scales positive
//! inputs by a slope `s(t)` that decays logistically from a steep initial
//! value `a` to a shallow final value `b` as training progress `t` goes from
//! 0 to 1:
//!
//! ```text
//! f(x; t) = x * s(t)   if x > 0
//!         = x          if x <= 0
//! s(t)    = a + (b - a) / (1 + exp(-k (t - 0.5)))
//! ```
//!
//! The crate is built bottom-up:
//!
//! - [`tensor`]: dense f64 tensors and a per-forward-pass reverse-mode tape.
//! - [`activations`]: DSReLU, its slope schedule, and the five baselines.
//! - [`network`]: declarative MLP / residual CNN construction.
//! - [`optim`]: Adam and softmax cross-entropy.
//! - [`metrics`]: accuracy, macro F1, one-vs-rest macro AUC.
//! - [`data`]: CSV and raw image loaders, synthetic data, k-fold plans.
//! - [`harness`]: training loop, early stopping, cross-validation, reports.
//! - [`gradcheck`]: central finite-difference gradient verification.
//!
//! ```
//! use dsrelu::activations::{SlopeSchedule, TrainingProgress};
//!
//! let sched = SlopeSchedule::default();
//! let mid = sched.slope(TrainingProgress::new(0.5));
//! assert!((mid - (sched.a() + sched.b()) / 2.0).abs() < 1e-12);
//! ```

pub mod activations;
pub mod data;
mod error;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
