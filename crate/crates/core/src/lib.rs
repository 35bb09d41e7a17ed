//! Few-shot model debugging.
//!
//! Given a trained classifier, a handful of examples of a phenomenon it gets
//! wrong, and its original training set, patch the classifier so it handles
//! the phenomenon while keeping its original accuracy. Besides the in-danger
//! rehearsal method this crate carries the usual baselines (debug-only
//! fine-tuning, L2/L∞ constrained fine-tuning, KL-regularized fine-tuning,
//! mixed-in retraining and oversampling) and a harness to compare them.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod methods;
pub mod model;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
