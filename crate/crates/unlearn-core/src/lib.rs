//! Machine-unlearning library and benchmark harness.
//!
//! Trains image classifiers on the CIFAR binary datasets, removes the
//! influence of a forget set via a two-phase procedure (KL-to-uniform
//! forgetting, then saliency-masked contrastive fine-tuning against the
//! retain set), runs the classic baselines (retraining from scratch,
//! fine-tuning, gradient ascent, random labels), and scores everything
//! with UA/RA/TA, a loss-threshold membership inference attack, average
//! gap against the retrain reference, and wall-clock runtime.
//!
//! The numeric core is data-parallel over batches via rayon (the default
//! `parallel` feature) with a bit-identical sequential fallback.

pub mod backend;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod rng;
pub mod tensor;
pub mod unlearn;

pub use error::{Error, Result};
pub use tensor::Tensor;
