//! Intrusion-detection library: a 1-D CNN classifier with an attention layer,
//! GAN-based tabular augmentation, network-flow preprocessing, evaluation
//! metrics, and an end-to-end pipeline.
//!
//! Modules:
//! - [`tensor`] — dense f64 tensors, reverse-mode autodiff, Adam.
//! - [`nn`] — layer specs, model builders, attention, classifier training.
//! - [`gan`] — generator/discriminator pair, adversarial training, sampling.
//! - [`data`] — CSV ingestion, dedupe, encoding, scaling, splits, augmentation.
//! - [`metrics`] — confusion matrix, per-class metrics, report rendering.
//! - [`pipeline`] — configuration, stage orchestration, checkpoints.

pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
