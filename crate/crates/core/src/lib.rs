//! Context-aware out-of-domain intent detection for multi-turn dialogue.
//!
//! The crate builds two views of every dialogue (mean pooling and an adaptive
//! per-token reception field), regularizes them with a multi-view information
//! bottleneck, aggregates them with a learned gate, and trains a `(k+1)`-way
//! classifier in two stages: mixup pseudo-OOD synthesis, then OOD mining from
//! unlabeled dialogues.
//!
//! The differentiable layers ([`diffcore`], [`encoder`], [`objective`]) are
//! generic over [`Scalar`]; the training pipeline runs in [`Real`] (`f64`).

pub mod checks;
pub mod data;
pub mod diffcore;
pub mod encoder;
pub mod metrics;
pub mod error;
pub mod objective;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type of the training pipeline, metrics and checkpoints.
pub type Real = f64;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tensor32 = diffcore::Tensor<f32>;
pub type Tape64 = diffcore::Tape<f64>;
pub type Tape32 = diffcore::Tape<f32>;
pub type ParamStore64 = diffcore::ParamStore<f64>;
