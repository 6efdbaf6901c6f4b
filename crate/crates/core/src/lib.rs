//! Deep transfer network.
//!
//! A fully-connected network whose last hidden layer and softmax output are
//! regularized with linear-kernel Maximum Mean Discrepancy terms so that a
//! classifier trained on a labeled source domain transfers to an unlabeled
//! target domain.
//!
//! The crate is split by concern:
//!
//! - [`nn`]: layers, forward evaluation, negative log-likelihood and
//!   backpropagation with gradient injection at the last hidden layer and at
//!   the softmax output.
//! - [`mmd`]: marginal and conditional MMD in their O(n) mean-difference form,
//!   plus their per-sample gradients.
//! - [`batching`]: paired source/target mini-batch plans.
//! - [`trainer`]: the combined objective, SGD, and the pseudo-label loop.
//! - [`data`]: dataset loaders, resizing and the synthetic domain-shift
//!   generator.
//!
//! All arithmetic is `f64`. Every source of randomness is a seeded ChaCha
//! generator, so a fixed seed gives bit-identical runs.

pub mod batching;
pub mod benchmark;
pub mod data;
pub mod error;
pub mod mmd;
pub mod nn;
pub mod trainer;

pub use batching::{build_plan, BatchPlan, BoundCheck, PairedBatch};
pub use data::{DomainDataset, DomainRole, SynthShiftSpec};
pub use error::{Error, Result};
pub use trainer::{fit, predict, FitFailure, ObjectiveValue, TrainConfig, TrainReport};
pub use mmd::MmdTerms;
pub use nn::{
    Activation, ForwardTrace, GradientSet, LayerSpec, Matrix, Network, NetworkParams,
};
