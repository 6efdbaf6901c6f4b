//! The synthetic shifted-mixture benchmark: data, architecture and settings
//! shared by the examples, the CLI defaults and the acceptance checks.

use crate::data::SynthShiftSpec;
use crate::nn::{Activation, LayerSpec};
use crate::trainer::TrainConfig;
use crate::Result;

pub const SAMPLES_PER_CLASS: usize = 300;
pub const HIDDEN_UNITS: usize = 64;

/// Data for one seed of the benchmark.
pub fn data_spec(seed: u64) -> SynthShiftSpec {
    SynthShiftSpec::benchmark(SAMPLES_PER_CLASS, seed)
}

/// `2 -> 64 -> 3`, tanh hidden layer.
pub fn layer_dims() -> Vec<usize> {
    vec![2, HIDDEN_UNITS, 3]
}

pub fn layers() -> Result<Vec<LayerSpec>> {
    LayerSpec::chain(&layer_dims(), Activation::Tanh)
}

/// λ = μ = 10, S = 200, T = 10, learning rate 0.001.
///
/// The step size is below the general default because the likelihood term is
/// a sum over the batch, not a mean.
pub fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        lambda: 10.0,
        mu: 10.0,
        batch_size: 200,
        label_iters: 10,
        learning_rate: 0.001,
        epochs_per_iter: 10,
        baseline_epochs: 10,
        seed,
        ..TrainConfig::default()
    }
}
