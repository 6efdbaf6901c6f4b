//! Compares the transfer network with a source-only baseline on the shifted
//! three-class mixture.
//!
//! ```text
//! cargo run --release -p dtn-core --example synthetic_benchmark -- [seeds] [hidden]
//! ```
//!
//! `DTN_*` environment variables override individual settings.

use dtn_core::benchmark;
use dtn_core::data::gen_synth_shift;
use dtn_core::trainer::{accuracy, fit, TrainConfig};
use dtn_core::{Activation, LayerSpec};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(Ok(5), |s| s.parse())?;
    let hidden: usize = args.next().map_or(Ok(benchmark::HIDDEN_UNITS), |s| s.parse())?;
    let specs = LayerSpec::chain(&[2, hidden, 3], Activation::Tanh)?;
    let base = benchmark::config(0);
    let config = TrainConfig {
        lambda: env_or("DTN_LAMBDA", base.lambda),
        mu: env_or("DTN_MU", base.mu),
        learning_rate: env_or("DTN_LR", base.learning_rate),
        label_iters: env_or("DTN_T", base.label_iters),
        epochs_per_iter: env_or("DTN_EPOCHS", base.epochs_per_iter),
        baseline_epochs: env_or("DTN_BASE_EPOCHS", base.baseline_epochs),
        batch_size: env_or("DTN_S", base.batch_size),
        target_nll: env_or("DTN_TARGET_NLL", base.target_nll),
        ..base
    };
    let mut gains = Vec::new();
    for seed in 0..seeds {
        let mut spec = benchmark::data_spec(seed);
        spec.angle = env_or("DTN_ANGLE", spec.angle);
        spec.translation[0] = env_or("DTN_SHIFT", spec.translation[0]);
        spec.noise_ratio = env_or("DTN_RATIO", spec.noise_ratio);
        spec.radius = env_or("DTN_RADIUS", spec.radius);
        spec.noise = env_or("DTN_NOISE", spec.noise);
        let (source, target) = gen_synth_shift(&spec)?;
        let cfg = TrainConfig { seed, ..config.clone() };
        let (_, report) = fit(&source, &target, &specs, &cfg)?;
        let base = report.iterations[0].target_accuracy.unwrap_or_default();
        let dtn = report.final_accuracy().unwrap_or_default();
        let (net, _) = dtn_core::trainer::train_baseline(&source, &specs, &cfg)?;
        let src = accuracy(&dtn_core::predict(&net, &source)?, source.labels().unwrap_or_default());
        let series: Vec<String> = report
            .iterations
            .iter()
            .map(|r| format!("{:.3}/{}", r.target_accuracy.unwrap_or_default(), r.label_changes.unwrap_or(0)))
            .collect();
        let drop = report
            .iterations
            .windows(2)
            .map(|w| w[0].target_accuracy.unwrap_or_default() - w[1].target_accuracy.unwrap_or_default())
            .fold(0.0, f64::max);
        println!(
            "seed {seed}: source {src:.3} baseline {base:.3} dtn {dtn:.3} max drop {drop:.3}  [{}]",
            series.join(" ")
        );
        gains.push(dtn - base);
    }
    gains.sort_by(f64::total_cmp);
    println!("median gain {:.4}", gains[gains.len() / 2]);
    Ok(())
}
