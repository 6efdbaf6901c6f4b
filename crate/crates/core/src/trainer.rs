//! Training: the regularized objective, SGD over paired batches, and the
//! outer pseudo-label loop.
//!
//! The objective on one batch is
//!
//! ```text
//! J = -L + lambda * MMD_mar(h(l-1)) + mu * MMD_con(p)
//! ```
//!
//! where `-L` sums the negative log-likelihood over labeled source samples and,
//! when [`TrainConfig::target_nll`] is set, over pseudo-labeled target samples.
//!
//! [`fit`] first trains a plain network on the source data to get initial
//! pseudo labels for the target, then alternates between SGD epochs on the full
//! objective and relabeling the target, until the labels stop changing or
//! `label_iters` rounds have run. Weights carry over between rounds.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batching::{build_plan, BatchPlan, PairedBatch};
use crate::data::DomainDataset;
use crate::mmd::mmd_terms;
use crate::nn::{argmax, nll, ForwardTrace, GradientSet, LayerSpec, Network};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the marginal MMD on the last hidden layer.
    pub lambda: f64,
    /// Weight of the conditional MMD on the softmax output.
    pub mu: f64,
    /// Samples per paired batch, half from each domain.
    pub batch_size: usize,
    /// Cap on pseudo-label rounds after the baseline.
    pub label_iters: usize,
    pub learning_rate: f64,
    pub epochs_per_iter: usize,
    /// Epochs for the source-only network that produces the first pseudo labels.
    pub baseline_epochs: usize,
    pub seed: u64,
    /// Include pseudo-labeled target samples in the likelihood term.
    pub target_nll: bool,
    /// Draw a fresh batch plan every epoch instead of once per label round.
    pub reshuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            mu: 10.0,
            batch_size: 200,
            label_iters: 10,
            learning_rate: 0.01,
            epochs_per_iter: 10,
            baseline_epochs: 10,
            seed: 0,
            target_nll: true,
            reshuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::arg("lambda and mu must be finite and nonnegative"));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::arg(format!("batch_size must be even and at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        Ok(())
    }

    /// The same settings with both regularizers switched off.
    pub fn without_transfer(&self) -> Self {
        TrainConfig {
            lambda: 0.0,
            mu: 0.0,
            ..self.clone()
        }
    }
}

/// Value of the objective on a batch and its three parts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    /// `-L`
    pub nll: f64,
    /// `lambda * MMD_mar`
    pub marginal: f64,
    /// `mu * MMD_con`
    pub conditional: f64,
}

impl ObjectiveValue {
    fn from_parts(nll: f64, marginal: f64, conditional: f64) -> Self {
        ObjectiveValue {
            total: nll + marginal + conditional,
            nll,
            marginal,
            conditional,
        }
    }
}

/// A batch of borrowed samples. Source samples are always labeled; target
/// samples carry pseudo labels only when they enter the likelihood.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub source: Vec<&'a [f64]>,
    pub source_labels: Vec<usize>,
    pub target: Vec<&'a [f64]>,
    pub target_labels: Option<Vec<usize>>,
}

impl<'a> Batch<'a> {
    /// Gathers the samples a [`PairedBatch`] refers to.
    pub fn gather(
        source: &'a DomainDataset,
        target: &'a DomainDataset,
        pseudo_labels: Option<&[usize]>,
        indices: &PairedBatch,
    ) -> Result<Self> {
        let source_labels = source
            .labels()
            .ok_or_else(|| Error::arg("source dataset must be labeled"))?;
        Ok(Batch {
            source: indices.source_indices.iter().map(|&i| source.sample(i)).collect(),
            source_labels: indices.source_indices.iter().map(|&i| source_labels[i]).collect(),
            target: indices.target_indices.iter().map(|&i| target.sample(i)).collect(),
            target_labels: pseudo_labels.map(|l| indices.target_indices.iter().map(|&i| l[i]).collect()),
        })
    }

    fn inputs(&self) -> Vec<&'a [f64]> {
        self.source.iter().chain(&self.target).copied().collect()
    }

    fn labels(&self) -> Vec<Option<usize>> {
        let target = self.target.len();
        self.source_labels
            .iter()
            .map(|&y| Some(y))
            .chain((0..target).map(|i| self.target_labels.as_ref().map(|l| l[i])))
            .collect()
    }
}

struct Evaluation {
    value: ObjectiveValue,
    traces: Vec<ForwardTrace>,
    grad_h: Option<Vec<Vec<f64>>>,
    grad_p: Option<Vec<Vec<f64>>>,
}

fn evaluate(net: &Network, batch: &Batch<'_>, config: &TrainConfig) -> Result<Evaluation> {
    if batch.source.len() != batch.source_labels.len() {
        return Err(Error::arg("every source sample needs a label"));
    }
    if let Some(l) = &batch.target_labels {
        if l.len() != batch.target.len() {
            return Err(Error::arg("pseudo labels do not cover the target half of the batch"));
        }
    }
    let inputs = batch.inputs();
    let traces = inputs.iter().map(|x| net.forward(x)).collect::<Result<Vec<_>>>()?;

    let (labeled_traces, labels): (Vec<ForwardTrace>, Vec<usize>) = traces
        .iter()
        .zip(batch.labels())
        .filter_map(|(t, y)| y.map(|y| (t.clone(), y)))
        .unzip();
    let neg_ll = nll(&labeled_traces, &labels)?;

    let ns = batch.source.len();
    let regularized = config.lambda > 0.0 || config.mu > 0.0;
    if batch.target.is_empty() || ns == 0 || !regularized {
        if !neg_ll.is_finite() {
            return Err(Error::numerical("objective evaluation"));
        }
        return Ok(Evaluation {
            value: ObjectiveValue::from_parts(neg_ll, 0.0, 0.0),
            traces,
            grad_h: None,
            grad_p: None,
        });
    }

    let features: Vec<&[f64]> = traces.iter().zip(&inputs).map(|(t, x)| t.features(x)).collect();
    let probs: Vec<&[f64]> = traces.iter().map(|t| t.probs.as_slice()).collect();
    let terms = mmd_terms(&features[..ns], &features[ns..], &probs[..ns], &probs[ns..])?;
    let value = ObjectiveValue::from_parts(neg_ll, config.lambda * terms.mmd_mar, config.mu * terms.mmd_con);
    if !value.total.is_finite() {
        return Err(Error::numerical("objective evaluation"));
    }
    Ok(Evaluation {
        value,
        traces,
        grad_h: Some(terms.grad_h.per_sample()),
        grad_p: Some(terms.grad_p.per_sample()),
    })
}

/// Objective over one batch.
pub fn batch_objective(net: &Network, batch: &Batch<'_>, config: &TrainConfig) -> Result<ObjectiveValue> {
    Ok(evaluate(net, batch, config)?.value)
}

/// Objective and its gradient over one batch, with the MMD gradients injected
/// into backpropagation at the last hidden layer and at the softmax output.
pub fn objective_gradient(net: &Network, batch: &Batch<'_>, config: &TrainConfig) -> Result<(ObjectiveValue, GradientSet)> {
    let eval = evaluate(net, batch, config)?;
    let grads = net.backprop_traces(
        &batch.inputs(),
        &eval.traces,
        &batch.labels(),
        eval.grad_h.as_deref(),
        eval.grad_p.as_deref(),
        config.lambda,
        config.mu,
    )?;
    Ok((eval.value, grads))
}

/// One gradient step. Returns the objective evaluated before the update; on
/// failure the network is left unchanged.
pub fn sgd_step(net: &mut Network, batch: &Batch<'_>, config: &TrainConfig) -> Result<ObjectiveValue> {
    let (value, grads) = objective_gradient(net, batch, config)?;
    net.apply_gradient(&grads, config.learning_rate)?;
    Ok(value)
}

/// Argmax class per sample; ties go to the lowest index.
pub fn predict(net: &Network, dataset: &DomainDataset) -> Result<Vec<usize>> {
    if dataset.dim() != net.input_dim() {
        return Err(Error::shape(
            0,
            format!("dataset has dimension {}, network expects {}", dataset.dim(), net.input_dim()),
        ));
    }
    dataset
        .samples()
        .map(|x| net.forward(x).map(|t| argmax(&t.probs)))
        .collect()
}

/// Fraction of predictions equal to the reference labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Deterministic sub-seed for a named random stream (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_INIT: u64 = 1;
pub const STREAM_BASELINE: u64 = 2;
pub const STREAM_PLAN: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Label round; 0 is the source-only baseline.
    pub iteration: usize,
    pub epoch: usize,
    /// Mean over the epoch's batches of the pre-update objective.
    pub objective: ObjectiveValue,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Hamming distance to the previous round's labels; absent for the baseline.
    pub label_changes: Option<usize>,
    /// Only when the target carries evaluation labels.
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
    pub final_labels: Vec<usize>,
    /// Pseudo-label rounds run after the baseline.
    pub iterations_executed: usize,
    /// True when the last round left every target label unchanged.
    pub converged: bool,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.iterations.last().and_then(|r| r.target_accuracy)
    }
}

/// A failed [`fit`], carrying whatever was recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct FitFailure {
    #[source]
    pub error: Error,
    pub report: Box<TrainReport>,
}

impl From<FitFailure> for Error {
    fn from(f: FitFailure) -> Self {
        f.error
    }
}

fn run_epoch<'a>(
    net: &mut Network,
    batches: impl Iterator<Item = Result<Batch<'a>>>,
    config: &TrainConfig,
    iteration: usize,
    epoch: usize,
) -> Result<EpochRecord> {
    let start = Instant::now();
    let mut sum = ObjectiveValue::default();
    let mut count = 0usize;
    for batch in batches {
        let v = sgd_step(net, &batch?, config)?;
        sum.nll += v.nll;
        sum.marginal += v.marginal;
        sum.conditional += v.conditional;
        count += 1;
    }
    let n = count.max(1) as f64;
    Ok(EpochRecord {
        iteration,
        epoch,
        objective: ObjectiveValue::from_parts(sum.nll / n, sum.marginal / n, sum.conditional / n),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One SGD pass over `plan` with the full objective. `pseudo_labels`, when
/// given, put the target half of each batch into the likelihood.
#[allow(clippy::too_many_arguments)]
pub fn plan_epoch(
    net: &mut Network,
    source: &DomainDataset,
    target: &DomainDataset,
    pseudo_labels: Option<&[usize]>,
    plan: &BatchPlan,
    config: &TrainConfig,
    iteration: usize,
    epoch: usize,
) -> Result<EpochRecord> {
    let batches = plan
        .batches
        .iter()
        .map(|b| Batch::gather(source, target, pseudo_labels, b));
    run_epoch(net, batches, config, iteration, epoch)
}

/// Source-only training with the regularizers off: each epoch shuffles the
/// source and walks it in chunks of `batch_size`.
pub fn train_baseline(source: &DomainDataset, specs: &[LayerSpec], config: &TrainConfig) -> Result<(Network, Vec<EpochRecord>)> {
    config.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INIT, 0));
    let mut net = Network::init(specs.to_vec(), &mut init_rng)?;
    let records = continue_baseline(&mut net, source, config)?;
    Ok((net, records))
}

fn continue_baseline(net: &mut Network, source: &DomainDataset, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    let labels = source
        .labels()
        .ok_or_else(|| Error::arg("source dataset must be labeled"))?;
    let plain = config.without_transfer();
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut records = Vec::with_capacity(config.baseline_epochs);
    for epoch in 0..config.baseline_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_BASELINE, epoch as u64));
        order.shuffle(&mut rng);
        let batches = order.chunks(config.batch_size).map(|chunk| {
            Ok(Batch {
                source: chunk.iter().map(|&i| source.sample(i)).collect(),
                source_labels: chunk.iter().map(|&i| labels[i]).collect(),
                ..Batch::default()
            })
        });
        records.push(run_epoch(net, batches, &plain, 0, epoch)?);
    }
    Ok(records)
}

fn check_inputs(source: &DomainDataset, target: &DomainDataset, specs: &[LayerSpec], config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::arg("source and target datasets must be nonempty"));
    }
    let labels = source
        .labels()
        .ok_or_else(|| Error::arg("source dataset must be labeled"))?;
    let input = specs.first().map_or(0, |s| s.input_dim);
    let classes = specs.last().map_or(0, |s| s.output_dim);
    if source.dim() != input || target.dim() != input {
        return Err(Error::shape(
            0,
            format!(
                "source has dimension {}, target {}, network input {input}",
                source.dim(),
                target.dim()
            ),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::arg(format!("source label {bad} is outside [0, {classes})")));
    }
    Ok(())
}

/// Full training run: baseline, then up to `label_iters` rounds of
/// regularized training and target relabeling.
pub fn fit(
    source: &DomainDataset,
    target: &DomainDataset,
    specs: &[LayerSpec],
    config: &TrainConfig,
) -> std::result::Result<(Network, TrainReport), FitFailure> {
    let mut report = TrainReport::default();
    match fit_inner(source, target, specs, config, &mut report) {
        Ok(net) => Ok((net, report)),
        Err(error) => Err(FitFailure {
            error,
            report: Box::new(report),
        }),
    }
}

fn fit_inner(
    source: &DomainDataset,
    target: &DomainDataset,
    specs: &[LayerSpec],
    config: &TrainConfig,
    report: &mut TrainReport,
) -> Result<Network> {
    check_inputs(source, target, specs, config)?;
    let truth = target.labels();
    let target_accuracy = |labels: &[usize]| truth.map(|t| accuracy(labels, t));

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INIT, 0));
    let mut net = Network::init(specs.to_vec(), &mut init_rng)?;
    report.epochs = continue_baseline(&mut net, source, config)?;
    let mut labels = predict(&net, target)?;
    report.iterations.push(IterationRecord {
        iteration: 0,
        label_changes: None,
        target_accuracy: target_accuracy(&labels),
    });
    report.final_labels = labels.clone();

    for iteration in 1..=config.label_iters {
        let pseudo = config.target_nll.then_some(labels.as_slice());
        let mut plan = None;
        for epoch in 0..config.epochs_per_iter {
            if plan.is_none() || config.reshuffle_each_epoch {
                let index = (iteration as u64) << 32 | epoch as u64;
                let seed = derive_seed(config.seed, STREAM_PLAN, index);
                plan = Some(build_plan(source.len(), target.len(), config.batch_size, seed)?);
            }
            let plan = plan.as_ref().expect("plan built above");
            let record = plan_epoch(&mut net, source, target, pseudo, plan, config, iteration, epoch)?;
            report.epochs.push(record);
        }
        let next = predict(&net, target)?;
        let changes = hamming(&next, &labels);
        report.iterations.push(IterationRecord {
            iteration,
            label_changes: Some(changes),
            target_accuracy: target_accuracy(&next),
        });
        report.iterations_executed = iteration;
        report.final_labels = next.clone();
        labels = next;
        if changes == 0 {
            report.converged = true;
            break;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synth_shift, DomainRole, SynthShiftSpec};
    use crate::mmd::{conditional_mmd, marginal_mmd};
    use crate::nn::{Activation, NetworkParams};
    use rand::Rng;

    fn small_net(dims: &[usize], seed: u64) -> Network {
        let specs = LayerSpec::chain(dims, Activation::Tanh).unwrap();
        Network::init(specs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0) + shift).collect()).collect()
    }

    #[test]
    fn zero_regularization_objective_is_nll() {
        let net = small_net(&[3, 4, 2], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_rows(&mut rng, 4, 3, 0.0);
        let t = random_rows(&mut rng, 4, 3, 1.0);
        let batch = Batch {
            source: s.iter().map(Vec::as_slice).collect(),
            source_labels: vec![0, 1, 1, 0],
            target: t.iter().map(Vec::as_slice).collect(),
            target_labels: None,
        };
        let cfg = TrainConfig { lambda: 0.0, mu: 0.0, ..TrainConfig::default() };
        let v = batch_objective(&net, &batch, &cfg).unwrap();
        let traces: Vec<_> = s.iter().map(|x| net.forward(x).unwrap()).collect();
        assert_eq!(v.total, nll(&traces, &[0, 1, 1, 0]).unwrap());
        assert_eq!((v.marginal, v.conditional), (0.0, 0.0));
    }

    #[test]
    fn identical_halves_have_no_mmd() {
        let net = small_net(&[3, 4, 2], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_rows(&mut rng, 5, 3, 0.0);
        let batch = Batch {
            source: s.iter().map(Vec::as_slice).collect(),
            source_labels: vec![0, 1, 0, 1, 1],
            target: s.iter().map(Vec::as_slice).collect(),
            target_labels: Some(vec![0, 1, 0, 1, 1]),
        };
        let v = batch_objective(&net, &batch, &TrainConfig::default()).unwrap();
        assert_eq!(v.marginal, 0.0);
        assert_eq!(v.conditional, 0.0);
        assert_eq!(v.total, v.nll);
    }

    #[test]
    fn objective_matches_composition_oracle() {
        let net = small_net(&[4, 5, 3], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_rows(&mut rng, 6, 4, 0.0);
        let t = random_rows(&mut rng, 6, 4, 0.7);
        let ys: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let yt: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let batch = Batch {
            source: s.iter().map(Vec::as_slice).collect(),
            source_labels: ys.clone(),
            target: t.iter().map(Vec::as_slice).collect(),
            target_labels: Some(yt.clone()),
        };
        let cfg = TrainConfig { lambda: 2.5, mu: 4.0, ..TrainConfig::default() };
        let v = batch_objective(&net, &batch, &cfg).unwrap();

        let ts: Vec<_> = s.iter().map(|x| net.forward(x).unwrap()).collect();
        let tt: Vec<_> = t.iter().map(|x| net.forward(x).unwrap()).collect();
        let expect_nll = nll(&ts, &ys).unwrap() + nll(&tt, &yt).unwrap();
        let hs: Vec<&Vec<f64>> = ts.iter().map(|t| &t.hidden[0]).collect();
        let ht: Vec<&Vec<f64>> = tt.iter().map(|t| &t.hidden[0]).collect();
        let ps: Vec<&Vec<f64>> = ts.iter().map(|t| &t.probs).collect();
        let pt: Vec<&Vec<f64>> = tt.iter().map(|t| &t.probs).collect();
        let expect = expect_nll + 2.5 * marginal_mmd(&hs, &ht).unwrap() + 4.0 * conditional_mmd(&ps, &pt).unwrap();
        assert!((v.total - expect).abs() < 1e-10);
        assert!((v.total - (v.nll + v.marginal + v.conditional)).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_zero_learning_rate_and_descent() {
        let mut net = small_net(&[3, 4, 2], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_rows(&mut rng, 5, 3, 0.0);
        let t = random_rows(&mut rng, 5, 3, 0.5);
        let batch = Batch {
            source: s.iter().map(Vec::as_slice).collect(),
            source_labels: vec![0, 1, 1, 0, 1],
            target: t.iter().map(Vec::as_slice).collect(),
            target_labels: Some(vec![1, 1, 0, 0, 1]),
        };
        let before = net.clone();
        let cfg = TrainConfig { learning_rate: f64::MIN_POSITIVE, ..TrainConfig::default() };
        // validate() rejects 0, so step through apply_gradient directly
        let (_, g) = objective_gradient(&net, &batch, &cfg).unwrap();
        net.apply_gradient(&g, 0.0).unwrap();
        assert_eq!(net, before);

        let cfg = TrainConfig { learning_rate: 1e-3, lambda: 1.0, mu: 1.0, ..TrainConfig::default() };
        let j0 = batch_objective(&net, &batch, &cfg).unwrap().total;
        sgd_step(&mut net, &batch, &cfg).unwrap();
        let j1 = batch_objective(&net, &batch, &cfg).unwrap().total;
        assert!(j1 < j0, "{j1} >= {j0}");
    }

    #[test]
    fn zero_regularization_step_matches_plain_nll_step() {
        let net = small_net(&[3, 4, 2], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random_rows(&mut rng, 4, 3, 0.0);
        let t = random_rows(&mut rng, 4, 3, 0.5);
        let batch = Batch {
            source: s.iter().map(Vec::as_slice).collect(),
            source_labels: vec![0, 1, 1, 0],
            target: t.iter().map(Vec::as_slice).collect(),
            target_labels: Some(vec![1, 0, 0, 1]),
        };
        let cfg = TrainConfig { lambda: 0.0, mu: 0.0, learning_rate: 0.05, ..TrainConfig::default() };
        let mut a = net.clone();
        sgd_step(&mut a, &batch, &cfg).unwrap();

        let inputs: Vec<&[f64]> = s.iter().chain(&t).map(Vec::as_slice).collect();
        let labels = [0, 1, 1, 0, 1, 0, 0, 1].map(Some);
        let g = net.backprop(&inputs, &labels, None, None, 0.0, 0.0).unwrap();
        let mut b = net.clone();
        b.apply_gradient(&g, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predict_examples() {
        let specs = LayerSpec::chain(&[2, 3, 4], Activation::Tanh).unwrap();
        let zero = Network::new(specs.clone(), NetworkParams::zeros(&specs)).unwrap();
        let ds = DomainDataset::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]], None, "p", DomainRole::Target).unwrap();
        assert_eq!(predict(&zero, &ds).unwrap(), vec![0, 0]);

        let net = small_net(&[2, 3, 4], 12);
        assert_eq!(predict(&net, &ds).unwrap(), predict(&net, &ds).unwrap());
        let wrong = DomainDataset::from_rows(&[vec![1.0]], None, "w", DomainRole::Target).unwrap();
        assert!(predict(&net, &wrong).is_err());
    }

    #[test]
    fn memorizes_separable_points() {
        let rows = vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]];
        let labels = vec![0, 1, 2, 3];
        let ds = DomainDataset::from_rows(&rows, Some(labels.clone()), "m", DomainRole::Source).unwrap();
        let specs = LayerSpec::chain(&[2, 8, 4], Activation::Tanh).unwrap();
        let cfg = TrainConfig { batch_size: 4, baseline_epochs: 2000, learning_rate: 0.1, ..TrainConfig::default() };
        let (net, _) = train_baseline(&ds, &specs, &cfg).unwrap();
        assert_eq!(predict(&net, &ds).unwrap(), labels);
    }

    fn benchmark(seed: u64) -> (DomainDataset, DomainDataset) {
        gen_synth_shift(&SynthShiftSpec::benchmark(60, seed)).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            batch_size: 40,
            epochs_per_iter: 3,
            baseline_epochs: 5,
            label_iters: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_label_iterations_return_baseline_predictions() {
        let (s, t) = benchmark(1);
        let specs = LayerSpec::chain(&[2, 8, 3], Activation::Tanh).unwrap();
        let cfg = TrainConfig { label_iters: 0, ..quick_config() };
        let (net, report) = fit(&s, &t, &specs, &cfg).unwrap();
        let (baseline, _) = train_baseline(&s, &specs, &cfg).unwrap();
        assert_eq!(net, baseline);
        assert_eq!(report.final_labels, predict(&baseline, &t).unwrap());
        assert_eq!(report.iterations.len(), 1);
        assert_eq!(report.iterations_executed, 0);
    }

    #[test]
    fn report_bookkeeping() {
        let (s, t) = benchmark(2);
        let specs = LayerSpec::chain(&[2, 8, 3], Activation::Tanh).unwrap();
        let cfg = quick_config();
        let (_, report) = fit(&s, &t, &specs, &cfg).unwrap();
        assert!(report.iterations.len() <= cfg.label_iters + 1);
        assert_eq!(report.iterations.len(), report.iterations_executed + 1);
        assert_eq!(
            report.epochs.len(),
            cfg.baseline_epochs + report.iterations_executed * cfg.epochs_per_iter
        );
        for e in &report.epochs {
            let o = e.objective;
            assert!((o.total - (o.nll + o.marginal + o.conditional)).abs() < 1e-9);
        }
        for w in report.iterations.windows(2) {
            // loop stops at the first round with no label changes
            assert_ne!(w[0].label_changes, Some(0));
        }
        assert!(report.final_accuracy().is_some());
    }

    #[test]
    fn fit_is_deterministic() {
        let (s, t) = benchmark(3);
        let specs = LayerSpec::chain(&[2, 6, 3], Activation::Tanh).unwrap();
        let cfg = quick_config();
        let (a, ra) = fit(&s, &t, &specs, &cfg).unwrap();
        let (b, rb) = fit(&s, &t, &specs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.final_labels, rb.final_labels);
        assert_eq!(ra.iterations, rb.iterations);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let (s, t) = benchmark(4);
        let specs = LayerSpec::chain(&[2, 6, 3], Activation::Tanh).unwrap();
        let empty = DomainDataset::from_rows(&[], None, "e", DomainRole::Target).unwrap();
        assert!(fit(&s, &empty, &specs, &quick_config()).is_err());
        assert!(fit(&s.without_labels(), &t, &specs, &quick_config()).is_err());
        let narrow = LayerSpec::chain(&[3, 6, 3], Activation::Tanh).unwrap();
        assert!(fit(&s, &t, &narrow, &quick_config()).is_err());
        let two_class = LayerSpec::chain(&[2, 6, 2], Activation::Tanh).unwrap();
        assert!(fit(&s, &t, &two_class, &quick_config()).is_err());
        let odd = TrainConfig { batch_size: 7, ..quick_config() };
        assert!(fit(&s, &t, &specs, &odd).is_err());
    }

    #[test]
    fn divergence_reports_numerical_failure_with_partial_report() {
        let (s, t) = benchmark(5);
        let specs = LayerSpec::chain(&[2, 6, 3], Activation::Tanh).unwrap();
        let cfg = TrainConfig { lambda: f64::MAX, ..quick_config() };
        let failure = fit(&s, &t, &specs, &cfg).unwrap_err();
        assert!(failure.error.is_numerical(), "{}", failure.error);
        assert_eq!(failure.report.iterations.len(), 1);
    }

    #[test]
    fn derived_seeds_differ_across_streams() {
        let a = derive_seed(7, STREAM_INIT, 0);
        assert_ne!(a, derive_seed(7, STREAM_PLAN, 0));
        assert_ne!(a, derive_seed(8, STREAM_INIT, 0));
        assert_eq!(a, derive_seed(7, STREAM_INIT, 0));
    }
}
