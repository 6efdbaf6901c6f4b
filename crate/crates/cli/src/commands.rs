//! The subcommands, callable without going through argument parsing.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dtn_core::data::{gen_synth_shift, load_delimited, save_delimited};
use dtn_core::trainer::{accuracy, derive_seed, plan_epoch, STREAM_INIT, STREAM_PLAN};
use dtn_core::{
    build_plan, fit, predict, Activation, DomainDataset, DomainRole, LayerSpec, Network, SynthShiftSpec, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{DataSpec, Overrides, RunManifest};
use crate::report::{csv_writer, opt, save_model, write_text, RunReportFile, RunResult, Timing};

/// Seed stream for sweep replicates, disjoint from the trainer's streams.
pub const STREAM_SWEEP: u64 = 4;

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "DTN_WORKERS";

pub const REPORT_FILE: &str = "report.json";
pub const MODEL_FILE: &str = "model.json";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// A run that got far enough to produce a report.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReportFile,
    pub network: Option<Network>,
    /// Set when training failed part-way; `report` then holds the partial series.
    pub error: Option<CliError>,
}

/// Loads the data for `manifest` and trains. Input errors surface as `Err`;
/// a numerical failure during training still yields a partial report.
pub fn run_manifest(manifest: &RunManifest, base_dir: &Path) -> CliResult<RunOutcome> {
    manifest.validate()?;
    let specs = manifest.architecture.layers()?;
    let (source, target) = manifest.data.load(base_dir)?;
    let started_unix = unix_now();
    let start = Instant::now();
    let (network, report, error) = match fit(&source, &target, &specs, &manifest.config) {
        Ok((net, report)) => (Some(net), report, None),
        Err(failure) if failure.error.is_numerical() => (None, *failure.report, Some(CliError::from(failure.error))),
        Err(failure) => return Err(failure.error.into()),
    };
    let timing = Timing {
        started_unix,
        total_seconds: start.elapsed().as_secs_f64(),
        epoch_seconds: report.epochs.iter().map(|e| e.seconds).collect(),
    };
    Ok(RunOutcome {
        report: RunReportFile::new(manifest.clone(), &report, timing),
        network,
        error,
    })
}

/// Writes `report.json`, `iterations.csv`, `epochs.csv` and, for a completed
/// run, `model.json` into `dir`.
pub fn write_outcome(outcome: &RunOutcome, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    outcome.report.save(&dir.join(REPORT_FILE))?;
    outcome.report.write_iteration_series(&dir.join(ITERATIONS_FILE))?;
    outcome.report.write_epoch_series(&dir.join(EPOCHS_FILE))?;
    let model = dir.join(MODEL_FILE);
    match &outcome.network {
        Some(net) => save_model(net, &model)?,
        None if model.exists() => std::fs::remove_file(&model).map_err(|e| CliError::io(&model, e))?,
        None => {}
    }
    Ok(())
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Output directory: the explicit one, else the manifest's `output_dir`, else
/// `<manifest stem>.run` beside the manifest.
fn output_dir(manifest: &RunManifest, manifest_path: &Path, explicit: Option<&Path>) -> PathBuf {
    let base = base_dir(manifest_path);
    match (explicit, &manifest.output_dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => base.join(dir),
        (None, None) => {
            let stem = manifest_path.file_stem().map(|s| s.to_string_lossy().into_owned());
            base.join(format!("{}.run", stem.as_deref().unwrap_or("manifest")))
        }
    }
}

/// `dtn train`: runs a manifest and writes its report. A numerical failure is
/// returned as the error after the partial report has been written.
pub fn cmd_train(manifest_path: &Path, overrides: &Overrides, out: Option<&Path>) -> CliResult<RunReportFile> {
    let mut manifest = RunManifest::load(manifest_path)?;
    overrides.apply(&mut manifest.config);
    let dir = output_dir(&manifest, manifest_path, out);
    let outcome = run_manifest(&manifest, &base_dir(manifest_path))?;
    write_outcome(&outcome, &dir)?;
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(outcome.report),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// λ and μ set to the same value.
    LambdaMu,
    BatchSize,
    /// The cap `label_iters` on pseudo-label rounds.
    Iters,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::LambdaMu => "lambda_mu",
            SweepParam::BatchSize => "batch_size",
            SweepParam::Iters => "iters",
        }
    }

    fn apply(self, value: f64, config: &mut TrainConfig) -> CliResult<()> {
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 && value <= usize::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(CliError::usage(format!("{} needs whole nonnegative values, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::LambdaMu => {
                config.lambda = value;
                config.mu = value;
            }
            SweepParam::BatchSize => config.batch_size = count()?,
            SweepParam::Iters => config.label_iters = count()?,
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "lambda_mu" => Ok(SweepParam::LambdaMu),
            "batch_size" => Ok(SweepParam::BatchSize),
            "iters" => Ok(SweepParam::Iters),
            other => Err(CliError::usage(format!(
                "unknown sweep parameter {other:?}; expected lambda_mu, batch_size or iters"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub replicate: usize,
    /// Training seed used for this replicate.
    pub seed: u64,
    pub baseline_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub iterations_executed: usize,
    /// Accuracy after each label round, baseline first.
    pub accuracy_series: Vec<Option<f64>>,
    pub seconds: f64,
    /// Why the point failed; the sweep carries on regardless.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMedian {
    pub value: f64,
    pub median_accuracy: Option<f64>,
    pub median_baseline_accuracy: Option<f64>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub replicates: usize,
    pub points: Vec<SweepPoint>,
    pub medians: Vec<SweepMedian>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

/// The manifest a sweep replicate runs: fresh training seed and, for
/// synthetic data, a fresh dataset. Every swept value shares the replicate's
/// seeds so values are compared on the same data and initialization.
pub fn replicate_manifest(base: &RunManifest, replicate: usize) -> RunManifest {
    let mut m = base.clone();
    m.config.seed = derive_seed(base.config.seed, STREAM_SWEEP, replicate as u64);
    if let DataSpec::Synthetic(spec) = &mut m.data {
        spec.seed = derive_seed(spec.seed, STREAM_SWEEP, replicate as u64);
    }
    m
}

/// Worker count from [`WORKERS_ENV`], or all cores.
pub fn workers_from_env() -> CliResult<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::usage(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

/// Runs every (value, replicate) pair, up to `workers` at a time (0 = all
/// cores). With `out`, each point's report goes to
/// `<out>/<param>-<value>/seed-<replicate>/` and the summary to
/// `<out>/summary.{json,csv}` and `<out>/medians.csv`.
pub fn run_sweep(
    manifest: &RunManifest,
    base_dir: &Path,
    param: SweepParam,
    values: &[f64],
    replicates: usize,
    workers: usize,
    out: Option<&Path>,
) -> CliResult<SweepSummary> {
    if values.is_empty() {
        return Err(CliError::usage("sweep needs at least one value"));
    }
    if replicates == 0 {
        return Err(CliError::usage("sweep needs at least one seed"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(CliError::usage(format!("sweep value {bad} is not finite")));
    }
    manifest.validate()?;
    let mut jobs = Vec::with_capacity(values.len() * replicates);
    for &value in values {
        for r in 0..replicates {
            let mut m = replicate_manifest(manifest, r);
            param.apply(value, &mut m.config)?;
            jobs.push((value, r, m));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start sweep workers: {e}")))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        jobs.par_iter()
            .map(|(value, r, m)| sweep_point(param, *value, *r, m, base_dir, out))
            .collect()
    });

    let medians = values
        .iter()
        .map(|&value| {
            let at: Vec<&SweepPoint> = points.iter().filter(|p| p.value == value).collect();
            SweepMedian {
                value,
                median_accuracy: median(at.iter().filter_map(|p| p.final_accuracy).collect()),
                median_baseline_accuracy: median(at.iter().filter_map(|p| p.baseline_accuracy).collect()),
                failed: at.iter().filter(|p| p.error.is_some()).count(),
            }
        })
        .collect();
    let summary = SweepSummary {
        param,
        values: values.to_vec(),
        replicates,
        points,
        medians,
    };
    if let Some(dir) = out {
        write_sweep(&summary, dir)?;
    }
    Ok(summary)
}

fn sweep_point(
    param: SweepParam,
    value: f64,
    replicate: usize,
    manifest: &RunManifest,
    base_dir: &Path,
    out: Option<&Path>,
) -> SweepPoint {
    let start = Instant::now();
    let mut point = SweepPoint {
        value,
        replicate,
        seed: manifest.config.seed,
        baseline_accuracy: None,
        final_accuracy: None,
        iterations_executed: 0,
        accuracy_series: Vec::new(),
        seconds: 0.0,
        error: None,
    };
    let outcome = run_manifest(manifest, base_dir).and_then(|o| {
        if let Some(dir) = out {
            let dir = dir.join(format!("{}-{value}", param.name())).join(format!("seed-{replicate}"));
            write_outcome(&o, &dir)?;
        }
        Ok(o)
    });
    match outcome {
        Ok(o) => {
            let r: &RunResult = &o.report.result;
            point.baseline_accuracy = r.baseline_accuracy;
            point.iterations_executed = r.iterations_executed;
            point.accuracy_series = r.iterations.iter().map(|i| i.target_accuracy).collect();
            match o.error {
                Some(e) => point.error = Some(e.to_string()),
                None => point.final_accuracy = r.final_accuracy,
            }
        }
        Err(e) => point.error = Some(e.to_string()),
    }
    point.seconds = start.elapsed().as_secs_f64();
    point
}

fn write_sweep(summary: &SweepSummary, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    write_text(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(summary).expect("summary serializes"),
    )?;
    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        summary.param.name(),
        "replicate",
        "seed",
        "baseline_accuracy",
        "final_accuracy",
        "iterations_executed",
        "seconds",
        "error",
    ])?;
    for p in &summary.points {
        w.write_record([
            p.value.to_string(),
            p.replicate.to_string(),
            p.seed.to_string(),
            opt(p.baseline_accuracy),
            opt(p.final_accuracy),
            p.iterations_executed.to_string(),
            p.seconds.to_string(),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("medians.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([summary.param.name(), "median_accuracy", "median_baseline_accuracy", "failed"])?;
    for m in &summary.medians {
        w.write_record([
            m.value.to_string(),
            opt(m.median_accuracy),
            opt(m.median_baseline_accuracy),
            m.failed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

/// Problem size and network used by `dtn timing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingOptions {
    pub classes: usize,
    pub dim: usize,
    pub hidden: usize,
    /// Epochs averaged per size.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TimingOptions {
    fn default() -> Self {
        TimingOptions {
            classes: 4,
            dim: 32,
            hidden: 128,
            epochs: 3,
            batch_size: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    /// Samples per domain.
    pub n: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSeries {
    pub options: TimingOptions,
    pub rows: Vec<TimingRow>,
    /// Least-squares line `mean_seconds ~ intercept + slope * n`; needs two
    /// or more sizes.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
}

/// Ordinary least squares of `y` on `x`: `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, intercept, r2))
}

/// `dtn timing`: for each size `n` (samples per domain), the wall time of
/// full-objective epochs, taken with a monotonic clock.
///
/// Sizes are visited round-robin, one epoch each per round, after one
/// discarded warm-up round; slow drift in machine speed then lands on every
/// size alike instead of bending the series.
pub fn run_timing(sizes: &[usize], options: &TimingOptions) -> CliResult<TimingSeries> {
    if sizes.is_empty() {
        return Err(CliError::usage("timing needs at least one size"));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(CliError::usage("timing sizes must be in ascending order"));
    }
    if options.epochs == 0 {
        return Err(CliError::usage("timing needs at least one epoch"));
    }
    let specs = LayerSpec::chain(&[options.dim, options.hidden, options.classes], Activation::Tanh)?;
    let config = TrainConfig {
        batch_size: options.batch_size,
        seed: options.seed,
        ..TrainConfig::default()
    };
    config.validate()?;

    struct Problem {
        source: DomainDataset,
        target: DomainDataset,
        labels: Vec<usize>,
        net: Network,
    }
    let mut problems = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 || n % options.classes != 0 {
            return Err(CliError::usage(format!(
                "size {n} must be a positive multiple of the class count {}",
                options.classes
            )));
        }
        let spec = SynthShiftSpec {
            samples_per_class: n / options.classes,
            ..timing_spec(options)
        };
        let (source, target) = gen_synth_shift(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, STREAM_INIT, 0));
        let net = Network::init(specs.clone(), &mut rng)?;
        let labels = predict(&net, &target)?;
        problems.push(Problem { source, target, labels, net });
    }

    let mut seconds = vec![Vec::with_capacity(options.epochs); sizes.len()];
    for round in 0..=options.epochs {
        for (p, times) in problems.iter_mut().zip(&mut seconds) {
            let plan_seed = derive_seed(options.seed, STREAM_PLAN, round as u64);
            let plan = build_plan(p.source.len(), p.target.len(), config.batch_size, plan_seed)?;
            let record = plan_epoch(&mut p.net, &p.source, &p.target, Some(&p.labels), &plan, &config, 1, round)?;
            if round > 0 {
                times.push(record.seconds);
            }
        }
    }

    let rows: Vec<TimingRow> = sizes
        .iter()
        .zip(seconds)
        .map(|(&n, epoch_seconds)| {
            let k = epoch_seconds.len() as f64;
            let mean = epoch_seconds.iter().sum::<f64>() / k;
            let var = epoch_seconds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            TimingRow {
                n,
                mean_seconds: mean,
                std_seconds: var.sqrt(),
                epoch_seconds,
            }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_seconds).collect();
    let fit = linear_fit(&x, &y);
    Ok(TimingSeries {
        options: options.clone(),
        rows,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        r_squared: fit.map(|f| f.2),
    })
}

fn timing_spec(options: &TimingOptions) -> SynthShiftSpec {
    let mut translation = vec![0.0; options.dim];
    translation[0] = 2.0;
    SynthShiftSpec {
        classes: options.classes,
        dim: options.dim,
        translation,
        seed: options.seed,
        ..SynthShiftSpec::benchmark(1, options.seed)
    }
}

/// Writes `timing.json` and `timing.csv` (`n,mean_seconds,std_seconds`).
pub fn write_timing(series: &TimingSeries, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    write_text(
        &dir.join("timing.json"),
        &serde_json::to_string_pretty(series).expect("timing serializes"),
    )?;
    let path = dir.join("timing.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["n", "mean_seconds", "std_seconds"])?;
    for r in &series.rows {
        w.write_record([r.n.to_string(), r.mean_seconds.to_string(), r.std_seconds.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

pub const SOURCE_FILE: &str = "source.csv";
pub const TARGET_FILE: &str = "target.csv";
pub const SPEC_FILE: &str = "spec.toml";

/// `dtn gen-synth`: writes `source.csv` and `target.csv` (features, then the
/// label in the last column) and the generating `spec.toml`.
pub fn cmd_gen_synth(spec: &SynthShiftSpec, dir: &Path) -> CliResult<()> {
    let (source, target) = gen_synth_shift(spec)?;
    create_dir(dir)?;
    save_delimited(&source, &dir.join(SOURCE_FILE), b',')?;
    save_delimited(&target, &dir.join(TARGET_FILE), b',')?;
    write_text(&dir.join(SPEC_FILE), &toml::to_string(spec).expect("spec serializes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    /// Present when the input carried labels.
    pub accuracy: Option<f64>,
}

/// `dtn predict`: applies a saved model to a delimited feature file.
pub fn cmd_predict(model: &Path, input: &Path, has_labels: bool, delimiter: u8, out: Option<&Path>) -> CliResult<Predictions> {
    let net = crate::report::load_model(model)?;
    let data = load_delimited(input, has_labels, delimiter, DomainRole::Target)?;
    let labels = predict(&net, &data)?;
    let accuracy = data.labels().map(|truth| accuracy(&labels, truth));
    if let Some(path) = out {
        let mut w = csv_writer(path)?;
        w.write_record(["label"])?;
        for l in &labels {
            w.write_record([l.to_string()])?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(Predictions { labels, accuracy })
}
