use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtn_cli::commands::{self, SweepParam, TimingOptions};
use dtn_cli::{CliError, CliResult, Overrides, RunManifest};
use dtn_core::SynthShiftSpec;

/// Deep transfer network: train, sweep and time unsupervised domain adaptation runs.
#[derive(Parser)]
#[command(name = "dtn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one manifest and write report.json, model.json and series CSVs.
    Train {
        manifest: PathBuf,
        /// Output directory (default: the manifest's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Run a manifest over a list of parameter values and seeds.
    Sweep {
        manifest: PathBuf,
        /// lambda_mu, batch_size or iters.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values, e.g. 0,1,5,10,50,100,500.
        #[arg(long)]
        values: String,
        /// Replicates per value.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Mean and spread of epoch wall time across dataset sizes.
    Timing {
        /// Comma-separated ascending sample counts per domain.
        #[arg(long, default_value = "1000,2000,4000,8000")]
        sizes: String,
        #[arg(long, default_value_t = TimingOptions::default().dim)]
        dim: usize,
        #[arg(long, default_value_t = TimingOptions::default().hidden)]
        hidden: usize,
        #[arg(long, default_value_t = TimingOptions::default().classes)]
        classes: usize,
        #[arg(long, default_value_t = TimingOptions::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic source/target pair as CSV files.
    GenSynth {
        /// TOML file with the generator parameters (default: the benchmark).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a feature file with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// The last column of the input holds labels; accuracy is reported.
        #[arg(long)]
        has_labels: bool,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        /// Write one predicted label per row here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the bundled synthetic benchmark manifest.
    Init {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Replacements for the manifest's training settings.
#[derive(Args)]
struct ConfigFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    label_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs per label round.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// on or off.
    #[arg(long, value_parser = parse_on_off)]
    target_nll: Option<bool>,
}

impl From<ConfigFlags> for Overrides {
    fn from(f: ConfigFlags) -> Self {
        Overrides {
            lambda: f.lambda,
            mu: f.mu,
            batch_size: f.batch_size,
            label_iters: f.label_iters,
            learning_rate: f.lr,
            epochs_per_iter: f.epochs,
            seed: f.seed,
            target_nll: f.target_nll,
        }
    }
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| CliError::Usage(format!("bad {what} value {v:?}"))))
        .collect()
}

fn ascii_delimiter(c: char) -> CliResult<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| CliError::Usage(format!("delimiter {c:?} is not a single ASCII character")))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { manifest, out, flags } => {
            let report = commands::cmd_train(&manifest, &flags.into(), out.as_deref())?;
            let r = &report.result;
            println!(
                "iterations {} converged {} baseline {} final {}",
                r.iterations_executed,
                r.converged,
                fmt_acc(r.baseline_accuracy),
                fmt_acc(r.final_accuracy)
            );
        }
        Command::Sweep {
            manifest,
            param,
            values,
            seeds,
            out,
            flags,
        } => {
            let values: Vec<f64> = parse_list(&values, "sweep")?;
            let mut m = RunManifest::load(&manifest)?;
            Overrides::from(flags).apply(&mut m.config);
            let base = manifest.parent().map(PathBuf::from).unwrap_or_default();
            let workers = commands::workers_from_env()?;
            let summary = commands::run_sweep(&m, &base, param, &values, seeds, workers, Some(&out))?;
            for med in &summary.medians {
                println!(
                    "{}={} median accuracy {} (baseline {}), {} failed",
                    param.name(),
                    med.value,
                    fmt_acc(med.median_accuracy),
                    fmt_acc(med.median_baseline_accuracy),
                    med.failed
                );
            }
        }
        Command::Timing {
            sizes,
            dim,
            hidden,
            classes,
            epochs,
            seed,
            out,
        } => {
            let sizes: Vec<usize> = parse_list(&sizes, "size")?;
            let options = TimingOptions {
                dim,
                hidden,
                classes,
                epochs,
                seed,
                ..TimingOptions::default()
            };
            let series = commands::run_timing(&sizes, &options)?;
            println!("n,mean_seconds,std_seconds");
            for r in &series.rows {
                println!("{},{:.6},{:.6}", r.n, r.mean_seconds, r.std_seconds);
            }
            if let Some(r2) = series.r_squared {
                println!("linear fit R^2 {r2:.4}");
            }
            if let Some(dir) = out {
                commands::write_timing(&series, &dir)?;
            }
        }
        Command::GenSynth {
            spec,
            seed,
            samples_per_class,
            out,
        } => {
            let mut s = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
                    toml::from_str::<SynthShiftSpec>(&text).map_err(|e| CliError::Format { path, msg: e.to_string() })?
                }
                None => dtn_core::benchmark::data_spec(0),
            };
            s.seed = seed.unwrap_or(s.seed);
            s.samples_per_class = samples_per_class.unwrap_or(s.samples_per_class);
            commands::cmd_gen_synth(&s, &out)?;
        }
        Command::Predict {
            model,
            input,
            has_labels,
            delimiter,
            out,
        } => {
            let p = commands::cmd_predict(&model, &input, has_labels, ascii_delimiter(delimiter)?, out.as_deref())?;
            if out.is_none() {
                for l in &p.labels {
                    println!("{l}");
                }
            }
            if let Some(a) = p.accuracy {
                eprintln!("accuracy {a:.4}");
            }
        }
        Command::Init { seed } => print!("{}", RunManifest::benchmark(seed).to_toml()),
    }
    Ok(())
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dtn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
