//! Run reports, saved models and plot-ready series files.
//!
//! `report.json` holds the manifest echo, the per-iteration and per-epoch
//! series and the final labels. Wall-clock data lives only under the top-level
//! `timing` key, so two runs of one manifest agree byte for byte once that key
//! is dropped (see [`RunReportFile::payload_json`]).

use std::path::Path;

use dtn_core::trainer::{EpochRecord, IterationRecord};
use dtn_core::{Network, ObjectiveValue, TrainReport};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const REPORT_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub iteration: usize,
    pub epoch: usize,
    pub objective: ObjectiveValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub iterations_executed: usize,
    pub converged: bool,
    /// Baseline accuracy on the target, when target labels are known.
    pub baseline_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRow>,
    pub final_labels: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds since the Unix epoch when the run started.
    pub started_unix: u64,
    pub total_seconds: f64,
    /// Wall time of each epoch, parallel to `result.epochs`.
    pub epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReportFile {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub result: RunResult,
    pub timing: Timing,
}

impl RunResult {
    pub fn from_report(report: &TrainReport) -> Self {
        RunResult {
            iterations_executed: report.iterations_executed,
            converged: report.converged,
            baseline_accuracy: report.iterations.first().and_then(|r| r.target_accuracy),
            final_accuracy: report.final_accuracy(),
            iterations: report.iterations.clone(),
            epochs: report.epochs.iter().map(EpochRow::from).collect(),
            final_labels: report.final_labels.clone(),
        }
    }
}

impl From<&EpochRecord> for EpochRow {
    fn from(r: &EpochRecord) -> Self {
        EpochRow {
            iteration: r.iteration,
            epoch: r.epoch,
            objective: r.objective,
        }
    }
}

impl RunReportFile {
    pub fn new(manifest: RunManifest, report: &TrainReport, timing: Timing) -> Self {
        RunReportFile {
            format_version: REPORT_VERSION,
            manifest,
            result: RunResult::from_report(report),
            timing,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without its `timing` section; identical across reruns.
    pub fn payload_json(&self) -> String {
        payload_json(&self.to_json()).expect("report is valid JSON")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_text(path, &self.to_json())
    }

    /// `iteration,label_changes,target_accuracy` rows, one per label round.
    pub fn write_iteration_series(&self, path: &Path) -> CliResult<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["iteration", "label_changes", "target_accuracy"])?;
        for r in &self.result.iterations {
            w.write_record([
                r.iteration.to_string(),
                opt(r.label_changes),
                opt(r.target_accuracy),
            ])?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    /// Objective components per epoch, with the baseline epochs at iteration 0.
    pub fn write_epoch_series(&self, path: &Path) -> CliResult<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["iteration", "epoch", "total", "nll", "marginal", "conditional"])?;
        for r in &self.result.epochs {
            let o = r.objective;
            w.write_record([
                r.iteration.to_string(),
                r.epoch.to_string(),
                o.total.to_string(),
                o.nll.to_string(),
                o.marginal.to_string(),
                o.conditional.to_string(),
            ])?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

/// Strips the `timing` key from a serialized report.
pub fn payload_json(report_json: &str) -> serde_json::Result<String> {
    let mut value: serde_json::Value = serde_json::from_str(report_json)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_string_pretty(&value)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    network: Network,
}

/// Saves layer specs and parameters as JSON. Floats use shortest round-trip
/// formatting, so loading reproduces every weight exactly.
pub fn save_model(net: &Network, path: &Path) -> CliResult<()> {
    let file = ModelFile {
        format_version: MODEL_VERSION,
        network: net.clone(),
    };
    write_text(path, &serde_json::to_string(&file).expect("network serializes"))
}

pub fn load_model(path: &Path) -> CliResult<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::format(path, e))?;
    if file.format_version != MODEL_VERSION {
        return Err(CliError::format(path, format!("unsupported model format_version {}", file.format_version)));
    }
    let specs = file.network.specs().to_vec();
    Ok(Network::new(specs, file.network.into_params())?)
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
