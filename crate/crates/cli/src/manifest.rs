//! Run manifests: everything needed to reproduce a training run.
//!
//! A manifest is a TOML file:
//!
//! ```toml
//! format_version = 1
//! output_dir = "runs/benchmark"
//!
//! [config]
//! lambda = 10.0
//! mu = 10.0
//! learning_rate = 0.001
//!
//! [architecture]
//! dims = [2, 64, 3]
//! hidden_activation = "tanh"
//!
//! [data]
//! kind = "synthetic"
//! classes = 3
//! dim = 2
//! samples_per_class = 300
//! angle = 0.39269908169872414
//! translation = [2.0, 0.0]
//! noise_ratio = 1.0
//! seed = 0
//! ```
//!
//! File-backed data uses `kind = "files"` with `[data.source]` and
//! `[data.target]` tables, each `format = "idx"` (`images`, optional
//! `labels`) or `format = "delimited"` (`path`, `has_labels`, `delimiter`),
//! plus an optional `resize = { from = [28, 28], to = [16, 16] }`. Relative
//! paths resolve against the manifest's directory. Target labels, when
//! present, are used only to score accuracy.

use std::path::{Path, PathBuf};

use dtn_core::data::{gen_synth_shift, load_delimited, load_idx, resize_bilinear};
use dtn_core::{benchmark, Activation, DomainDataset, DomainRole, LayerSpec, SynthShiftSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    /// Free-form creation stamp; carried through to the report unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub config: TrainConfig,
    pub architecture: Architecture,
    pub data: DataSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Layer widths from input to classes.
    pub dims: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_activation: Activation,
}

fn default_hidden() -> Activation {
    Activation::Tanh
}

impl Architecture {
    pub fn layers(&self) -> CliResult<Vec<LayerSpec>> {
        if self.hidden_activation == Activation::SoftmaxOutput {
            return Err(CliError::usage("hidden_activation must be tanh or sigmoid"));
        }
        Ok(LayerSpec::chain(&self.dims, self.hidden_activation)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic(SynthShiftSpec),
    Files { source: FileSource, target: FileSource },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum FileSource {
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        resize: Option<Resize>,
    },
    Delimited {
        path: PathBuf,
        has_labels: bool,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default)]
        resize: Option<Resize>,
    },
}

fn default_delimiter() -> char {
    ','
}

/// Bilinear resampling of square-grid image features, `from` and `to` as
/// `[rows, cols]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resize {
    pub from: [usize; 2],
    pub to: [usize; 2],
}

impl FileSource {
    fn load(&self, base: &Path, role: DomainRole) -> CliResult<DomainDataset> {
        let (ds, resize) = match self {
            FileSource::Idx { images, labels, resize } => {
                let labels = labels.as_ref().map(|l| base.join(l));
                (load_idx(&base.join(images), labels.as_deref(), role)?, resize)
            }
            FileSource::Delimited {
                path,
                has_labels,
                delimiter,
                resize,
            } => {
                let delim = u8::try_from(*delimiter)
                    .ok()
                    .filter(u8::is_ascii)
                    .ok_or_else(|| CliError::usage(format!("delimiter {delimiter:?} is not a single ASCII character")))?;
                (load_delimited(&base.join(path), *has_labels, delim, role)?, resize)
            }
        };
        match resize {
            Some(r) => Ok(resize_bilinear(&ds, (r.from[0], r.from[1]), (r.to[0], r.to[1]))?),
            None => Ok(ds),
        }
    }
}

impl DataSpec {
    /// Materializes the source and target datasets.
    pub fn load(&self, base: &Path) -> CliResult<(DomainDataset, DomainDataset)> {
        match self {
            DataSpec::Synthetic(spec) => Ok(gen_synth_shift(spec)?),
            DataSpec::Files { source, target } => {
                let s = source.load(base, DomainRole::Source)?;
                let t = target.load(base, DomainRole::Target)?;
                if s.labels().is_none() {
                    return Err(CliError::usage("the source dataset must have labels"));
                }
                Ok((s, t))
            }
        }
    }
}

impl RunManifest {
    /// The bundled synthetic shifted-mixture benchmark.
    pub fn benchmark(seed: u64) -> Self {
        RunManifest {
            format_version: MANIFEST_VERSION,
            timestamp: None,
            output_dir: None,
            config: benchmark::config(seed),
            architecture: Architecture {
                dims: benchmark::layer_dims(),
                hidden_activation: Activation::Tanh,
            },
            data: DataSpec::Synthetic(benchmark::data_spec(seed)),
        }
    }

    pub fn from_toml(text: &str, path: &Path) -> CliResult<Self> {
        let manifest: RunManifest = toml::from_str(text).map_err(|e| CliError::format(path, e))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(CliError::format(
                path,
                format!("unsupported format_version {} (expected {MANIFEST_VERSION})", manifest.format_version),
            ));
        }
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields are all TOML-representable")
    }

    /// Reads a manifest file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.config.validate()?;
        self.architecture.layers()?;
        if let DataSpec::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Command-line replacements for individual [`TrainConfig`] fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub batch_size: Option<usize>,
    pub label_iters: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs_per_iter: Option<usize>,
    pub seed: Option<u64>,
    pub target_nll: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, config: &mut TrainConfig) {
        let Overrides {
            lambda,
            mu,
            batch_size,
            label_iters,
            learning_rate,
            epochs_per_iter,
            seed,
            target_nll,
        } = self.clone();
        config.lambda = lambda.unwrap_or(config.lambda);
        config.mu = mu.unwrap_or(config.mu);
        config.batch_size = batch_size.unwrap_or(config.batch_size);
        config.label_iters = label_iters.unwrap_or(config.label_iters);
        config.learning_rate = learning_rate.unwrap_or(config.learning_rate);
        config.epochs_per_iter = epochs_per_iter.unwrap_or(config.epochs_per_iter);
        config.seed = seed.unwrap_or(config.seed);
        config.target_nll = target_nll.unwrap_or(config.target_nll);
    }
}
