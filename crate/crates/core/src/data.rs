//! Datasets: IDX and delimited-text loaders, bilinear resizing and a
//! synthetic generator of shifted Gaussian class mixtures.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRole {
    Source,
    Target,
}

/// Feature matrix (one row per sample) with optional labels.
///
/// Target datasets may carry labels; the trainer only ever reads them for
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    features: Matrix,
    labels: Option<Vec<usize>>,
    pub name: String,
    pub role: DomainRole,
}

impl DomainDataset {
    pub fn new(features: Matrix, labels: Option<Vec<usize>>, name: impl Into<String>, role: DomainRole) -> Result<Self> {
        if features.data.len() != features.rows * features.cols {
            return Err(Error::shape(None, "feature buffer does not match its shape"));
        }
        if let Some(i) = features.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "non-finite feature at sample {}, column {}",
                i / features.cols.max(1),
                i % features.cols.max(1)
            )));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows {
                return Err(Error::arg(format!("{} labels for {} samples", l.len(), features.rows)));
            }
        }
        Ok(DomainDataset {
            features,
            labels,
            name: name.into(),
            role,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>, name: impl Into<String>, role: DomainRole) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, labels, name, role)
    }

    pub fn len(&self) -> usize {
        self.features.rows
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.iter_rows()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// One more than the largest label, or 0 when unlabeled.
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn without_labels(&self) -> Self {
        DomainDataset {
            labels: None,
            ..self.clone()
        }
    }

    pub fn with_role(mut self, role: DomainRole) -> Self {
        self.role = role;
        self
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::BinaryParse {
            path: path.to_owned(),
            offset: offset as u64,
            msg: format!("truncated header: file has {} bytes", bytes.len()),
        })
}

struct IdxFile {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn read_idx(path: &Path, magic: u32) -> Result<IdxFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let found = read_u32_be(&bytes, 0, path)?;
    if found != magic {
        return Err(Error::BinaryParse {
            path: path.to_owned(),
            offset: 0,
            msg: format!("bad magic number 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| read_u32_be(&bytes, 4 + 4 * i, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < expected {
        return Err(Error::BinaryParse {
            path: path.to_owned(),
            offset: bytes.len() as u64,
            msg: format!("truncated payload: expected {expected} bytes after the header, found {available}"),
        });
    }
    if available > expected {
        return Err(Error::BinaryParse {
            path: path.to_owned(),
            offset: (header + expected) as u64,
            msg: format!("{} trailing bytes after the payload", available - expected),
        });
    }
    Ok(IdxFile {
        dims,
        payload: bytes[header..].to_vec(),
    })
}

/// Loads an IDX image file (and optionally its label file), scaling pixels
/// to `[0, 1]` and flattening each image row-major.
pub fn load_idx(images: &Path, labels: Option<&Path>, role: DomainRole) -> Result<DomainDataset> {
    let img = read_idx(images, IDX_IMAGES_MAGIC)?;
    let (n, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
    let features = Matrix {
        rows: n,
        cols: rows * cols,
        data: img.payload.iter().map(|&b| f64::from(b) / 255.0).collect(),
    };
    let labels = match labels {
        Some(path) => {
            let lab = read_idx(path, IDX_LABELS_MAGIC)?;
            if lab.dims[0] != n {
                return Err(Error::BinaryParse {
                    path: path.to_owned(),
                    offset: 4,
                    msg: format!("label count {} does not match image count {n}", lab.dims[0]),
                });
            }
            Some(lab.payload.iter().map(|&b| usize::from(b)).collect())
        }
        None => None,
    };
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DomainDataset::new(features, labels, name, role)
}

/// Writes images (and labels, if present) in IDX format, quantizing features
/// to `round(255 * v)`.
pub fn write_idx(dataset: &DomainDataset, rows: usize, cols: usize, images: &Path, labels: Option<&Path>) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::shape(
            None,
            format!("{rows}x{cols} images do not match feature dimension {}", dataset.dim()),
        ));
    }
    let mut buf = Vec::with_capacity(16 + dataset.features.data.len());
    buf.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [dataset.len(), rows, cols] {
        buf.extend((d as u32).to_be_bytes());
    }
    buf.extend(dataset.features.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(images, buf).map_err(|e| Error::io(images, e))?;

    if let Some(path) = labels {
        let l = dataset
            .labels()
            .ok_or_else(|| Error::arg("dataset has no labels to write"))?;
        if let Some(bad) = l.iter().find(|&&v| v > 255) {
            return Err(Error::arg(format!("label {bad} does not fit in an IDX byte")));
        }
        let mut buf = Vec::with_capacity(8 + l.len());
        buf.extend(IDX_LABELS_MAGIC.to_be_bytes());
        buf.extend((l.len() as u32).to_be_bytes());
        buf.extend(l.iter().map(|&v| v as u8));
        fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Loads a delimited numeric table. With `has_labels`, the last column is a
/// nonnegative integer class index.
pub fn load_delimited(path: &Path, has_labels: bool, delimiter: u8, role: DomainRole) -> Result<DomainDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::TextParse {
            path: path.to_owned(),
            line,
            msg,
        };
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(err(format!("expected {w} fields, found {}", record.len())));
        }
        let nfeat = if has_labels { w.checked_sub(1).filter(|&n| n > 0) } else { Some(w) }
            .ok_or_else(|| err("no feature columns".into()))?;
        for (c, cell) in record.iter().take(nfeat).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(format!("column {}: '{cell}' is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(err(format!("column {}: non-finite value", c + 1)));
            }
            data.push(v);
        }
        if has_labels {
            let cell = &record[w - 1];
            labels.push(
                cell.parse::<usize>()
                    .map_err(|_| err(format!("label '{cell}' is not a class index")))?,
            );
        }
        rows += 1;
    }
    let cols = width.map_or(0, |w| if has_labels { w - 1 } else { w });
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DomainDataset::new(Matrix { rows, cols, data }, has_labels.then_some(labels), name, role)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::TextParse {
            path: path.to_owned(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Writes features (and the label column when present). Values use the
/// shortest representation that parses back to the same `f64`.
pub fn save_delimited(dataset: &DomainDataset, path: &Path, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for (i, row) in dataset.samples().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = dataset.labels() {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Bilinearly resamples every `(rows, cols)` image to `(new_rows, new_cols)`,
/// clamping results to `[0, 1]`.
///
/// Sample positions align the corner pixels of source and destination grids.
pub fn resize_bilinear(dataset: &DomainDataset, from: (usize, usize), to: (usize, usize)) -> Result<DomainDataset> {
    let (r, c) = from;
    let (r2, c2) = to;
    if r * c != dataset.dim() {
        return Err(Error::shape(
            None,
            format!("{r}x{c} images do not match feature dimension {}", dataset.dim()),
        ));
    }
    if r2 == 0 || c2 == 0 {
        return Err(Error::arg("target image size must be positive"));
    }
    if from == to {
        return Ok(dataset.clone());
    }

    // source coordinate, lower index, interpolation weight
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|j| {
                let pos = if n_out == 1 {
                    (n_in - 1) as f64 / 2.0
                } else {
                    j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(r, r2);
    let xs = axis(c, c2);

    let mut data = Vec::with_capacity(dataset.len() * r2 * c2);
    for img in dataset.samples() {
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let top = img[y0 * c + x0] * (1.0 - wx) + img[y0 * c + x1] * wx;
                let bottom = img[y1 * c + x0] * (1.0 - wx) + img[y1 * c + x1] * wx;
                data.push((top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0));
            }
        }
    }
    DomainDataset::new(
        Matrix {
            rows: dataset.len(),
            cols: r2 * c2,
            data,
        },
        dataset.labels.clone(),
        dataset.name.clone(),
        dataset.role,
    )
}

fn default_radius() -> f64 {
    3.0
}

fn default_noise() -> f64 {
    1.0
}

/// Parameters of a two-domain Gaussian class mixture.
///
/// Source class `c` is centred at `radius * (cos(2 pi c / C), sin(2 pi c / C))`
/// in the first two coordinates and zero elsewhere, with isotropic noise
/// `noise`. The target rotates those centres by `angle`, adds `translation`
/// and multiplies the noise by `noise_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthShiftSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub angle: f64,
    #[serde(default)]
    pub translation: Vec<f64>,
    pub noise_ratio: f64,
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl SynthShiftSpec {
    /// Three classes in the plane on a circle of radius 3; the target is
    /// rotated by pi/8 and translated by (2, 0) with unchanged noise.
    pub fn benchmark(samples_per_class: usize, seed: u64) -> Self {
        SynthShiftSpec {
            classes: 3,
            dim: 2,
            samples_per_class,
            angle: std::f64::consts::PI / 8.0,
            translation: vec![2.0, 0.0],
            noise_ratio: 1.0,
            seed,
            radius: default_radius(),
            noise: default_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.samples_per_class == 0 {
            return Err(Error::arg("classes and samples_per_class must be positive"));
        }
        if self.dim < 2 {
            return Err(Error::arg("synthetic data needs at least two dimensions"));
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.angle) {
            return Err(Error::arg(format!("angle {} is outside [0, 2pi)", self.angle)));
        }
        if !(self.noise_ratio > 0.0 && self.noise_ratio.is_finite()) {
            return Err(Error::arg("noise_ratio must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.radius.is_finite() {
            return Err(Error::arg("noise and radius must be finite, noise nonnegative"));
        }
        if self.translation.len() > self.dim {
            return Err(Error::arg(format!(
                "translation has {} components for {} dimensions",
                self.translation.len(),
                self.dim
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("translation must be finite"));
        }
        Ok(())
    }
}

/// Draws a labeled source and a labeled target dataset. Target labels are for
/// evaluation only.
pub fn gen_synth_shift(spec: &SynthShiftSpec) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (sin, cos) = spec.angle.sin_cos();
    let source_means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            let theta = std::f64::consts::TAU * c as f64 / spec.classes as f64;
            let mut m = vec![0.0; spec.dim];
            m[0] = spec.radius * theta.cos();
            m[1] = spec.radius * theta.sin();
            m
        })
        .collect();
    let target_means: Vec<Vec<f64>> = source_means
        .iter()
        .map(|m| {
            let mut t = m.clone();
            t[0] = cos * m[0] - sin * m[1];
            t[1] = sin * m[0] + cos * m[1];
            for (v, d) in t.iter_mut().zip(&spec.translation) {
                *v += d;
            }
            t
        })
        .collect();

    let mut draw = |means: &[Vec<f64>], sigma: f64, name: &str, role: DomainRole| {
        let n = spec.classes * spec.samples_per_class;
        let mut data = Vec::with_capacity(n * spec.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..spec.samples_per_class {
            for (c, mean) in means.iter().enumerate() {
                for m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(m + sigma * z);
                }
                labels.push(c);
            }
        }
        DomainDataset::new(
            Matrix {
                rows: n,
                cols: spec.dim,
                data,
            },
            Some(labels),
            name,
            role,
        )
    };
    let source = draw(&source_means, spec.noise, "synthetic-source", DomainRole::Source)?;
    let target = draw(
        &target_means,
        spec.noise * spec.noise_ratio,
        "synthetic-target",
        DomainRole::Target,
    )?;
    Ok((source, target))
}
