//! Linear-kernel empirical Maximum Mean Discrepancy.
//!
//! All production routines use the mean-difference form
//! `|| mean(source) - mean(target) ||^2`, which costs O(n k). The quadratic
//! form `Tr(H M H^T)` over the explicit [`MmdMatrix`] is kept for checking.
//!
//! Samples are passed as slices of vectors, one vector per sample (a column of
//! `H` in matrix notation).

use crate::nn::Matrix;
use crate::{Error, Result};

/// Tolerance on `sum(p) == 1` for posterior inputs.
pub const POSTERIOR_TOLERANCE: f64 = 1e-9;

/// Coefficients of the MMD quadratic form for `n_s` source and `n_t` target
/// samples, source first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MmdMatrix {
    pub n_s: usize,
    pub n_t: usize,
}

impl MmdMatrix {
    pub fn new(n_s: usize, n_t: usize) -> Result<Self> {
        if n_s == 0 || n_t == 0 {
            return Err(Error::arg(format!("MMD matrix needs nonzero counts, got n_s={n_s}, n_t={n_t}")));
        }
        Ok(MmdMatrix { n_s, n_t })
    }

    pub fn size(&self) -> usize {
        self.n_s + self.n_t
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let ns = self.n_s as f64;
        let nt = self.n_t as f64;
        match (i < self.n_s, j < self.n_s) {
            (true, true) => 1.0 / (ns * ns),
            (false, false) => 1.0 / (nt * nt),
            _ => -1.0 / (ns * nt),
        }
    }

    /// Materializes the full `(n_s + n_t)^2` matrix.
    pub fn to_dense(&self) -> Matrix {
        let n = self.size();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = self.get(i, j);
            }
        }
        m
    }
}

/// Gradient of an MMD term with respect to each sample vector.
///
/// Every source sample receives the same vector, as does every target sample,
/// and `target = -(n_s / n_t) * source`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdGradient {
    pub n_s: usize,
    pub n_t: usize,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

impl MmdGradient {
    /// One vector per sample, source samples first.
    pub fn per_sample(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_s + self.n_t);
        out.extend(std::iter::repeat_n(self.source.clone(), self.n_s));
        out.extend(std::iter::repeat_n(self.target.clone(), self.n_t));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdTerms {
    pub mmd_mar: f64,
    pub mmd_con: f64,
    /// Gradient of the marginal term at `h(l-1)`.
    pub grad_h: MmdGradient,
    /// Gradient of the conditional term at the softmax output.
    pub grad_p: MmdGradient,
}

/// Both MMD terms and their gradients for one paired batch.
pub fn mmd_terms<S: AsRef<[f64]>, P: AsRef<[f64]>>(
    features_s: &[S],
    features_t: &[S],
    probs_s: &[P],
    probs_t: &[P],
) -> Result<MmdTerms> {
    let dh = mean_difference(features_s, features_t)?;
    check_posteriors(probs_s, "source")?;
    check_posteriors(probs_t, "target")?;
    let dp = mean_difference(probs_s, probs_t)?;
    Ok(MmdTerms {
        mmd_mar: squared_norm(&dh),
        mmd_con: squared_norm(&dp),
        grad_h: gradient_from_difference(&dh, features_s.len(), features_t.len()),
        grad_p: gradient_from_difference(&dp, probs_s.len(), probs_t.len()),
    })
}

/// `mean(source) - mean(target)`.
pub fn mean_difference<S: AsRef<[f64]>>(source: &[S], target: &[S]) -> Result<Vec<f64>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::arg("MMD needs at least one source and one target sample"));
    }
    let k = source[0].as_ref().len();
    let mut diff = vec![0.0; k];
    accumulate_mean(&mut diff, source, 1.0, k)?;
    accumulate_mean(&mut diff, target, -1.0, k)?;
    Ok(diff)
}

fn accumulate_mean<S: AsRef<[f64]>>(acc: &mut [f64], samples: &[S], sign: f64, k: usize) -> Result<()> {
    let mut sum = vec![0.0; k];
    for (i, s) in samples.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != k {
            return Err(Error::shape(None, format!("sample {i} has dimension {}, expected {k}", s.len())));
        }
        for (a, v) in sum.iter_mut().zip(s) {
            *a += v;
        }
    }
    let scale = sign / samples.len() as f64;
    for (a, s) in acc.iter_mut().zip(sum) {
        *a += scale * s;
    }
    Ok(())
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn gradient_from_difference(diff: &[f64], n_s: usize, n_t: usize) -> MmdGradient {
    let cs = 2.0 / n_s as f64;
    let ct = -2.0 / n_t as f64;
    MmdGradient {
        n_s,
        n_t,
        source: diff.iter().map(|d| cs * d).collect(),
        target: diff.iter().map(|d| ct * d).collect(),
    }
}

fn check_posteriors<P: AsRef<[f64]>>(probs: &[P], domain: &str) -> Result<()> {
    for (i, p) in probs.iter().enumerate() {
        let sum: f64 = p.as_ref().iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > POSTERIOR_TOLERANCE {
            return Err(Error::arg(format!("{domain} posterior column {i} sums to {sum}, not 1")));
        }
    }
    Ok(())
}

/// `|| mean(h_s) - mean(h_t) ||^2` over feature vectors.
pub fn marginal_mmd<S: AsRef<[f64]>>(source: &[S], target: &[S]) -> Result<f64> {
    Ok(squared_norm(&mean_difference(source, target)?))
}

/// `sum_c (mean_s p[c] - mean_t p[c])^2` over posterior vectors.
pub fn conditional_mmd<P: AsRef<[f64]>>(source: &[P], target: &[P]) -> Result<f64> {
    check_posteriors(source, "source")?;
    check_posteriors(target, "target")?;
    marginal_mmd(source, target)
}

/// Per-sample gradient of [`marginal_mmd`].
pub fn marginal_mmd_grad<S: AsRef<[f64]>>(source: &[S], target: &[S]) -> Result<MmdGradient> {
    let diff = mean_difference(source, target)?;
    Ok(gradient_from_difference(&diff, source.len(), target.len()))
}

/// Per-sample gradient of [`conditional_mmd`].
pub fn conditional_mmd_grad<P: AsRef<[f64]>>(source: &[P], target: &[P]) -> Result<MmdGradient> {
    check_posteriors(source, "source")?;
    check_posteriors(target, "target")?;
    marginal_mmd_grad(source, target)
}
