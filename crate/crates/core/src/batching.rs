//! Paired source/target mini-batches.
//!
//! The smaller domain is brought up to the size of the larger one by copying
//! randomly chosen samples. Both index lists are then padded to a multiple of
//! `S/2`, shuffled, and cut into batches of `S/2` source plus `S/2` target
//! indices. Copies are index references only; feature storage is never
//! duplicated.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedBatch {
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<PairedBatch>,
    pub seed: u64,
    pub batch_size: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Per-domain size after balancing and padding.
    pub fn per_domain(&self) -> usize {
        self.batches.len() * self.batch_size / 2
    }
}

/// Returns `n_large` indices into a dataset of `n_small` samples: every index
/// once, followed by `n_large - n_small` uniform draws with replacement.
pub fn balance<R: Rng + ?Sized>(n_small: usize, n_large: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n_small == 0 {
        return Err(Error::arg("cannot balance an empty dataset"));
    }
    let mut out: Vec<usize> = (0..n_small).collect();
    out.extend((n_small..n_large).map(|_| rng.random_range(0..n_small)));
    Ok(out)
}

/// Builds a seeded plan covering `n_s` source and `n_t` target samples with
/// batches of `batch_size` (`S`) samples, half from each domain.
pub fn build_plan(n_s: usize, n_t: usize, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::arg(format!("batch size must be even and at least 2, got {batch_size}")));
    }
    if n_s == 0 || n_t == 0 {
        return Err(Error::arg("both domains need at least one sample"));
    }
    let half = batch_size / 2;
    let n = n_s.max(n_t);
    if half > n {
        return Err(Error::arg(format!(
            "batch size {batch_size} exceeds twice the larger dataset ({n} samples)"
        )));
    }
    let padded = n.div_ceil(half) * half;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = balance(n_s, padded, &mut rng)?;
    let mut target = balance(n_t, padded, &mut rng)?;
    source.shuffle(&mut rng);
    target.shuffle(&mut rng);

    let batches = source
        .chunks_exact(half)
        .zip(target.chunks_exact(half))
        .map(|(s, t)| PairedBatch {
            source_indices: s.to_vec(),
            target_indices: t.to_vec(),
        })
        .collect();
    Ok(BatchPlan {
        batches,
        seed,
        batch_size,
    })
}

/// Both sides of the mini-batch decomposition bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    /// MMD over everything the plan covers.
    pub lhs: f64,
    /// `N^2 * sum_k MMD(batch k)`.
    pub rhs: f64,
    pub holds: bool,
}

/// Compares the whole-data MMD against the per-batch sum the plan implies.
///
/// The whole-data side is taken over the balanced multisets the plan
/// partitions, so copied samples count as many times as they appear.
pub fn verify_bound<S: AsRef<[f64]>>(source: &[S], target: &[S], plan: &BatchPlan) -> Result<BoundCheck> {
    let pick = |data: &[S], idx: &[usize]| -> Result<Vec<f64>> {
        let k = data.first().map_or(0, |s| s.as_ref().len());
        let mut sum = vec![0.0; k];
        for &i in idx {
            let row = data
                .get(i)
                .ok_or_else(|| Error::arg(format!("plan index {i} out of range for {} samples", data.len())))?
                .as_ref();
            if row.len() != k {
                return Err(Error::shape(None, format!("sample {i} has dimension {}, expected {k}", row.len())));
            }
            for (a, v) in sum.iter_mut().zip(row) {
                *a += v;
            }
        }
        Ok(sum)
    };

    let mut total_s: Vec<f64> = Vec::new();
    let mut total_t: Vec<f64> = Vec::new();
    let mut count_s = 0usize;
    let mut count_t = 0usize;
    let mut per_batch = 0.0;
    for b in &plan.batches {
        let ss = pick(source, &b.source_indices)?;
        let st = pick(target, &b.target_indices)?;
        if ss.len() != st.len() {
            return Err(Error::shape(None, "source and target feature dimensions differ"));
        }
        let ns = b.source_indices.len() as f64;
        let nt = b.target_indices.len() as f64;
        per_batch += ss.iter().zip(&st).map(|(a, c)| (a / ns - c / nt).powi(2)).sum::<f64>();
        if total_s.is_empty() {
            total_s = vec![0.0; ss.len()];
            total_t = vec![0.0; st.len()];
        }
        for (a, v) in total_s.iter_mut().zip(&ss) {
            *a += v;
        }
        for (a, v) in total_t.iter_mut().zip(&st) {
            *a += v;
        }
        count_s += b.source_indices.len();
        count_t += b.target_indices.len();
    }
    if count_s == 0 || count_t == 0 {
        return Err(Error::arg("plan covers no samples"));
    }
    let lhs: f64 = total_s
        .iter()
        .zip(&total_t)
        .map(|(a, c)| (a / count_s as f64 - c / count_t as f64).powi(2))
        .sum();
    let n = plan.batches.len() as f64;
    let rhs = n * n * per_batch;
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-10,
    })
}
