//! Fully-connected network with a softmax discrimination layer.
//!
//! Layer `k` computes `h(k) = f(W_k h(k-1) + b_k)` with `h(0) = x`; the last
//! layer computes `p = softmax(W_l h(l-1) + b_l)`. Weights are row-major
//! `(output_dim, input_dim)` matrices.
//!
//! [`Network::backprop`] differentiates
//!
//! ```text
//! J = -sum_i log p_i[y_i] + lambda * sum_i g_h,i . h_i(l-1) + mu * sum_i g_p,i . p_i
//! ```
//!
//! where `g_h` and `g_p` are per-sample gradients supplied by the caller and
//! treated as constants. Feeding in the MMD gradients yields the gradient of the
//! full transfer objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor applied to probabilities inside the log of the likelihood term.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    SoftmaxOutput,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-a).exp()),
            Activation::SoftmaxOutput => unreachable!("softmax is applied per layer, not per unit"),
        }
    }

    /// Derivative expressed through the activation's output value.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Sigmoid => h * (1.0 - h),
            Activation::SoftmaxOutput => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    /// Builds a chain of layers from a list of widths `[d, k_1, ..., C]`, using
    /// `hidden` for every layer but the last.
    pub fn chain(dims: &[usize], hidden: Activation) -> Result<Vec<LayerSpec>> {
        if dims.len() < 2 {
            return Err(Error::arg("a network needs at least an input and an output width"));
        }
        let n = dims.len() - 1;
        let specs: Vec<_> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input_dim: w[0],
                output_dim: w[1],
                activation: if i + 1 == n { Activation::SoftmaxOutput } else { hidden },
            })
            .collect();
        validate_specs(&specs)?;
        Ok(specs)
    }
}

/// Checks the chaining and activation-placement rules of a layer list.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::arg("network has no layers"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::shape(i, "layer dimensions must be positive"));
        }
        let last = i + 1 == specs.len();
        match (last, s.activation) {
            (true, Activation::SoftmaxOutput) | (false, Activation::Tanh | Activation::Sigmoid) => {}
            (true, _) => return Err(Error::shape(i, "final layer must be the softmax output")),
            (false, _) => return Err(Error::shape(i, "softmax output is only allowed on the final layer")),
        }
        if i > 0 && specs[i - 1].output_dim != s.input_dim {
            return Err(Error::shape(
                i,
                format!(
                    "input_dim {} does not match previous output_dim {}",
                    s.input_dim,
                    specs[i - 1].output_dim
                ),
            ));
        }
    }
    Ok(())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape(None, "ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |r| self.row(r))
    }

    fn matvec_add(&self, x: &[f64], bias: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.data.chunks_exact(self.cols).zip(bias).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v)
        }));
    }

    /// `W^T v`
    fn transpose_matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &vr) in self.data.chunks_exact(self.cols).zip(v) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * vr;
            }
        }
        out
    }

    /// `self += a b^T`
    fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (row, &ar) in self.data.chunks_exact_mut(self.cols).zip(a) {
            for (m, bv) in row.iter_mut().zip(b) {
                *m += ar * bv;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetworkParams {
    pub fn zeros(specs: &[LayerSpec]) -> Self {
        NetworkParams {
            weights: specs.iter().map(|s| Matrix::zeros(s.output_dim, s.input_dim)).collect(),
            biases: specs.iter().map(|s| vec![0.0; s.output_dim]).collect(),
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Self {
        let mut params = Self::zeros(specs);
        for (w, s) in params.weights.iter_mut().zip(specs) {
            let limit = (6.0 / (s.input_dim + s.output_dim) as f64).sqrt();
            for v in &mut w.data {
                *v = rng.random_range(-limit..limit);
            }
        }
        params
    }

    pub fn check_shapes(&self, specs: &[LayerSpec]) -> Result<()> {
        if self.weights.len() != specs.len() || self.biases.len() != specs.len() {
            return Err(Error::shape(
                None,
                format!(
                    "{} weight matrices and {} bias vectors for {} layers",
                    self.weights.len(),
                    self.biases.len(),
                    specs.len()
                ),
            ));
        }
        for (i, ((w, b), s)) in self.weights.iter().zip(&self.biases).zip(specs).enumerate() {
            if w.rows != s.output_dim || w.cols != s.input_dim || w.data.len() != w.rows * w.cols {
                return Err(Error::shape(
                    i,
                    format!(
                        "weight matrix is {}x{}, expected {}x{}",
                        w.rows, w.cols, s.output_dim, s.input_dim
                    ),
                ));
            }
            if b.len() != s.output_dim {
                return Err(Error::shape(i, format!("bias has length {}, expected {}", b.len(), s.output_dim)));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.data.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits every scalar in a fixed order: per layer, weights then biases.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.data.iter_mut().chain(b.iter_mut()))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.data.iter().chain(b.iter()).copied())
    }
}

/// Gradient of a scalar objective with respect to [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub NetworkParams);

impl GradientSet {
    pub fn zeros(specs: &[LayerSpec]) -> Self {
        GradientSet(NetworkParams::zeros(specs))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.values()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `h(1) ... h(l-1)`; empty for a network with only the softmax layer.
    pub hidden: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Input to the discrimination layer, `h(l-1)`. Falls back to the input
    /// vector when there are no hidden layers.
    pub fn features<'a>(&'a self, input: &'a [f64]) -> &'a [f64] {
        self.hidden.last().map_or(input, Vec::as_slice)
    }
}

/// Numerically stable softmax using max-subtraction.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Negative log-likelihood summed over the batch, `-sum_i log p_i[y_i]`.
pub fn nll(traces: &[ForwardTrace], labels: &[usize]) -> Result<f64> {
    if traces.len() != labels.len() {
        return Err(Error::arg(format!("{} traces but {} labels", traces.len(), labels.len())));
    }
    traces.iter().zip(labels).enumerate().try_fold(0.0, |acc, (i, (t, &y))| {
        let p = t
            .probs
            .get(y)
            .ok_or_else(|| Error::arg(format!("label {y} of sample {i} is outside [0, {})", t.probs.len())))?;
        Ok(acc - p.max(LOG_CLAMP).ln())
    })
}

/// A validated network: layer specs together with matching parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    specs: Vec<LayerSpec>,
    params: NetworkParams,
}

impl Network {
    pub fn new(specs: Vec<LayerSpec>, params: NetworkParams) -> Result<Self> {
        validate_specs(&specs)?;
        params.check_shapes(&specs)?;
        Ok(Network { specs, params })
    }

    pub fn init<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        validate_specs(&specs)?;
        let params = NetworkParams::glorot(&specs, rng);
        Ok(Network { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn into_params(self) -> NetworkParams {
        self.params
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.specs[self.specs.len() - 1].output_dim
    }

    /// Width of `h(l-1)`.
    pub fn feature_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].input_dim
    }

    /// Replaces the parameters after checking shapes and finiteness.
    pub fn set_params(&mut self, params: NetworkParams) -> Result<()> {
        params.check_shapes(&self.specs)?;
        if !params.is_finite() {
            return Err(Error::numerical("parameter assignment"));
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                0,
                format!("input has length {}, expected {}", x.len(), self.input_dim()),
            ));
        }
        let last = self.specs.len() - 1;
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut buf = Vec::new();
        for (k, spec) in self.specs[..last].iter().enumerate() {
            let input: &[f64] = if k == 0 { x } else { &hidden[k - 1] };
            self.params.weights[k].matvec_add(input, &self.params.biases[k], &mut buf);
            hidden.push(buf.iter().map(|&a| spec.activation.apply(a)).collect::<Vec<_>>());
        }
        let feat = hidden.last().map_or(x, Vec::as_slice);
        self.params.weights[last].matvec_add(feat, &self.params.biases[last], &mut buf);
        let probs = softmax(&buf)?;
        Ok(ForwardTrace { hidden, probs })
    }

    /// Gradient of the likelihood term plus the injected linear terms, summed
    /// over the batch.
    ///
    /// `labels[i] == None` drops sample `i` from the likelihood. `grad_h` and
    /// `grad_p`, when given, hold one vector per sample of width
    /// [`feature_dim`](Self::feature_dim) and `C` respectively; they are scaled by
    /// `lambda` and `mu`.
    pub fn backprop(
        &self,
        inputs: &[&[f64]],
        labels: &[Option<usize>],
        grad_h: Option<&[Vec<f64>]>,
        grad_p: Option<&[Vec<f64>]>,
        lambda: f64,
        mu: f64,
    ) -> Result<GradientSet> {
        let traces = inputs.iter().map(|x| self.forward(x)).collect::<Result<Vec<_>>>()?;
        self.backprop_traces(inputs, &traces, labels, grad_h, grad_p, lambda, mu)
    }

    /// [`backprop`](Self::backprop) reusing traces from an earlier forward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn backprop_traces(
        &self,
        inputs: &[&[f64]],
        traces: &[ForwardTrace],
        labels: &[Option<usize>],
        grad_h: Option<&[Vec<f64>]>,
        grad_p: Option<&[Vec<f64>]>,
        lambda: f64,
        mu: f64,
    ) -> Result<GradientSet> {
        let n = inputs.len();
        if traces.len() != n || labels.len() != n {
            return Err(Error::arg(format!(
                "batch has {n} inputs, {} traces and {} labels",
                traces.len(),
                labels.len()
            )));
        }
        let c = self.num_classes();
        let k = self.feature_dim();
        if let Some(g) = grad_h {
            if g.len() != n || g.iter().any(|v| v.len() != k) {
                return Err(Error::shape(self.specs.len() - 1, format!("injected feature gradients must be {n} vectors of length {k}")));
            }
        }
        if let Some(g) = grad_p {
            if g.len() != n || g.iter().any(|v| v.len() != c) {
                return Err(Error::shape(self.specs.len() - 1, format!("injected output gradients must be {n} vectors of length {c}")));
            }
        }

        let last = self.specs.len() - 1;
        let mut grads = GradientSet::zeros(&self.specs);
        for i in 0..n {
            let x = inputs[i];
            let trace = &traces[i];
            let p = &trace.probs;

            // d/dz of the softmax-layer terms
            let mut dz = vec![0.0; c];
            if let Some(y) = labels[i] {
                if y >= c {
                    return Err(Error::arg(format!("label {y} of sample {i} is outside [0, {c})")));
                }
                dz.copy_from_slice(p);
                dz[y] -= 1.0;
            }
            if let Some(g) = grad_p {
                let g = &g[i];
                let pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                for ((d, &pc), &gc) in dz.iter_mut().zip(p).zip(g) {
                    *d += mu * pc * (gc - pg);
                }
            }
            if dz.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!("backprop at layer {last}")));
            }
            let feat = trace.features(x);
            grads.0.weights[last].add_outer(&dz, feat);
            add_assign(&mut grads.0.biases[last], &dz);
            if last == 0 {
                continue;
            }

            let mut dh = self.params.weights[last].transpose_matvec(&dz);
            if let Some(g) = grad_h {
                for (d, gv) in dh.iter_mut().zip(&g[i]) {
                    *d += lambda * gv;
                }
            }
            for layer in (0..last).rev() {
                let act = self.specs[layer].activation;
                let h = &trace.hidden[layer];
                let da: Vec<f64> = dh
                    .iter()
                    .zip(h)
                    .map(|(d, &hv)| d * act.derivative_from_output(hv))
                    .collect();
                if da.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical(format!("backprop at layer {layer}")));
                }
                let input = if layer == 0 { x } else { &trace.hidden[layer - 1] };
                grads.0.weights[layer].add_outer(&da, input);
                add_assign(&mut grads.0.biases[layer], &da);
                if layer > 0 {
                    dh = self.params.weights[layer].transpose_matvec(&da);
                }
            }
        }
        Ok(grads)
    }

    /// `params -= learning_rate * grads`. Leaves the network untouched if any
    /// updated entry would be non-finite.
    pub fn apply_gradient(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        grads.0.check_shapes(&self.specs)?;
        let mut next = self.params.clone();
        for (p, g) in next.values_mut().zip(grads.values()) {
            *p -= learning_rate * g;
        }
        if !next.is_finite() {
            return Err(Error::numerical("parameter update"));
        }
        self.params = next;
        Ok(())
    }

    /// Index of the largest posterior; ties go to the lowest class index.
    pub fn predict_one(&self, x: &[f64]) -> Result<usize> {
        let trace = self.forward(x)?;
        Ok(argmax(&trace.probs))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
