//! Minimal dense network: flat parameter vector, ReLU hidden layers, linear
//! output into softmax cross-entropy, exact backprop for the gradient
//! baseline.
//!
//! The parameter layout is part of the public contract: for each layer in
//! order, the weight matrix in row-major input-major order (entry (i, j) at
//! `i * out_width + j`), followed by the bias vector. Perturbation indices
//! must mean the same coordinate on every machine, so this layout is pinned
//! and tested.
//!
//! Dot products and softmax accumulate in f64; parameters and activations
//! are stored as f32. The transmitted training signal is a single scalar
//! loss per batch, so precision lost here would bias the reconstructed
//! gradient on the server.

use crate::data::Dataset;
use crate::detrand::{GaussStream, PerturbSeed};
use crate::error::{ConfigError, ModelError};

/// Layer widths of a multilayer perceptron, input first, output last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<u32>,
}

impl MlpSpec {
    pub fn new(widths: Vec<u32>) -> Result<Self, ConfigError> {
        if widths.len() < 2 {
            return Err(ConfigError::TooFewLayers);
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(ConfigError::ZeroWidth);
        }
        Ok(MlpSpec { widths })
    }

    pub fn widths(&self) -> &[u32] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0] as usize
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated nonempty") as usize
    }

    /// Total parameter count: sum over layers of weights plus biases.
    pub fn param_count(&self) -> u64 {
        self.widths
            .windows(2)
            .map(|w| w[0] as u64 * w[1] as u64 + w[1] as u64)
            .sum()
    }

    /// (input width, output width, weight offset, bias offset) per layer.
    fn layers(&self) -> impl Iterator<Item = LayerLayout> + '_ {
        let mut offset = 0usize;
        self.widths.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0] as usize, w[1] as usize);
            let layout = LayerLayout {
                fan_in,
                fan_out,
                weights: offset,
                bias: offset + fan_in * fan_out,
            };
            offset = layout.bias + fan_out;
            layout
        })
    }
}

#[derive(Clone, Copy)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

/// Flat f32 parameter vector in the pinned layout, tied to its [`MlpSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f32>,
    spec: MlpSpec,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.param_count() as usize],
            spec: spec.clone(),
        }
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<f32>) -> Result<Self, ModelError> {
        if values.len() as u64 != spec.param_count() {
            return Err(ModelError::ShapeMismatch {
                what: "parameter vector length",
                expected: spec.param_count() as usize,
                got: values.len(),
            });
        }
        Ok(ParamVector {
            values,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// He-initialized parameters: weights N(0, 2 / fan_in) from the
/// deterministic stream (one stream, layers in order), biases zero.
pub fn init_params(spec: &MlpSpec, seed: &PerturbSeed) -> ParamVector {
    let mut params = ParamVector::zeros(spec);
    let mut stream = GaussStream::new(seed, 1.0).expect("unit sigma is valid");
    for layer in spec.layers() {
        let std = (2.0 / layer.fan_in as f64).sqrt();
        let weights = &mut params.values[layer.weights..layer.bias];
        stream.fill(weights);
        for w in weights {
            *w = (*w as f64 * std) as f32;
        }
    }
    params
}

/// Mini-batch of flattened inputs with one label per row.
#[derive(Clone, Debug)]
pub struct Batch {
    width: usize,
    inputs: Vec<f32>,
    labels: Vec<u8>,
}

impl Batch {
    pub fn new(width: usize, inputs: Vec<f32>, labels: Vec<u8>) -> Result<Self, ModelError> {
        if labels.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if inputs.len() != labels.len() * width {
            return Err(ModelError::ShapeMismatch {
                what: "batch input length",
                expected: labels.len() * width,
                got: inputs.len(),
            });
        }
        Ok(Batch {
            width,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }
}

/// Reusable forward-pass scratch; one per worker thread.
struct Scratch {
    /// Post-activation f32 buffers, ping-ponged between layers.
    act: [Vec<f32>; 2],
    /// f64 pre-activation accumulator for the current layer.
    acc: Vec<f64>,
}

impl Scratch {
    fn new() -> Self {
        Scratch {
            act: [Vec::new(), Vec::new()],
            acc: Vec::new(),
        }
    }
}

/// Runs the layers up to the logits, which are left in `scratch.acc` as f64.
fn forward_logits(params: &ParamVector, input: &[f32], scratch: &mut Scratch) {
    let spec = &params.spec;
    let n_layers = spec.widths.len() - 1;
    let mut cur = 0usize;
    scratch.act[cur].clear();
    scratch.act[cur].extend_from_slice(input);
    for (l, layer) in spec.layers().enumerate() {
        let weights = &params.values[layer.weights..layer.bias];
        let bias = &params.values[layer.bias..layer.bias + layer.fan_out];
        let acc = &mut scratch.acc;
        acc.clear();
        acc.extend(bias.iter().map(|&b| b as f64));
        for (i, &a) in scratch.act[cur].iter().enumerate() {
            // Zero activations contribute exactly zero; skipping them is a
            // large win on sparse pixel data and ReLU outputs.
            if a != 0.0 {
                let a = a as f64;
                let row = &weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (s, &w) in acc.iter_mut().zip(row) {
                    *s += a * w as f64;
                }
            }
        }
        if l + 1 < n_layers {
            let next = cur ^ 1;
            let (acts, acc) = (&mut scratch.act, &scratch.acc);
            acts[next].clear();
            // Branch instead of max() so negative zero also maps to +0.0.
            acts[next].extend(acc.iter().map(|&v| if v > 0.0 { v as f32 } else { 0.0 }));
            cur = next;
        }
    }
}

fn check_batch(params: &ParamVector, batch: &Batch) -> Result<(), ModelError> {
    if batch.width != params.spec.input_width() {
        return Err(ModelError::ShapeMismatch {
            what: "batch input width",
            expected: params.spec.input_width(),
            got: batch.width,
        });
    }
    let classes = params.spec.output_width();
    for i in 0..batch.len() {
        if batch.label(i) as usize >= classes {
            return Err(ModelError::ShapeMismatch {
                what: "label value",
                expected: classes,
                got: batch.label(i) as usize,
            });
        }
    }
    Ok(())
}

/// Softmax cross-entropy of f64 logits against a label, max-subtracted for
/// overflow safety. Returns (loss, softmax) with softmax written in place.
fn softmax_loss(logits: &mut [f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        sum += *l;
    }
    // After the loop logits[j] = exp(l_j - m), so the cross-entropy is
    // ln(sum) - (l_label - m) = ln(sum) - ln(logits[label]).
    let loss = sum.ln() - logits[label].ln();
    // Normalize to probabilities for callers that need them.
    for l in logits.iter_mut() {
        *l /= sum;
    }
    loss
}

/// Mean softmax cross-entropy of the batch under `params`.
pub fn forward_loss(params: &ParamVector, batch: &Batch) -> Result<f32, ModelError> {
    check_batch(params, batch)?;
    let mut scratch = Scratch::new();
    Ok(forward_loss_scratch(params, batch, &mut scratch) as f32)
}

fn forward_loss_scratch(params: &ParamVector, batch: &Batch, scratch: &mut Scratch) -> f64 {
    let mut total = 0.0f64;
    for i in 0..batch.len() {
        forward_logits(params, batch.input(i), scratch);
        total += softmax_loss(&mut scratch.acc, batch.label(i) as usize);
    }
    total / batch.len() as f64
}

/// Exact gradient of [`forward_loss`] with respect to `params`, same layout.
pub fn backward(params: &ParamVector, batch: &Batch) -> Result<ParamVector, ModelError> {
    check_batch(params, batch)?;
    let spec = &params.spec;
    let layouts: Vec<LayerLayout> = spec.layers().collect();
    let mut grad = vec![0.0f64; params.len()];
    let mut scratch = Scratch::new();
    // Post-activation values per layer are needed on the way back, so the
    // forward pass here stores them instead of ping-ponging.
    let mut acts: Vec<Vec<f32>> = vec![Vec::new(); layouts.len() + 1];
    let mut delta = Vec::new();
    let mut delta_prev = Vec::new();
    for s in 0..batch.len() {
        acts[0].clear();
        acts[0].extend_from_slice(batch.input(s));
        for (l, layer) in layouts.iter().enumerate() {
            let weights = &params.values[layer.weights..layer.bias];
            let bias = &params.values[layer.bias..layer.bias + layer.fan_out];
            let acc = &mut scratch.acc;
            acc.clear();
            acc.extend(bias.iter().map(|&b| b as f64));
            for (i, &a) in acts[l].iter().enumerate() {
                if a != 0.0 {
                    let a = a as f64;
                    let row = &weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                    for (sum, &w) in acc.iter_mut().zip(row) {
                        *sum += a * w as f64;
                    }
                }
            }
            let last = l + 1 == layouts.len();
            acts[l + 1].clear();
            if last {
                softmax_loss(acc, batch.label(s) as usize);
            } else {
                acts[l + 1].extend(acc.iter().map(|&v| if v > 0.0 { v as f32 } else { 0.0 }));
            }
        }
        // Output delta: softmax minus one-hot.
        delta.clear();
        delta.extend_from_slice(&scratch.acc);
        delta[batch.label(s) as usize] -= 1.0;
        for (l, layer) in layouts.iter().enumerate().rev() {
            let weights = &params.values[layer.weights..layer.bias];
            let (gw, gb) = grad[layer.weights..layer.bias + layer.fan_out]
                .split_at_mut(layer.fan_in * layer.fan_out);
            for (j, &d) in delta.iter().enumerate() {
                gb[j] += d;
            }
            for (i, &a) in acts[l].iter().enumerate() {
                if a != 0.0 {
                    let a = a as f64;
                    let row = &mut gw[i * layer.fan_out..(i + 1) * layer.fan_out];
                    for (g, &d) in row.iter_mut().zip(&delta) {
                        *g += a * d;
                    }
                }
            }
            if l > 0 {
                delta_prev.clear();
                delta_prev.resize(layer.fan_in, 0.0f64);
                for (i, dp) in delta_prev.iter_mut().enumerate() {
                    // ReLU gate: units that were clamped pass no signal.
                    if acts[l][i] != 0.0 {
                        let row = &weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                        *dp = row.iter().zip(&delta).map(|(&w, &d)| w as f64 * d).sum();
                    }
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }
    let n = batch.len() as f64;
    let values = grad.iter().map(|&g| (g / n) as f32).collect();
    Ok(ParamVector {
        values,
        spec: spec.clone(),
    })
}

/// Fraction of dataset rows whose argmax logit matches the label, with ties
/// broken toward the lowest class index.
pub fn accuracy(params: &ParamVector, data: &Dataset) -> Result<f32, ModelError> {
    if data.len() == 0 {
        return Err(ModelError::EmptyDataset);
    }
    if data.width() != params.spec.input_width() {
        return Err(ModelError::ShapeMismatch {
            what: "input width",
            expected: params.spec.input_width(),
            got: data.width(),
        });
    }
    use rayon::prelude::*;
    let rows: Vec<usize> = (0..data.len()).collect();
    let correct: u64 = rows
        .par_chunks(256)
        .map(|chunk| {
            let mut scratch = Scratch::new();
            let mut hits = 0u64;
            for &i in chunk {
                forward_logits(params, data.image(i), &mut scratch);
                let mut best = 0usize;
                for (j, &v) in scratch.acc.iter().enumerate() {
                    if v > scratch.acc[best] {
                        best = j;
                    }
                }
                if best == data.label(i) as usize {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok((correct as f64 / data.len() as f64) as f32)
}

/// Batch evaluation context that reuses scratch buffers across calls; used
/// by the hot training paths. Plain [`forward_loss`] allocates per call.
pub struct Evaluator {
    scratch: Scratch,
}

impl Evaluator {
    pub fn new() -> Self {
        Evaluator {
            scratch: Scratch::new(),
        }
    }

    pub fn loss(&mut self, params: &ParamVector, batch: &Batch) -> Result<f32, ModelError> {
        Ok(self.loss_f64(params, batch)? as f32)
    }

    /// Batch mean before the f32 cast. Antithetic differencing subtracts two
    /// nearly equal losses, so the difference is taken at f64 precision.
    pub(crate) fn loss_f64(&mut self, params: &ParamVector, batch: &Batch) -> Result<f64, ModelError> {
        check_batch(params, batch)?;
        Ok(forward_loss_scratch(params, batch, &mut self.scratch))
    }
}

impl Default for Evaluator {
    fn default() -> Self {
        Self::new()
    }
}
