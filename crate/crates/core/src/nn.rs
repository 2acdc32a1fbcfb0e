//! Dense feed-forward classifier with weighted softmax cross-entropy.
//!
//! Layout: weights of layer `l` are stored `dims[l] x dims[l + 1]` (input rows,
//! output columns) and activations are `batch x dim`, so a layer is
//! `z = a · W + b`. Hidden layers apply LeakyReLU followed by inverted
//! dropout; the output layer is linear and produces logits.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    leaky_slope: f64,
    dropout_rate: f64,
}

/// Gradients (or optimizer moments) with the same shapes as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Grads {
    fn zeros_like(model: &Mlp) -> Self {
        Grads {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

/// One mini-batch of weighted, grouped samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub sample_weights: Vec<f64>,
    pub group_ids: Vec<usize>,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n || self.sample_weights.len() != n || self.group_ids.len() != n {
            return Err(Error::Shape(format!(
                "batch lengths differ: features {n}, labels {}, weights {}, groups {}",
                self.labels.len(),
                self.sample_weights.len(),
                self.group_ids.len()
            )));
        }
        if n == 0 {
            return Err(Error::input("empty batch"));
        }
        if let Some(w) = self.sample_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::input(format!("sample weight {w} is not positive and finite")));
        }
        Ok(())
    }
}

struct Trace {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    hidden_pre: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers per hidden layer, if dropout was active.
    masks: Vec<Option<Array2<f64>>>,
    logits: Array2<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn new(layer_dims: &[usize], leaky_slope: f64, dropout_rate: f64, seed: u64) -> Result<Self> {
        validate_arch(layer_dims, leaky_slope, dropout_rate)?;
        let mut rng = rng::stream(seed, Purpose::Init, 0, 0);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                bound * (2.0 * rng.random::<f64>() - 1.0)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            leaky_slope,
            dropout_rate,
        })
    }

    /// Build from explicit parameters, checking shapes and finiteness.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        leaky_slope: f64,
        dropout_rate: f64,
    ) -> Result<Self> {
        validate_arch(&layer_dims, leaky_slope, dropout_rate)?;
        if weights.len() != layer_dims.len() - 1 || biases.len() != weights.len() {
            return Err(Error::Shape("layer count does not match layer_dims".into()));
        }
        for (l, pair) in layer_dims.windows(2).enumerate() {
            if weights[l].dim() != (pair[0], pair[1]) || biases[l].len() != pair[1] {
                return Err(Error::Shape(format!(
                    "layer {l}: expected {}x{} weights and {} biases",
                    pair[0], pair[1], pair[1]
                )));
            }
            if weights[l].iter().chain(biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l, what: "parameter" });
            }
        }
        Ok(Mlp {
            layer_dims,
            weights,
            biases,
            leaky_slope,
            dropout_rate,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_width(&self, features: &ArrayView2<f64>) -> Result<()> {
        if features.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn run(&self, features: ArrayView2<f64>, mut dropout: Option<&mut dyn RngCore>) -> Trace {
        let last = self.n_layers() - 1;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut current = features.to_owned();
        for l in 0..last {
            let z = current.dot(&self.weights[l]) + &self.biases[l];
            let slope = self.leaky_slope;
            let mut a = z.mapv(|v| if v > 0.0 { v } else { slope * v });
            let mask = match dropout.as_deref_mut() {
                Some(rng) if self.dropout_rate > 0.0 => {
                    let keep = 1.0 - self.dropout_rate;
                    let scale = 1.0 / keep;
                    let p = self.dropout_rate;
                    let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            scale
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            inputs.push(std::mem::replace(&mut current, a));
            hidden_pre.push(z);
            masks.push(mask);
        }
        let logits = current.dot(&self.weights[last]) + &self.biases[last];
        inputs.push(current);
        Trace {
            inputs,
            hidden_pre,
            masks,
            logits,
        }
    }

    /// Logits for a batch. Dropout is applied only when `train_rng` is given.
    pub fn forward(&self, features: ArrayView2<f64>, train_rng: Option<&mut dyn RngCore>) -> Result<Array2<f64>> {
        self.check_width(&features)?;
        Ok(self.run(features, train_rng).logits)
    }

    /// Normalized weighted loss and its exact gradient.
    ///
    /// `dropout` supplies the mask stream; `None` runs the network in eval mode,
    /// which keeps the loss a deterministic function of the parameters.
    pub fn loss_and_grads(&self, batch: &Batch, dropout: Option<&mut dyn RngCore>) -> Result<(f64, Grads)> {
        self.loss_and_grads_with(batch, dropout, |_| Ok(batch.sample_weights.clone()))
    }

    /// Like [`Mlp::loss_and_grads`], but the sample weights are chosen by
    /// `reweight` after the forward pass, from the per-sample losses of that
    /// same pass. `batch.sample_weights` is ignored.
    pub fn loss_and_grads_with<F>(
        &self,
        batch: &Batch,
        dropout: Option<&mut dyn RngCore>,
        reweight: F,
    ) -> Result<(f64, Grads)>
    where
        F: FnOnce(&[f64]) -> Result<Vec<f64>>,
    {
        batch.validate()?;
        self.check_width(&batch.features.view())?;
        let trace = self.run(batch.features.view(), dropout);
        let unit = vec![1.0; batch.labels.len()];
        let (_, per_sample) = weighted_ce_loss(&trace.logits, &batch.labels, &unit)?;
        let weights = reweight(&per_sample)?;
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::input(format!("sample weight {w} is not positive and finite")));
        }
        let (loss, _, mut delta) = weighted_ce_with_grad(&trace.logits, &batch.labels, &weights)?;

        let mut grads = Grads::zeros_like(self);
        for l in (0..self.n_layers()).rev() {
            grads.weights[l] = trace.inputs[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if grads.weights[l].iter().chain(grads.biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l, what: "gradient" });
            }
            if l == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.weights[l].t());
            if let Some(mask) = &trace.masks[l - 1] {
                upstream *= mask;
            }
            let slope = self.leaky_slope;
            Zip::from(&mut upstream)
                .and(&trace.hidden_pre[l - 1])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d *= slope;
                    }
                });
            delta = upstream;
        }
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layer_dims: self.layer_dims.clone(),
            leaky_slope: self.leaky_slope,
            dropout_rate: self.dropout_rate,
            weights: self
                .weights
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut weights = Vec::with_capacity(ckpt.weights.len());
        for (l, rows) in ckpt.weights.into_iter().enumerate() {
            let n_rows = rows.len();
            let n_cols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != n_cols) {
                return Err(Error::Shape(format!("layer {l}: ragged weight rows")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let w = Array2::from_shape_vec((n_rows, n_cols), flat).map_err(|e| Error::Shape(e.to_string()))?;
            weights.push(w);
        }
        let biases = ckpt.biases.into_iter().map(Array1::from).collect();
        Mlp::from_parts(ckpt.layer_dims, weights, biases, ckpt.leaky_slope, ckpt.dropout_rate)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::json::write_file(path, &self.to_checkpoint(), false)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Mlp::from_checkpoint(crate::json::read_file(path)?)
    }
}

fn validate_arch(layer_dims: &[usize], leaky_slope: f64, dropout_rate: f64) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::config(format!("need at least 2 layer dims, got {layer_dims:?}")));
    }
    if layer_dims.contains(&0) {
        return Err(Error::config(format!("layer dims must be positive, got {layer_dims:?}")));
    }
    if !(leaky_slope > 0.0 && leaky_slope < 1.0) {
        return Err(Error::config(format!("leaky slope {leaky_slope} outside (0, 1)")));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::config(format!("dropout rate {dropout_rate} outside [0, 1)")));
    }
    Ok(())
}

/// On-disk model format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    /// Per layer, row-major: `weights[l][i][j]` maps input `i` to output `j`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

/// Weighted softmax cross-entropy: returns `(Σ wᵢ·Lᵢ / Σ wᵢ, per-sample Lᵢ)`.
pub fn weighted_ce_loss(logits: &Array2<f64>, labels: &[usize], sample_weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (loss, per_sample, _) = weighted_ce_with_grad(logits, labels, sample_weights)?;
    Ok((loss, per_sample))
}

fn weighted_ce_with_grad(
    logits: &Array2<f64>,
    labels: &[usize],
    sample_weights: &[f64],
) -> Result<(f64, Vec<f64>, Array2<f64>)> {
    let n = logits.nrows();
    if labels.len() != n || sample_weights.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows, {} labels, {} weights",
            labels.len(),
            sample_weights.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let total_weight: f64 = sample_weights.iter().sum();
    if !(total_weight > 0.0 && total_weight.is_finite()) {
        return Err(Error::input("sample weights must sum to a positive finite value"));
    }
    let classes = logits.ncols();
    let mut per_sample = Vec::with_capacity(n);
    let mut delta = Array2::zeros((n, classes));
    let mut weighted_sum = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let y = labels[i];
        if y >= classes {
            return Err(Error::input(format!("label {y} out of range for {classes} classes")));
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let loss = lse - row[y];
        per_sample.push(loss);
        weighted_sum += sample_weights[i] * loss;
        let scale = sample_weights[i] / total_weight;
        for (c, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            delta[[i, c]] = scale * (p - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((weighted_sum / total_weight, per_sample, delta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    PlainGradientDescent,
    AdaptiveMoment,
}

/// First-order optimizer state. Moment buffers mirror the model's shapes.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: Grads,
    second: Grads,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &Mlp) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {learning_rate} must be finite and >= 0")));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Grads::zeros_like(model),
            second: Grads::zeros_like(model),
        })
    }

    pub fn adam(learning_rate: f64, model: &Mlp) -> Result<Self> {
        Optimizer::new(OptimizerKind::AdaptiveMoment, learning_rate, model)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, model: &mut Mlp, grads: &Grads) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::PlainGradientDescent => {
                for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                    w.scaled_add(-lr, g);
                }
                for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-lr, g);
                }
            }
            OptimizerKind::AdaptiveMoment => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for l in 0..model.weights.len() {
                    Zip::from(&mut model.weights[l])
                        .and(&grads.weights[l])
                        .and(&mut self.first.weights[l])
                        .and(&mut self.second.weights[l])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    Zip::from(&mut model.biases[l])
                        .and(&grads.biases[l])
                        .and(&mut self.first.biases[l])
                        .and(&mut self.second.biases[l])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
    }
}

/// One optimizer step on `batch`; returns the batch loss before the update.
pub fn backward_and_step(
    model: &mut Mlp,
    batch: &Batch,
    optimizer: &mut Optimizer,
    dropout: Option<&mut dyn RngCore>,
) -> Result<f64> {
    let (loss, grads) = model.loss_and_grads(batch, dropout)?;
    optimizer.apply(model, &grads);
    Ok(loss)
}

const EVAL_CHUNK: usize = 4096;

/// Eval-mode per-sample losses and correctness (argmax ties go to the lowest class).
pub fn evaluate(model: &Mlp, features: ArrayView2<f64>, labels: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
    model.check_width(&features)?;
    if labels.len() != features.nrows() {
        return Err(Error::Shape(format!("{} rows but {} labels", features.nrows(), labels.len())));
    }
    let mut losses = Vec::with_capacity(labels.len());
    let mut correct = Vec::with_capacity(labels.len());
    let ones = vec![1.0; EVAL_CHUNK];
    for (chunk_idx, chunk) in features.axis_chunks_iter(Axis(0), EVAL_CHUNK).enumerate() {
        let start = chunk_idx * EVAL_CHUNK;
        let chunk_labels = &labels[start..start + chunk.nrows()];
        let logits = model.run(chunk, None).logits;
        let (_, per_sample) = weighted_ce_loss(&logits, chunk_labels, &ones[..chunk.nrows()])?;
        losses.extend(per_sample);
        for (row, &y) in logits.rows().into_iter().zip(chunk_labels) {
            correct.push(argmax(row.as_slice().expect("row-major logits")) == y);
        }
    }
    Ok((losses, correct))
}

/// Index of the largest value; the first index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
