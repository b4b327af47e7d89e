//! Softmax branch classifier: standardization, optional ReLU hidden layer,
//! minibatch SGD on cross-entropy with weight decay.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, FusionDescriptor, GateError, GateSample};
use crate::ingest::write_atomic;
use crate::preprocess::BranchId;

pub const MODEL_SCHEMA: &str = "cmbench.gate-model.v1";
pub const NUM_CLASSES: usize = 4;
/// Features with a smaller spread are left unscaled.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// 0 trains a plain linear softmax.
    pub hidden_width: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for GateHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            hidden_width: 0,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl GateHyper {
    pub fn validate(&self) -> Result<(), GateError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(GateError::InvalidHyper("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(GateError::InvalidHyper("batch size must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(GateError::InvalidHyper("weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Dense layer `out = W·in + b` with `W` stored row-major, `rows × cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        Self {
            rows,
            cols,
            weights,
            bias: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let w = &self.weights[r * self.cols..(r + 1) * self.cols];
                self.bias[r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(xs: &[&[f64]]) -> Self {
        let dim = xs.first().map_or(0, |x| x.len());
        let n = xs.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > MIN_STD { sd } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Trained branch selector. Owns its input normalization: callers always pass
/// raw fusion descriptors, so a descriptor can never be standardized twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub schema: String,
    pub provider: String,
    /// Embedding dimension; the model consumes descriptors of `4 * dim`.
    pub dim: usize,
    pub normalization: Normalization,
    pub layers: Vec<Layer>,
    pub class_order: [u8; NUM_CLASSES],
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matcher_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub branch: BranchId,
    pub probabilities: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Mean cross-entropy over the training set after the last epoch.
    pub final_loss: f64,
    pub epochs: usize,
    pub absent_classes: Vec<BranchId>,
}

impl GateModel {
    /// Linear model with all weights zero: uniform output for every input.
    pub fn zeros(provider: &str, dim: usize) -> Self {
        Self {
            schema: MODEL_SCHEMA.into(),
            provider: provider.into(),
            dim,
            normalization: Normalization::identity(4 * dim),
            layers: vec![Layer::zeros(NUM_CLASSES, 4 * dim)],
            class_order: [0, 1, 2, 3],
            seed: 0,
            matcher_id: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        4 * self.dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn validate(&self) -> Result<(), GateError> {
        let bad = |m: &str| Err(GateError::InvalidModel(m.into()));
        if self.schema != MODEL_SCHEMA {
            return bad(&format!("unexpected schema `{}`", self.schema));
        }
        if self.class_order != [0, 1, 2, 3] {
            return bad("class order must follow branch codes 0..3");
        }
        if self.layers.is_empty() || self.layers.len() > 2 {
            return bad("expected one or two layers");
        }
        let n = self.input_dim();
        if self.normalization.mean.len() != n || self.normalization.std.len() != n {
            return bad("normalization length does not match 4 * dim");
        }
        if self.normalization.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("normalization std must be positive");
        }
        let mut cols = n;
        for l in &self.layers {
            if l.cols != cols || l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return bad("layer shapes do not chain");
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad("non-finite parameter");
            }
            cols = l.rows;
        }
        if cols != NUM_CLASSES {
            return bad("last layer must produce 4 logits");
        }
        Ok(())
    }

    pub fn logits(&self, descriptor: &FusionDescriptor) -> Result<Vec<f64>, GateError> {
        if descriptor.dim() != self.input_dim() {
            return Err(GateError::DimensionMismatch {
                expected: self.input_dim(),
                got: descriptor.dim(),
            });
        }
        let x = self.normalization.apply(descriptor.values());
        Ok(forward(&self.layers, &x).logits)
    }

    pub fn predict(&self, descriptor: &FusionDescriptor) -> Result<Prediction, GateError> {
        let p = softmax(&self.logits(descriptor)?);
        let probabilities = [p[0], p[1], p[2], p[3]];
        Ok(Prediction {
            branch: BranchId::ALL[argmax_lowest(&probabilities)],
            probabilities,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GateError> {
        let m: Self = serde_json::from_str(text).map_err(|e| GateError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, GateError> {
        let text = fs::read_to_string(path).map_err(|e| GateError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), GateError> {
        write_atomic(path, self.to_json().as_bytes()).map_err(|e| GateError::Io(e.to_string()))
    }
}

pub fn predict_branch(model: &GateModel, descriptor: &FusionDescriptor) -> Result<Prediction, GateError> {
    model.predict(descriptor)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(z)[y]`, computed stably.
fn cross_entropy(z: &[f64], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

struct Forward {
    /// Pre-activation of the hidden layer, if any.
    hidden_pre: Option<Vec<f64>>,
    hidden: Option<Vec<f64>>,
    logits: Vec<f64>,
}

fn forward(layers: &[Layer], x: &[f64]) -> Forward {
    match layers {
        [out] => Forward {
            hidden_pre: None,
            hidden: None,
            logits: out.forward(x),
        },
        [hid, out] => {
            let pre = hid.forward(x);
            let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let logits = out.forward(&h);
            Forward {
                hidden_pre: Some(pre),
                hidden: Some(h),
                logits,
            }
        }
        _ => panic!("gate model has one or two layers"),
    }
}

/// Objective on already-standardized inputs: mean cross-entropy plus
/// `weight_decay / 2 · Σ w²` over weights (biases are not decayed).
/// Returns the loss and a gradient with the same shapes as `layers`.
pub fn loss_and_grad(layers: &[Layer], xs: &[&[f64]], ys: &[usize], weight_decay: f64) -> (f64, Vec<Layer>) {
    let mut grads: Vec<Layer> = layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect();
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let f = forward(layers, x);
        loss += cross_entropy(&f.logits, y);
        let mut dz = softmax(&f.logits);
        dz[y] -= 1.0;
        dz.iter_mut().for_each(|v| *v /= n);

        let last = layers.len() - 1;
        let input_to_last: &[f64] = f.hidden.as_deref().unwrap_or(x);
        accumulate(&mut grads[last], &dz, input_to_last);

        if let (Some(pre), true) = (&f.hidden_pre, last == 1) {
            let out = &layers[1];
            let mut dh = vec![0.0; out.cols];
            for (r, d) in dz.iter().enumerate() {
                let w = &out.weights[r * out.cols..(r + 1) * out.cols];
                for (g, wv) in dh.iter_mut().zip(w) {
                    *g += d * wv;
                }
            }
            for (g, p) in dh.iter_mut().zip(pre) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
            accumulate(&mut grads[0], &dh, x);
        }
    }
    loss /= n;
    for (l, g) in layers.iter().zip(grads.iter_mut()) {
        loss += 0.5 * weight_decay * l.weights.iter().map(|w| w * w).sum::<f64>();
        for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
            *gw += weight_decay * w;
        }
    }
    (loss, grads)
}

fn accumulate(g: &mut Layer, delta: &[f64], input: &[f64]) {
    for (r, d) in delta.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        g.bias[r] += d;
        let row = &mut g.weights[r * g.cols..(r + 1) * g.cols];
        for (w, v) in row.iter_mut().zip(input) {
            *w += d * v;
        }
    }
}

fn mean_cross_entropy(layers: &[Layer], xs: &[&[f64]], ys: &[usize]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| cross_entropy(&forward(layers, x).logits, y))
        .sum();
    total / xs.len().max(1) as f64
}

/// Fits standardization on `samples`, then runs seeded minibatch SGD.
/// Single-threaded: the visiting order is fixed by the seed alone.
pub fn train_gate(
    samples: &[GateSample],
    hyper: &GateHyper,
    provider: &str,
) -> Result<(GateModel, TrainReport), GateError> {
    hyper.validate()?;
    let first = samples.first().ok_or(GateError::NoSamples)?;
    let input_dim = first.descriptor.dim();
    if let Some(s) = samples.iter().find(|s| s.descriptor.dim() != input_dim) {
        return Err(GateError::DimensionMismatch {
            expected: input_dim,
            got: s.descriptor.dim(),
        });
    }

    let absent_classes: Vec<BranchId> = BranchId::ALL
        .iter()
        .copied()
        .filter(|b| !samples.iter().any(|s| s.label == *b))
        .collect();
    if !absent_classes.is_empty() {
        log::warn!("gate training set has no samples for {absent_classes:?}");
    }

    let raw: Vec<&[f64]> = samples.iter().map(|s| s.descriptor.values()).collect();
    let normalization = Normalization::fit(&raw);
    let std_inputs: Vec<Vec<f64>> = raw.iter().map(|x| normalization.apply(x)).collect();
    let xs: Vec<&[f64]> = std_inputs.iter().map(Vec::as_slice).collect();
    let ys: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut layers = if hyper.hidden_width > 0 {
        vec![
            Layer::glorot(hyper.hidden_width, input_dim, &mut rng),
            Layer::glorot(NUM_CLASSES, hyper.hidden_width, &mut rng),
        ]
    } else {
        vec![Layer::glorot(NUM_CLASSES, input_dim, &mut rng)]
    };

    let initial_loss = mean_cross_entropy(&layers, &xs, &ys);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i]).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grads) = loss_and_grad(&layers, &bx, &by, hyper.weight_decay);
            if !loss.is_finite() {
                return Err(GateError::NonFiniteLoss { epoch, batch, loss });
            }
            for (l, g) in layers.iter_mut().zip(&grads) {
                for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                    *w -= hyper.learning_rate * d;
                }
                for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                    *b -= hyper.learning_rate * d;
                }
            }
        }
    }
    let final_loss = mean_cross_entropy(&layers, &xs, &ys);
    if !final_loss.is_finite() {
        return Err(GateError::NonFiniteLoss {
            epoch: hyper.epochs,
            batch: 0,
            loss: final_loss,
        });
    }

    let model = GateModel {
        schema: MODEL_SCHEMA.into(),
        provider: provider.into(),
        dim: input_dim / 4,
        normalization,
        layers,
        class_order: [0, 1, 2, 3],
        seed: hyper.seed,
        matcher_id: None,
    };
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            epochs: hyper.epochs,
            absent_classes,
        },
    ))
}
