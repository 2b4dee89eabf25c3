//! Fully connected regression network, circular-MAE and RMSE losses, Adam
//! training with per-epoch exponential decay, and the model file format.
//!
//! Model file (little-endian):
//!
//! ```text
//! "MLPW" | u32 version | u32 L | u32 dims[L + 1] | u8 activation[L]
//! then for each layer: f32 weights[out][in] (row-major), f32 bias[out]
//! ```
//!
//! Parameters live in memory as f64 but every model handed out by this module
//! holds f32-representable values, so saving and loading is lossless.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"MLPW";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CircularMae,
    Rmse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// C = alpha * A B + beta * C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl MlpModel {
    /// Builds a model from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs {
                return Err(Error::ShapeMismatch {
                    expected: l.inputs * l.outputs,
                    got: l.weights.len(),
                });
            }
            if l.bias.len() != l.outputs {
                return Err(Error::ShapeMismatch {
                    expected: l.outputs,
                    got: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::ShapeMismatch {
                    expected: layers[i - 1].outputs,
                    got: l.inputs,
                });
            }
            if !l.weights.iter().chain(&l.bias).all(|x| x.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters flattened layer by layer: weights, then bias.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    fn quantize(&mut self) {
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = round_f32(*w);
            }
        }
    }

    fn check_input(&self, inputs: &[f64], rows: usize) -> Result<()> {
        let want = rows * self.input_width();
        if inputs.len() != want {
            return Err(Error::ShapeMismatch {
                expected: want,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    /// Row-major batch forward pass: `rows x dims[0]` in, `rows x dims[L]` out.
    pub fn forward(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check_input(inputs, rows)?;
        let mut acts = Vec::new();
        self.forward_into(inputs, rows, &mut acts);
        Ok(acts.pop().unwrap())
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input, 1)
    }

    /// Fills `acts[l]` with the post-activation output of layer `l`.
    fn forward_into(&self, inputs: &[f64], rows: usize, acts: &mut Vec<Vec<f64>>) {
        acts.resize_with(self.layers.len(), Vec::new);
        for (li, l) in self.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(li);
            let x: &[f64] = if li == 0 { inputs } else { &done[li - 1] };
            let z = &mut rest[0];
            z.clear();
            z.reserve(rows * l.outputs);
            for _ in 0..rows {
                z.extend_from_slice(&l.bias);
            }
            // Z += X W^T
            gemm(rows, l.inputs, l.outputs, x, (l.inputs, 1), &l.weights, (1, l.inputs), 1.0, z);
            if l.activation == Activation::Relu {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    /// Mean per-sample loss over a batch and its gradient with respect to
    /// every parameter, in [`MlpModel::params`] order.
    pub fn loss_and_gradient(&self, inputs: &[f64], targets: &[f64], rows: usize, loss: LossKind) -> Result<(f64, Vec<f64>)> {
        self.check_input(inputs, rows)?;
        if targets.len() != rows * self.output_width() {
            return Err(Error::ShapeMismatch {
                expected: rows * self.output_width(),
                got: targets.len(),
            });
        }
        let mut ws = Workspace::default();
        let value = ws.backprop(self, inputs, targets, rows, loss);
        Ok((value, ws.grads.concat()))
    }
}

/// Glorot-uniform weights, zero biases, ReLU hidden layers and a linear output.
pub fn init_model(dims: &[usize], seed: u64) -> Result<MlpModel> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!("model needs at least two dims (got {})", dims.len())));
    }
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(Error::invalid(format!("model dim {i} is zero")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Layer {
                inputs: fan_in,
                outputs: fan_out,
                weights: (0..fan_in * fan_out)
                    .map(|_| round_f32(rng.gen_range(-limit..limit)))
                    .collect(),
                bias: vec![0.0; fan_out],
                activation: if i == last { Activation::Linear } else { Activation::Relu },
            }
        })
        .collect();
    MlpModel::from_layers(layers)
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch { expected: 1, got: 0 });
    }
    Ok(())
}

/// Shortest angular distance, in [0, pi].
pub fn angular_distance(delta: f64) -> f64 {
    let t = delta.rem_euclid(2.0 * PI);
    t.min(2.0 * PI - t)
}

/// Subgradient of [`angular_distance`]. Exact ties at pi take the
/// non-wrapped branch, d|delta|/d delta.
pub fn angular_distance_slope(delta: f64) -> f64 {
    let t = delta.rem_euclid(2.0 * PI);
    if t == 0.0 {
        0.0
    } else if t < PI {
        1.0
    } else if t > PI {
        -1.0
    } else {
        delta.signum()
    }
}

/// Circular mean absolute error in radians.
pub fn cmae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(cmae_unchecked(pred, target))
}

fn cmae_unchecked(pred: &[f64], target: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(target).map(|(p, t)| angular_distance(p - t)).sum();
    s / pred.len() as f64
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(rmse_unchecked(pred, target))
}

fn rmse_unchecked(pred: &[f64], target: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    (s / pred.len() as f64).sqrt()
}

pub fn loss_value(kind: LossKind, pred: &[f64], target: &[f64]) -> Result<f64> {
    match kind {
        LossKind::CircularMae => cmae(pred, target),
        LossKind::Rmse => rmse(pred, target),
    }
}

/// Writes `scale * dJ/dpred` into `grad` and returns J for one sample.
fn sample_loss_grad(kind: LossKind, pred: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let n = pred.len() as f64;
    match kind {
        LossKind::CircularMae => {
            for ((g, p), t) in grad.iter_mut().zip(pred).zip(target) {
                *g = scale * angular_distance_slope(p - t) / n;
            }
            cmae_unchecked(pred, target)
        }
        LossKind::Rmse => {
            let j = rmse_unchecked(pred, target);
            for ((g, p), t) in grad.iter_mut().zip(pred).zip(target) {
                *g = if j > 0.0 { scale * (p - t) / (n * j) } else { 0.0 };
            }
            j
        }
    }
}

/// Scratch buffers reused across batches.
#[derive(Default)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    /// Per layer: weights then bias.
    grads: Vec<Vec<f64>>,
}

impl Workspace {
    fn backprop(&mut self, model: &MlpModel, x: &[f64], y: &[f64], rows: usize, kind: LossKind) -> f64 {
        model.forward_into(x, rows, &mut self.acts);
        let out_w = model.output_width();
        let out = self.acts.last().unwrap();
        self.delta.clear();
        self.delta.resize(rows * out_w, 0.0);
        let scale = 1.0 / rows as f64;
        let mut total = 0.0;
        for r in 0..rows {
            let s = r * out_w..(r + 1) * out_w;
            total += sample_loss_grad(kind, &out[s.clone()], &y[s.clone()], scale, &mut self.delta[s]);
        }

        self.grads.resize_with(model.layers.len(), Vec::new);
        for li in (0..model.layers.len()).rev() {
            let l = &model.layers[li];
            let input: &[f64] = if li == 0 { x } else { &self.acts[li - 1] };
            if l.activation == Activation::Relu {
                for (d, a) in self.delta.iter_mut().zip(&self.acts[li]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut self.grads[li];
            g.clear();
            g.resize(l.param_count(), 0.0);
            let (gw, gb) = g.split_at_mut(l.weights.len());
            // dW = delta^T X
            gemm(l.outputs, rows, l.inputs, &self.delta, (1, l.outputs), input, (l.inputs, 1), 0.0, gw);
            for r in 0..rows {
                for (b, d) in gb.iter_mut().zip(&self.delta[r * l.outputs..(r + 1) * l.outputs]) {
                    *b += d;
                }
            }
            if li > 0 {
                // dX = delta W
                self.delta_prev.clear();
                self.delta_prev.resize(rows * l.inputs, 0.0);
                gemm(rows, l.outputs, l.inputs, &self.delta, (l.outputs, 1), &l.weights, (l.inputs, 1), 0.0, &mut self.delta_prev);
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
        total / rows as f64
    }
}

/// Row-major inputs and targets of equal record count.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_width: usize,
    pub target_width: usize,
}

impl Samples {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, input_width: usize, target_width: usize) -> Result<Self> {
        if input_width == 0 || target_width == 0 {
            return Err(Error::invalid("sample widths must be positive"));
        }
        let rows = inputs.len() / input_width;
        if inputs.len() % input_width != 0 || targets.len() != rows * target_width {
            return Err(Error::ShapeMismatch {
                expected: rows * target_width,
                got: targets.len(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            input_width,
            target_width,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_width
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_width..(i + 1) * self.input_width]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_width..(i + 1) * self.target_width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        Self {
            epochs: 200,
            batch_size: 1000,
            learning_rate: 1e-3,
            decay: 0.97,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            loss,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs < 1 {
            v.push("training.epochs must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            v.push("training.batch_size must be >= 1".to_string());
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            v.push(format!("training.decay must lie in (0, 1] (got {})", self.decay));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("training.learning_rate must be >= 0 (got {})", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            v.push("training moment decays must lie in [0, 1)".to_string());
        }
        if !(self.epsilon > 0.0) {
            v.push("training.epsilon must be > 0".to_string());
        }
        v
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: LossKind,
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        *self.train_loss.last().unwrap_or(&f64::NAN)
    }

    pub fn final_test_loss(&self) -> f64 {
        *self.test_loss.last().unwrap_or(&f64::NAN)
    }

    /// `epoch,learning_rate,train_loss,test_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,learning_rate,train_loss,test_loss\n");
        for (i, (tr, te)) in self.train_loss.iter().zip(&self.test_loss).enumerate() {
            s.push_str(&format!("{},{:e},{},{}\n", i + 1, self.learning_rates[i], tr, te));
        }
        s
    }
}

/// Mean per-sample loss of `model` over `data`, evaluated in chunks.
pub fn evaluate(model: &MlpModel, data: &Samples, loss: LossKind) -> Result<f64> {
    if data.input_width != model.input_width() || data.target_width != model.output_width() {
        return Err(Error::ShapeMismatch {
            expected: model.input_width(),
            got: data.input_width,
        });
    }
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    const CHUNK: usize = 2048;
    let mut acts = Vec::new();
    let mut total = 0.0;
    let mut start = 0;
    while start < data.len() {
        let rows = CHUNK.min(data.len() - start);
        let x = &data.inputs[start * data.input_width..(start + rows) * data.input_width];
        model.forward_into(x, rows, &mut acts);
        let out = acts.last().unwrap();
        let w = data.target_width;
        for r in 0..rows {
            let t = data.target(start + r);
            let p = &out[r * w..(r + 1) * w];
            total += match loss {
                LossKind::CircularMae => cmae_unchecked(p, t),
                LossKind::Rmse => rmse_unchecked(p, t),
            };
        }
        start += rows;
    }
    Ok(total / data.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

/// Mini-batch Adam training. The returned model is rounded to f32.
pub fn train(model: &MlpModel, train_set: &Samples, test_set: &Samples, config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    for s in [train_set, test_set] {
        if s.input_width != model.input_width() {
            return Err(Error::ShapeMismatch {
                expected: model.input_width(),
                got: s.input_width,
            });
        }
        if s.target_width != model.output_width() {
            return Err(Error::ShapeMismatch {
                expected: model.output_width(),
                got: s.target_width,
            });
        }
    }
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let started = Instant::now();
    let mut model = model.clone();
    let mut adam = Adam {
        m: vec![0.0; model.param_count()],
        v: vec![0.0; model.param_count()],
        step: 0,
    };
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (iw, tw) = (train_set.input_width, train_set.target_width);
    let mut bx = Vec::with_capacity(config.batch_size * iw);
    let mut by = Vec::with_capacity(config.batch_size * tw);
    let mut report = TrainReport {
        loss: config.loss,
        train_loss: Vec::with_capacity(config.epochs),
        test_loss: Vec::with_capacity(config.epochs),
        learning_rates: Vec::with_capacity(config.epochs),
        wall_time_s: 0.0,
    };

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(train_set.input(i));
                by.extend_from_slice(train_set.target(i));
            }
            let value = ws.backprop(&model, &bx, &by, chunk.len(), config.loss);
            let grads_finite = ws.grads.iter().flatten().all(|g| g.is_finite());
            if !value.is_finite() || !grads_finite {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            epoch_total += value * chunk.len() as f64;
            adam_step(&mut model, &ws.grads, &mut adam, lr, config);
        }
        report.learning_rates.push(lr);
        report.train_loss.push(epoch_total / train_set.len() as f64);
        report.test_loss.push(evaluate(&model, test_set, config.loss)?);
    }
    model.quantize();
    if let Some(last) = report.test_loss.last_mut() {
        *last = evaluate(&model, test_set, config.loss)?;
    }
    if !model.params().iter().all(|p| p.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: config.epochs - 1,
            batch: 0,
        });
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((model, report))
}

fn adam_step(model: &mut MlpModel, grads: &[Vec<f64>], adam: &mut Adam, lr: f64, c: &TrainConfig) {
    adam.step += 1;
    let bc1 = 1.0 - c.beta1.powi(adam.step);
    let bc2 = 1.0 - c.beta2.powi(adam.step);
    let mut k = 0;
    for (layer, g) in model.layers.iter_mut().zip(grads) {
        for (p, gi) in layer.weights.iter_mut().chain(layer.bias.iter_mut()).zip(g) {
            let m = &mut adam.m[k];
            let v = &mut adam.v[k];
            *m = c.beta1 * *m + (1.0 - c.beta1) * gi;
            *v = c.beta2 * *v + (1.0 - c.beta2) * gi * gi;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            k += 1;
        }
    }
}

pub fn model_to_bytes(model: &MlpModel) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::with_capacity(16 + 4 * dims.len() + 4 * model.param_count());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    out.extend(model.layers.iter().map(|l| l.activation.tag()));
    for p in model.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<MlpModel> {
    let corrupt = |why: &str| Error::corrupt(path, why);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MODEL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_le = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_le(take(4)?);
    if version != MODEL_VERSION {
        return Err(Error::IncompatibleVersion {
            path: path.to_path_buf(),
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let count = u32_le(take(4)?) as usize;
    if count == 0 || count > 1024 {
        return Err(corrupt("implausible layer count"));
    }
    let mut dims = Vec::with_capacity(count + 1);
    for _ in 0..=count {
        dims.push(u32_le(take(4)?) as usize);
    }
    let mut acts = Vec::with_capacity(count);
    for &t in take(count)? {
        acts.push(Activation::from_tag(t).ok_or_else(|| corrupt("unknown activation tag"))?);
    }
    let mut layers = Vec::with_capacity(count);
    for (i, act) in acts.into_iter().enumerate() {
        let (fan_in, fan_out) = (dims[i], dims[i + 1]);
        let mut floats = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n.checked_mul(4).ok_or_else(|| corrupt("layer too large"))?)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect())
        };
        let weights = floats(fan_in * fan_out)?;
        let bias = floats(fan_out)?;
        layers.push(Layer {
            inputs: fan_in,
            outputs: fan_out,
            weights,
            bias,
            activation: act,
        });
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes after parameters"));
    }
    MlpModel::from_layers(layers).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    model_from_bytes(&fs::read(path)?, path)
}
