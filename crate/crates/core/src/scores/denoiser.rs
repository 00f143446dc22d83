//! Small fully-connected noise predictor with hand-written reverse mode.
//!
//! Input is `[x_t, sinusoidal(t), one_hot(class)]`, followed by dense hidden
//! layers with a shared activation and a linear output of the data
//! dimension. Hidden activations are exposed so a hidden layer can serve as
//! a guidance feature map; gradients flow back to `x_t` only.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::scores::GmmSpec;
use crate::sde::{forward_noise, NoiseSchedule};

pub const CHECKPOINT_FORMAT: &str = "dap-denoiser";
pub const CHECKPOINT_VERSION: u32 = 1;

const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    // derivative expressed through the pre-activation and the output
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense layer, weights row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![0.0; n_in * n_out], bias: vec![0.0; n_out] }
    }

    fn glorot(n_in: usize, n_out: usize, rng: &mut RngStream) -> Self {
        let scale = (2.0 / (n_in + n_out) as f64).sqrt();
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.normal() * scale).collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// `Wᵀ g`
    fn backward_input(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_in];
        for (row, gi) in self.weights.chunks(self.n_in).zip(g) {
            if *gi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub activation: Activation,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 128, 128], time_dim: 32, activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    dim: usize,
    labels: Vec<usize>,
    time_dim: usize,
    activation: Activation,
    /// Hidden layers followed by the linear output layer.
    layers: Vec<Dense>,
    revision: u64,
}

/// Activations cached by [`DenoiserModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardState {
    revision: u64,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardState {
    pub fn eps(&self) -> &[f64] {
        &self.output
    }

    pub fn hidden_layers(&self) -> &[Vec<f64>] {
        &self.post
    }

    pub fn hidden(&self, layer: usize) -> Result<&[f64]> {
        self.post.get(layer).map(Vec::as_slice).ok_or_else(|| {
            Error::InvalidParameter(format!("hidden layer {layer} does not exist ({} layers)", self.post.len()))
        })
    }
}

pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut emb = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        emb[i] = (t as f64 * freq).sin();
        emb[half + i] = (t as f64 * freq).cos();
    }
    emb
}

impl DenoiserModel {
    pub fn new(dim: usize, labels: Vec<usize>, config: &DenoiserConfig, seed: u64) -> Result<Self> {
        if dim == 0 || labels.is_empty() || config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(Error::InvalidParameter("denoiser needs dim, labels and non-empty hidden widths".into()));
        }
        let mut rng = RngStream::derive(seed, Purpose::Init, 0, 0);
        let mut n_in = dim + config.time_dim + labels.len();
        let mut layers = Vec::new();
        for &w in &config.hidden {
            layers.push(Dense::glorot(n_in, w, &mut rng));
            n_in = w;
        }
        layers.push(Dense::glorot(n_in, dim, &mut rng));
        Ok(Self { dim, labels, time_dim: config.time_dim, activation: config.activation, layers, revision: 0 })
    }

    /// Model from explicit layers; the last layer is the linear output.
    pub fn from_layers(dim: usize, labels: Vec<usize>, time_dim: usize, activation: Activation, layers: Vec<Dense>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidParameter("need at least one hidden layer and an output layer".into()));
        }
        let mut n_in = dim + time_dim + labels.len();
        for l in &layers {
            check_dim(n_in, l.n_in)?;
            check_dim(l.n_in * l.n_out, l.weights.len())?;
            check_dim(l.n_out, l.bias.len())?;
            check_finite(&l.weights, "denoiser weights")?;
            check_finite(&l.bias, "denoiser bias")?;
            n_in = l.n_out;
        }
        check_dim(dim, n_in)?;
        Ok(Self { dim, labels, time_dim, activation, layers, revision: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_width(&self, layer: usize) -> Option<usize> {
        (layer < self.num_hidden()).then(|| self.layers[layer].n_out)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    fn class_index(&self, class: Option<usize>) -> Result<Option<usize>> {
        match class {
            None => Ok(None),
            Some(label) => self.labels.iter().position(|&l| l == label).map(Some).ok_or(Error::UnknownClass(label)),
        }
    }

    fn input(&self, x: &[f64], t: usize, class: Option<usize>) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let ci = self.class_index(class)?;
        let mut input = Vec::with_capacity(self.dim + self.time_dim + self.labels.len());
        input.extend_from_slice(x);
        input.extend(time_embedding(t, self.time_dim));
        input.extend((0..self.labels.len()).map(|i| if Some(i) == ci { 1.0 } else { 0.0 }));
        Ok(input)
    }

    /// Forward pass conditioned on a class label. `None` feeds an all-zero
    /// class code.
    pub fn forward_opt(&self, x: &[f64], t: usize, class: Option<usize>) -> Result<ForwardState> {
        let input = self.input(x, t, class)?;
        let hidden = self.num_hidden();
        let mut pre = Vec::with_capacity(hidden);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(hidden);
        for layer in &self.layers[..hidden] {
            let z = layer.forward(post.last().unwrap_or(&input));
            let a = z.iter().map(|&v| self.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let output = self.layers[hidden].forward(post.last().expect("at least one hidden layer"));
        Ok(ForwardState { revision: self.revision, input, pre, post, output })
    }

    pub fn forward(&self, x: &[f64], t: usize, class: usize) -> Result<ForwardState> {
        self.forward_opt(x, t, Some(class))
    }

    fn check_state(&self, state: &ForwardState) -> Result<()> {
        if state.revision != self.revision || state.post.len() != self.num_hidden() || state.input.len() != self.layers[0].n_in {
            return Err(Error::StaleCache("forward state does not belong to this model revision"));
        }
        Ok(())
    }

    // Propagates a gradient at the post-activation of hidden layer
    // `top_layer` down to the data part of the input.
    fn backprop_to_input(&self, state: &ForwardState, top: Vec<f64>, top_layer: usize) -> Vec<f64> {
        let mut g = top;
        for l in (0..=top_layer).rev() {
            let gz: Vec<f64> = g
                .iter()
                .zip(&state.pre[l])
                .zip(&state.post[l])
                .map(|((gi, z), a)| gi * self.activation.derivative(*z, *a))
                .collect();
            g = self.layers[l].backward_input(&gz);
        }
        g.truncate(self.dim);
        g
    }

    /// Gradient of a scalar with respect to `x_t`, given its gradient at the
    /// network output.
    pub fn input_grad(&self, state: &ForwardState, loss_grad_at_output: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        check_dim(self.dim, loss_grad_at_output.len())?;
        let hidden = self.num_hidden();
        let top = self.layers[hidden].backward_input(loss_grad_at_output);
        Ok(self.backprop_to_input(state, top, hidden - 1))
    }

    /// Gradient with respect to `x_t` of a scalar whose gradient at the
    /// post-activation of hidden layer `layer` is `grad`.
    pub fn hidden_input_grad(&self, state: &ForwardState, layer: usize, grad: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let width = self
            .hidden_width(layer)
            .ok_or_else(|| Error::InvalidParameter(format!("hidden layer {layer} does not exist")))?;
        check_dim(width, grad.len())?;
        Ok(self.backprop_to_input(state, grad.to_vec(), layer))
    }

    // Adds the parameter gradients for output gradient `gout` into `acc`
    // (same layout as `layers`).
    fn accumulate_param_grads(&self, state: &ForwardState, gout: &[f64], acc: &mut [Dense]) {
        let hidden = self.num_hidden();
        let mut g = gout.to_vec();
        for l in (0..=hidden).rev() {
            let input = if l == 0 { &state.input } else { &state.post[l - 1] };
            let gz: Vec<f64> = if l == hidden {
                g.clone()
            } else {
                g.iter()
                    .zip(&state.pre[l])
                    .zip(&state.post[l])
                    .map(|((gi, z), a)| gi * self.activation.derivative(*z, *a))
                    .collect()
            };
            let layer = &mut acc[l];
            for (o, gzo) in gz.iter().enumerate() {
                layer.bias[o] += gzo;
                let row = &mut layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += gzo * x;
                }
            }
            if l > 0 {
                g = self.layers[l].backward_input(&gz);
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: self.dim,
            labels: self.labels.clone(),
            time_dim: self.time_dim,
            activation: self.activation,
            layers: self.layers.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a denoiser checkpoint: {}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        Self::from_layers(ck.dim, ck.labels, ck.time_dim, ck.activation, ck.layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

/// On-disk checkpoint. JSON with explicit layer shapes; see `docs/formats.md`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub time_dim: usize,
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub val_size: usize,
    pub seed: u64,
    /// Cosine decay of the learning rate to zero over `steps`.
    #[serde(default)]
    pub cosine_decay: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 20_000,
            lr: 0.01,
            momentum: 0.9,
            batch: 128,
            clip_norm: 1.0,
            val_size: 4096,
            seed: 0,
            cosine_decay: true,
        }
    }
}

/// Where clean training samples come from.
#[derive(Debug, Clone, Copy)]
pub enum TrainingSource<'a> {
    Mixture(&'a GmmSpec),
    Dataset(&'a LabeledDataset),
}

impl TrainingSource<'_> {
    fn labels(&self) -> Vec<usize> {
        match self {
            TrainingSource::Mixture(spec) => spec.labels(),
            TrainingSource::Dataset(ds) => ds.classes().to_vec(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            TrainingSource::Mixture(spec) => spec.dim(),
            TrainingSource::Dataset(ds) => ds.dim(),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> Result<(Vec<f64>, usize)> {
        match self {
            TrainingSource::Mixture(spec) => {
                let c = &spec.classes[rng.below(spec.classes.len())];
                Ok((spec.sample(c.label, 1, rng)?.remove(0), c.label))
            }
            TrainingSource::Dataset(ds) => {
                let i = rng.below(ds.len());
                Ok((ds.samples()[i].clone(), ds.labels()[i]))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    /// `(step, running train MSE, validation MSE)` every `steps / 20` steps.
    pub history: Vec<(usize, f64, f64)>,
}

type Example = (Vec<f64>, usize, usize, Vec<f64>);

fn draw_examples(source: &TrainingSource<'_>, schedule: &NoiseSchedule, n: usize, rng: &mut RngStream) -> Result<Vec<Example>> {
    (0..n)
        .map(|_| {
            let (x0, label) = source.draw(rng)?;
            let t = 1 + rng.below(schedule.steps());
            let (xt, eps) = forward_noise(schedule, &x0, t, rng)?;
            Ok((xt, t, label, eps))
        })
        .collect()
}

/// Mean squared ε error per coordinate over fixed examples.
fn eps_mse(model: &DenoiserModel, examples: &[Example]) -> Result<f64> {
    let errors = examples
        .par_iter()
        .map(|(xt, t, label, eps)| {
            let st = model.forward(xt, *t, *label)?;
            Ok(st.eps().iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / (examples.len() * model.dim()) as f64)
}

/// Validation ε-MSE of an arbitrary noise predictor on the draws used by
/// [`train_denoiser`] for `hyper.seed`.
pub fn validation_eps_mse(
    source: TrainingSource<'_>,
    schedule: &NoiseSchedule,
    hyper: &TrainHyper,
    predict: impl Fn(&[f64], usize, usize) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut rng = RngStream::derive(hyper.seed, Purpose::Training, 1, 0);
    let val = draw_examples(&source, schedule, hyper.val_size, &mut rng)?;
    let mut total = 0.0;
    for (xt, t, label, eps) in &val {
        let p = predict(xt, *t, *label)?;
        total += p.iter().zip(eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / (val.len() * source.dim()) as f64)
}

/// Trains on freshly drawn `(x0, t, ε)` triples with SGD + momentum on the
/// ε mean-squared error.
pub fn train_denoiser(
    source: TrainingSource<'_>,
    schedule: &NoiseSchedule,
    config: &DenoiserConfig,
    hyper: &TrainHyper,
) -> Result<(DenoiserModel, TrainReport)> {
    if hyper.batch == 0 || hyper.val_size == 0 || !(hyper.lr >= 0.0) || !(0.0..1.0).contains(&hyper.momentum) {
        return Err(Error::InvalidParameter("bad training hyper-parameters".into()));
    }
    let mut model = DenoiserModel::new(source.dim(), source.labels(), config, hyper.seed)?;
    let mut val_rng = RngStream::derive(hyper.seed, Purpose::Training, 1, 0);
    let val = draw_examples(&source, schedule, hyper.val_size, &mut val_rng)?;
    let mut rng = RngStream::derive(hyper.seed, Purpose::Training, 0, 0);

    let mut velocity: Vec<Dense> = model.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect();
    let mut grads = velocity.clone();
    let every = (hyper.steps / 20).max(1);
    let mut history = Vec::new();
    let mut running = f64::NAN;
    let norm = 2.0 / (hyper.batch * model.dim) as f64;

    for step in 1..=hyper.steps {
        for g in grads.iter_mut() {
            g.weights.iter_mut().for_each(|v| *v = 0.0);
            g.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch = draw_examples(&source, schedule, hyper.batch, &mut rng)?;
        // fixed chunks reduced in order, so results do not depend on the
        // thread count
        let partial = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut acc: Vec<Dense> = model.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect();
                let mut loss = 0.0;
                for (xt, t, label, eps) in chunk {
                    let st = model.forward(xt, *t, *label)?;
                    let gout: Vec<f64> = st.eps().iter().zip(eps).map(|(p, e)| norm * (p - e)).collect();
                    loss += st.eps().iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>();
                    model.accumulate_param_grads(&st, &gout, &mut acc);
                }
                Ok((acc, loss))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        for (acc, l) in partial {
            loss += l;
            for (g, a) in grads.iter_mut().zip(&acc) {
                g.weights.iter_mut().zip(&a.weights).for_each(|(x, y)| *x += y);
                g.bias.iter_mut().zip(&a.bias).for_each(|(x, y)| *x += y);
            }
        }
        loss /= (hyper.batch * model.dim) as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged at step {step}")));
        }
        running = if running.is_nan() { loss } else { 0.98 * running + 0.02 * loss };

        let gnorm = grads
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let clip = if hyper.clip_norm > 0.0 && gnorm > hyper.clip_norm { hyper.clip_norm / gnorm } else { 1.0 };
        let lr = if hyper.cosine_decay {
            0.5 * hyper.lr * (1.0 + (std::f64::consts::PI * (step - 1) as f64 / hyper.steps as f64).cos())
        } else {
            hyper.lr
        };
        for ((layer, vel), g) in model.layers.iter_mut().zip(&mut velocity).zip(&grads) {
            for ((p, v), gi) in layer.weights.iter_mut().zip(&mut vel.weights).zip(&g.weights) {
                *v = hyper.momentum * *v - lr * clip * gi;
                *p += *v;
            }
            for ((p, v), gi) in layer.bias.iter_mut().zip(&mut vel.bias).zip(&g.bias) {
                *v = hyper.momentum * *v - lr * clip * gi;
                *p += *v;
            }
        }
        model.revision += 1;

        if step % every == 0 || step == hyper.steps {
            let v = eps_mse(&model, &val)?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("validation loss diverged at step {step}")));
            }
            history.push((step, running, v));
        }
    }
    let val_mse = eps_mse(&model, &val)?;
    let report = TrainReport { steps: hyper.steps, train_mse: running, val_mse, history };
    Ok((model, report))
}
