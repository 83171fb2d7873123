//! A feedforward classifier written from scratch on top of `ndarray`.
//!
//! Hidden layers use ReLU and inverted dropout; the output is a softmax over
//! classes trained with mean cross-entropy and Adam. Inputs are standardized
//! with per-feature train-set statistics stored in the model.

use std::fmt::Write as _;
use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_indexed, derive_seed};

const MODEL_MAGIC: &[u8; 8] = b"HEPFFN01";
const MODEL_FORMAT: u32 = 1;
const INFER_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("expected {expected} features per row, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_hidden_layers() -> usize {
    5
}
fn default_hidden_units() -> usize {
    500
}
fn default_dropout() -> f64 {
    0.5
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    40
}
fn default_true() -> bool {
    true
}

/// Network shape and optimizer settings.
///
/// `input_dim` and `n_classes` may be left at 0 in configuration files; the
/// pipeline fills them from the feature layout and the class list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Standardize inputs with train-set mean and deviation.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 0,
            hidden_layers: default_hidden_layers(),
            hidden_units: default_hidden_units(),
            dropout_rate: default_dropout(),
            n_classes: 0,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            standardize: true,
        }
    }
}

impl MlpConfig {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        MlpConfig {
            input_dim,
            n_classes,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.input_dim == 0 || self.n_classes == 0 {
            return bad("input_dim and n_classes must be positive");
        }
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return bad("hidden_units must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat_n(self.hidden_units, self.hidden_layers));
        w.push(self.n_classes);
        w
    }
}

/// One affine layer: `out = in · w + b`, `w` is `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population deviations; constant columns get scale 1.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let scale = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (mut col, (m, s)) in out.axis_iter_mut(Axis(1)).zip(self.mean.iter().zip(&self.scale)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Moments {
    fn zeros(layers: &[Layer]) -> Self {
        Moments {
            m_w: layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            v_w: layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            m_b: layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
            v_b: layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Activations kept by [`MlpModel::forward`] for [`MlpModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    pub logits: Array2<f64>,
}

/// Gradients with the same shapes as the model layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    layers: Vec<Layer>,
    moments: Moments,
    step: u64,
    standardizer: Option<Standardizer>,
    version: u64,
}

impl MlpModel {
    /// Fan-in scaled uniform weights `U(±1/√fan_in)`, zero biases.
    pub fn init(config: &MlpConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
        let widths = config.widths();
        let layers: Vec<Layer> = widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
                Layer {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self::from_layers(config.clone(), layers))
    }

    /// Builds a model around explicit parameters. Shapes must chain.
    pub fn from_parts(config: MlpConfig, layers: Vec<Layer>) -> Result<Self, NnError> {
        config.validate()?;
        let widths = config.widths();
        if layers.len() != widths.len() - 1 {
            return Err(NnError::Config(format!(
                "{} layers given, configuration needs {}",
                layers.len(),
                widths.len() - 1
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.w.dim() != (widths[i], widths[i + 1]) || l.b.len() != widths[i + 1] {
                return Err(NnError::Config(format!("layer {i} has the wrong shape")));
            }
        }
        Ok(Self::from_layers(config, layers))
    }

    fn from_layers(config: MlpConfig, layers: Vec<Layer>) -> Self {
        let moments = Moments::zeros(&layers);
        MlpModel {
            config,
            layers,
            moments,
            step: 0,
            standardizer: None,
            version: 0,
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn set_standardizer(&mut self, s: Option<Standardizer>) {
        self.version += 1;
        self.standardizer = s;
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.config.input_dim {
            return Err(NnError::Shape {
                expected: self.config.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Runs the network on a batch of raw (unstandardized) rows. In train mode
    /// each hidden output is multiplied by a Bernoulli keep-mask drawn from
    /// `seed` and scaled by `1/(1-p)`.
    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode, seed: u64) -> Result<ForwardCache, NnError> {
        self.check_input(&x)?;
        let mut a = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_owned(),
        };
        let p = self.config.dropout_rate;
        let use_dropout = mode == Mode::Train && p > 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            inputs.push(a);
            if i == last {
                return Ok(ForwardCache {
                    version: self.version,
                    inputs,
                    pre,
                    masks,
                    logits: z,
                });
            }
            let mut h = z.mapv(|v| v.max(0.0));
            let mask = use_dropout.then(|| {
                let keep = 1.0 - p;
                let scale = 1.0 / keep;
                Array2::from_shape_simple_fn(h.raw_dim(), || if rng.random::<f64>() < keep { scale } else { 0.0 })
            });
            if let Some(m) = &mask {
                h *= m;
            }
            pre.push(z);
            masks.push(mask);
            a = h;
        }
        unreachable!("a network always has an output layer")
    }

    /// Gradient of the mean cross-entropy with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients, NnError> {
        if cache.version != self.version {
            return Err(NnError::StaleCache);
        }
        let rows = cache.logits.nrows();
        check_labels(rows, labels, self.config.n_classes)?;
        let mut delta = softmax(cache.logits.view());
        for (r, &y) in labels.iter().enumerate() {
            delta[[r, y]] -= 1.0;
        }
        delta /= rows.max(1) as f64;

        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        for i in (0..n).rev() {
            gw.push(cache.inputs[i].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if i == 0 {
                break;
            }
            let mut d = delta.dot(&self.layers[i].w.t());
            if let Some(m) = &cache.masks[i - 1] {
                d *= m;
            }
            Zip::from(&mut d).and(&cache.pre[i - 1]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = d;
        }
        gw.reverse();
        gb.reverse();
        Ok(Gradients { w: gw, b: gb })
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &Gradients) {
        let c = &self.config;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (c.beta1, c.beta2, c.learning_rate, c.epsilon);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.w)
                .and(&mut self.moments.m_w[i])
                .and(&mut self.moments.v_w[i])
                .and(&grads.w[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.b)
                .and(&mut self.moments.m_b[i])
                .and(&mut self.moments.v_b[i])
                .and(&grads.b[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        self.version += 1;
    }

    /// Inference-mode logits, computed in fixed-size chunks.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut out = Array2::zeros((x.nrows(), self.config.n_classes));
        for (start, chunk) in x.axis_chunks_iter(Axis(0), INFER_CHUNK).enumerate() {
            let cache = self.forward(chunk, Mode::Infer, 0)?;
            let s = start * INFER_CHUNK;
            out.slice_mut(ndarray::s![s..s + chunk.nrows(), ..])
                .assign(&cache.logits);
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(softmax(self.logits(x)?.view()))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>, NnError> {
        Ok(argmax_rows(self.logits(x)?.view()))
    }

    /// Mean loss and accuracy in inference mode.
    pub fn evaluate(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, f64), NnError> {
        check_labels(x.nrows(), labels, self.config.n_classes)?;
        let logits = self.logits(x)?;
        Ok((
            loss_softmax_xent(logits.view(), labels),
            accuracy(logits.view(), labels),
        ))
    }

    /// Serializes configuration, standardization, step counter and weights.
    /// Adam moments are not stored.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let header = ModelHeader {
            config: self.config.clone(),
            standardizer: self.standardizer.clone(),
            step: self.step,
        };
        let json = serde_json::to_vec(&header).map_err(|e| NnError::Format(e.to_string()))?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_FORMAT.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.parameter_count() * 8);
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory cannot fail");
        v
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(NnError::Format("not a model file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let format = u32::from_le_bytes(b4);
        if format != MODEL_FORMAT {
            return Err(NnError::Format(format!("unsupported format version {format}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: ModelHeader = serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))?;
        header.config.validate()?;
        let widths = header.config.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = read_f64s(&mut r, fan_in * fan_out)?;
            let b = read_f64s(&mut r, fan_out)?;
            layers.push(Layer {
                w: Array2::from_shape_vec((fan_in, fan_out), w).map_err(|e| NnError::Format(e.to_string()))?,
                b: Array1::from(b),
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NnError::Format(format!("{} trailing bytes", rest.len())));
        }
        if let Some(s) = &header.standardizer {
            if s.mean.len() != header.config.input_dim || s.scale.len() != header.config.input_dim {
                return Err(NnError::Format("standardizer width does not match input_dim".into()));
            }
        }
        let mut model = Self::from_layers(header.config, layers);
        model.step = header.step;
        model.standardizer = header.standardizer;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: MlpConfig,
    standardizer: Option<Standardizer>,
    step: u64,
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, NnError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| NnError::Format("truncated weights".into()))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn check_labels(rows: usize, labels: &[usize], n_classes: usize) -> Result<(), NnError> {
    if rows != labels.len() {
        return Err(NnError::LabelCount {
            rows,
            labels: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(NnError::Label { label, n_classes });
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean of `-log softmax(logits)[label]`, via log-sum-exp.
pub fn loss_softmax_xent(logits: ArrayView2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(logits: ArrayView2<f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: ArrayView2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Largest relative difference between backprop and central differences,
/// `|a - n| / max(|a|, |n|, 1e-6)`, over every parameter. Evaluated in
/// inference mode, so meant for networks with dropout off.
pub fn gradient_check(model: &MlpModel, x: ArrayView2<f64>, labels: &[usize], h: f64) -> Result<f64, NnError> {
    let cache = model.forward(x, Mode::Infer, 0)?;
    let grads = model.backward(&cache, labels)?;
    let mut probe = model.clone();
    let loss_at = |m: &MlpModel| -> Result<f64, NnError> {
        let c = m.forward(x, Mode::Infer, 0)?;
        Ok(loss_softmax_xent(c.logits.view(), labels))
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst = 0.0f64;
    for i in 0..model.layers.len() {
        let (rows, cols) = model.layers[i].w.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.layers[i].w[[r, c]];
                probe.layers_mut()[i].w[[r, c]] = orig + h;
                let up = loss_at(&probe)?;
                probe.layers_mut()[i].w[[r, c]] = orig - h;
                let down = loss_at(&probe)?;
                probe.layers_mut()[i].w[[r, c]] = orig;
                worst = worst.max(rel(grads.w[i][[r, c]], (up - down) / (2.0 * h)));
            }
        }
        for j in 0..model.layers[i].b.len() {
            let orig = model.layers[i].b[j];
            probe.layers_mut()[i].b[j] = orig + h;
            let up = loss_at(&probe)?;
            probe.layers_mut()[i].b[j] = orig - h;
            let down = loss_at(&probe)?;
            probe.layers_mut()[i].b[j] = orig;
            worst = worst.max(rel(grads.b[i][j], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Feature rows with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl LabeledData {
    pub fn new(x: Array2<f64>, y: Vec<usize>) -> Result<Self, NnError> {
        if x.nrows() != y.len() {
            return Err(NnError::LabelCount {
                rows: x.nrows(),
                labels: y.len(),
            });
        }
        Ok(LabeledData { x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<usize>) -> Result<Self, NnError> {
        let width = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(NnError::Shape {
                    expected: width,
                    got: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        let x = Array2::from_shape_vec((rows.len(), width), flat).expect("row widths checked");
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// One row of the training history. Train figures are running means over the
/// epoch's mini-batches (train mode); validation figures use inference mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    s
}

pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>, NnError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HISTORY_HEADER => {}
        _ => return Err(NnError::Format(format!("history header must be `{HISTORY_HEADER}`"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(NnError::Format(format!("bad history row `{l}`")));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| NnError::Format(e.to_string()));
            Ok(EpochRecord {
                epoch: f[0]
                    .trim()
                    .parse()
                    .map_err(|_| NnError::Format(format!("bad epoch `{}`", f[0])))?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                val_loss: num(f[3])?,
                val_acc: num(f[4])?,
            })
        })
        .collect()
}

/// What the training loop should do after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Trains for `config.epochs` epochs. See [`train_with_monitor`].
pub fn train(
    train: &LabeledData,
    val: &LabeledData,
    config: &MlpConfig,
) -> Result<(MlpModel, Vec<EpochRecord>), NnError> {
    train_with_monitor(train, val, config, |_| Control::Continue)
}

/// Mini-batch training with a per-epoch callback that may stop early.
///
/// Epoch `e` shuffles with a seed derived from `(seed, e)` and step `s` draws
/// dropout masks from `(seed, s)`, so a run depends only on its inputs.
pub fn train_with_monitor<F>(
    train: &LabeledData,
    val: &LabeledData,
    config: &MlpConfig,
    mut monitor: F,
) -> Result<(MlpModel, Vec<EpochRecord>), NnError>
where
    F: FnMut(&EpochRecord) -> Control,
{
    config.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(NnError::EmptySplit("val"));
    }
    for d in [train, val] {
        if d.x.ncols() != config.input_dim {
            return Err(NnError::Shape {
                expected: config.input_dim,
                got: d.x.ncols(),
            });
        }
        check_labels(d.x.nrows(), &d.y, config.n_classes)?;
    }
    let mut model = MlpModel::init(config)?;
    if config.standardize {
        model.set_standardizer(Some(Standardizer::fit(train.x.view())));
    }
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(config.seed, "shuffle", epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let xb = train.x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train.y[i]).collect();
            let cache = model.forward(xb.view(), Mode::Train, derive_indexed(config.seed, "dropout", step))?;
            loss_sum += loss_softmax_xent(cache.logits.view(), &yb) * batch.len() as f64;
            hits += argmax_rows(cache.logits.view())
                .iter()
                .zip(&yb)
                .filter(|(p, y)| p == y)
                .count();
            let grads = model.backward(&cache, &yb)?;
            model.adam_step(&grads);
            step += 1;
        }
        let (val_loss, val_acc) = model.evaluate(val.x.view(), &val.y)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        let control = monitor(&record);
        history.push(record);
        if control == Control::Stop {
            break;
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_config() -> MlpConfig {
        MlpConfig {
            input_dim: 2,
            hidden_layers: 1,
            hidden_units: 2,
            n_classes: 2,
            dropout_rate: 0.0,
            standardize: false,
            ..Default::default()
        }
    }

    fn toy_model() -> MlpModel {
        let layers = vec![
            Layer {
                w: array![[1.0, -1.0], [0.5, 2.0]],
                b: array![0.1, -0.2],
            },
            Layer {
                w: array![[1.0, 2.0], [-1.0, 0.5]],
                b: array![0.0, 0.3],
            },
        ];
        MlpModel::from_parts(toy_config(), layers).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut cfg = MlpConfig::new(4, 3);
        cfg.hidden_units = 8;
        cfg.hidden_layers = 2;
        let mut m = MlpModel::init(&cfg).unwrap();
        for l in m.layers_mut() {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let p = m
            .predict_proba(array![[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]].view())
            .unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_logits() {
        // x = (1, 2): z1 = (1 + 1 + 0.1, -1 + 4 - 0.2) = (2.1, 2.8), relu keeps both
        // logits = (2.1 - 2.8, 4.2 + 1.4 + 0.3) = (-0.7, 5.9)
        let m = toy_model();
        let c = m.forward(array![[1.0, 2.0]].view(), Mode::Infer, 0).unwrap();
        assert!((c.logits[[0, 0]] + 0.7).abs() < 1e-12);
        assert!((c.logits[[0, 1]] - 5.9).abs() < 1e-12);
        // x = (-1, 0): z1 = (-0.9, 0.8) -> (0, 0.8); logits = (-0.8, 0.4 + 0.3)
        let c = m.forward(array![[-1.0, 0.0]].view(), Mode::Infer, 0).unwrap();
        assert!((c.logits[[0, 0]] + 0.8).abs() < 1e-12);
        assert!((c.logits[[0, 1]] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_train_equals_infer() {
        let mut cfg = MlpConfig::new(3, 2);
        cfg.hidden_units = 16;
        cfg.dropout_rate = 0.0;
        let m = MlpModel::init(&cfg).unwrap();
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let a = m.forward(x.view(), Mode::Train, 9).unwrap();
        let b = m.forward(x.view(), Mode::Infer, 0).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn uniform_logits_loss_is_ln_n() {
        let l = loss_softmax_xent(array![[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]].view(), &[0, 2]);
        assert!((l - 3f64.ln()).abs() < 1e-15);
        let dominant = loss_softmax_xent(array![[800.0, 0.0, 0.0]].view(), &[0]);
        assert!(dominant.abs() < 1e-300);
    }

    #[test]
    fn xent_oracle() {
        // evaluated with mpmath at 50 digits
        let logits = array![[0.5, -1.2, 2.0], [3.0, 0.1, -0.4], [-2.0, -2.5, 1.5], [0.0, 4.0, 3.9]];
        let l = loss_softmax_xent(logits.view(), &[2, 0, 1, 2]);
        assert!((l - XENT_ORACLE).abs() < 1e-14, "{l}");
    }

    const XENT_ORACLE: f64 = 1.280_060_171_901_491;

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(array![[1e3, -1e3, 0.0], [0.1, 0.2, 0.3]].view());
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_gradients_match_finite_differences() {
        let m = toy_model();
        let x = array![[1.0, 2.0], [-1.0, 0.0], [0.3, 0.7]];
        let y = [0, 1, 1];
        let c = m.forward(x.view(), Mode::Infer, 0).unwrap();
        let g = m.backward(&c, &y).unwrap();
        let h = 1e-5;
        let mut probe = m.clone();
        for i in 0..2 {
            for r in 0..2 {
                for col in 0..2 {
                    let orig = m.layers()[i].w[[r, col]];
                    probe.layers_mut()[i].w[[r, col]] = orig + h;
                    let up = loss_softmax_xent(probe.logits(x.view()).unwrap().view(), &y);
                    probe.layers_mut()[i].w[[r, col]] = orig - h;
                    let down = loss_softmax_xent(probe.logits(x.view()).unwrap().view(), &y);
                    probe.layers_mut()[i].w[[r, col]] = orig;
                    assert!((g.w[i][[r, col]] - (up - down) / (2.0 * h)).abs() < 1e-6);
                }
            }
        }
        assert!(gradient_check(&m, x.view(), &y, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn dead_unit_has_zero_gradient() {
        let mut m = toy_model();
        // hidden unit 0 never fires for these inputs
        m.layers_mut()[0].b[0] = -100.0;
        let x = array![[1.0, 2.0], [-1.0, 0.0]];
        let c = m.forward(x.view(), Mode::Infer, 0).unwrap();
        let g = m.backward(&c, &[0, 1]).unwrap();
        assert_eq!(g.w[0][[0, 0]], 0.0);
        assert_eq!(g.w[0][[1, 0]], 0.0);
        assert_eq!(g.w[1][[0, 1]], 0.0);
    }

    #[test]
    fn batch_gradient_is_mean_of_single_gradients() {
        let mut cfg = MlpConfig::new(3, 3);
        cfg.hidden_units = 5;
        cfg.hidden_layers = 2;
        cfg.seed = 4;
        let m = MlpModel::init(&cfg).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5], [-0.4, 0.9, 2.0], [0.0, 0.0, 1.0]];
        let y = [0, 2, 1, 2];
        let full = m.backward(&m.forward(x.view(), Mode::Infer, 0).unwrap(), &y).unwrap();
        let mut acc: Option<Gradients> = None;
        for i in 0..4 {
            let row = x.slice(ndarray::s![i..i + 1, ..]);
            let g = m
                .backward(&m.forward(row, Mode::Infer, 0).unwrap(), &y[i..i + 1])
                .unwrap();
            acc = Some(match acc {
                None => g,
                Some(mut a) => {
                    for (aw, gw) in a.w.iter_mut().zip(&g.w) {
                        *aw += gw;
                    }
                    for (ab, gb) in a.b.iter_mut().zip(&g.b) {
                        *ab += gb;
                    }
                    a
                }
            });
        }
        let acc = acc.unwrap();
        for (a, f) in acc.w.iter().zip(&full.w) {
            for (u, v) in a.iter().zip(f.iter()) {
                assert!((u / 4.0 - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m = toy_model();
        let c = m.forward(array![[1.0, 2.0]].view(), Mode::Infer, 0).unwrap();
        let g = m.backward(&c, &[1]).unwrap();
        m.adam_step(&g);
        assert!(matches!(m.backward(&c, &[1]), Err(NnError::StaleCache)));
    }

    #[test]
    fn adam_zero_gradient_keeps_weights() {
        let mut m = toy_model();
        let before = m.layers().to_vec();
        let zero = Gradients {
            w: before.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: before.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        };
        m.adam_step(&zero);
        assert_eq!(m.layers(), &before[..]);
        assert_eq!(m.step(), 1);
    }

    #[test]
    fn adam_first_and_second_step() {
        let mut m = toy_model();
        let w0 = m.layers()[0].w[[0, 0]];
        let mut g = Gradients {
            w: m.layers().iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: m.layers().iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        };
        g.w[0][[0, 0]] = 0.2;
        m.adam_step(&g);
        // m1 = 0.02, v1 = 4e-5; m_hat = 0.2, v_hat = 0.04; step = 1e-3 * 0.2 / (0.2 + 1e-8)
        let first = 1e-3 * 0.2 / (0.2 + 1e-8);
        assert!((m.layers()[0].w[[0, 0]] - (w0 - first)).abs() < 1e-15);
        m.adam_step(&g);
        // m2 = 0.038, v2 = 7.996e-5; m_hat = 0.038/0.19 = 0.2, v_hat = 7.996e-5/1.999e-3 = 0.04
        let m_hat = 0.038 / 0.19;
        let v_hat: f64 = 7.996e-5 / 1.999e-3;
        let second = 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((m.layers()[0].w[[0, 0]] - (w0 - first - second)).abs() < 1e-15);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut cfg = MlpConfig::new(2, 2);
        cfg.hidden_layers = 2;
        cfg.hidden_units = 4;
        cfg.dropout_rate = 0.5;
        cfg.seed = 1;
        let m = MlpModel::init(&cfg).unwrap();
        let x = array![[0.7, -0.3]];
        let infer = m.forward(x.view(), Mode::Infer, 0).unwrap();
        // pre-activation of the second hidden layer = input of layer 1 times w + b
        let target = infer.pre[1].clone();
        let n = 10_000;
        let mut samples = Vec::with_capacity(n);
        for s in 0..n {
            let c = m.forward(x.view(), Mode::Train, s as u64).unwrap();
            samples.push(c.pre[1].clone());
        }
        for j in 0..4 {
            let vals: Vec<f64> = samples.iter().map(|a| a[[0, j]]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - target[[0, j]]).abs() <= 3.0 * se + 1e-12,
                "unit {j}: {mean} vs {}",
                target[[0, j]]
            );
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let d = LabeledData::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1]).unwrap();
        let mut cfg = toy_config();
        cfg.epochs = 0;
        let (m, h) = train(&d, &d, &cfg).unwrap();
        assert!(h.is_empty());
        assert_eq!(m.layers(), MlpModel::init(&cfg).unwrap().layers());
    }

    #[test]
    fn empty_split_rejected() {
        let d = LabeledData::from_rows(&[vec![0.0, 1.0]], vec![0]).unwrap();
        let empty = LabeledData::new(Array2::zeros((0, 2)), vec![]).unwrap();
        assert!(matches!(
            train(&empty, &d, &toy_config()),
            Err(NnError::EmptySplit("train"))
        ));
        assert!(matches!(
            train(&d, &empty, &toy_config()),
            Err(NnError::EmptySplit("val"))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let mut cfg = MlpConfig::new(3, 2);
        cfg.hidden_units = 4;
        cfg.hidden_layers = 2;
        let mut m = MlpModel::init(&cfg).unwrap();
        m.set_standardizer(Some(Standardizer {
            mean: vec![1.0, 2.0, 3.0],
            scale: vec![1.0, 0.5, 2.0],
        }));
        let bytes = m.to_bytes();
        let back = MlpModel::read_from(&bytes[..]).unwrap();
        assert_eq!(back.layers(), m.layers());
        assert_eq!(back.standardizer(), m.standardizer());
        assert_eq!(back.to_bytes(), bytes);
        assert!(MlpModel::read_from(&bytes[..bytes.len() - 1]).is_err());
        assert!(MlpModel::read_from(&b"NOTAMODEL..."[..]).is_err());
    }

    #[test]
    fn history_round_trip() {
        let h = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.75,
            val_loss: 0.25,
            val_acc: 1.0,
        }];
        let csv = history_csv(&h);
        assert!(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n1,"));
        assert_eq!(parse_history_csv(&csv).unwrap(), h);
    }
}
