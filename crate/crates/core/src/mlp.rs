//! Fully connected regression network on flattened CSI.
//!
//! Features are `[re(h) ..., im(h) ...]` in canonical entry order. The
//! network is a stack of affine layers with ReLU on the hidden layers and an
//! identity output head predicting `(x, y)` in meters; training minimizes the
//! mean squared Euclidean error with mini-batch Adam. Everything runs in f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiSample, Dataset, Location, TensorDims};
use crate::rng::{substream, Purpose};
use crate::{Error, Result};

pub const HIDDEN_WIDTH: usize = 256;
pub const HIDDEN_LAYERS: usize = 3;
pub const STD_FLOOR: f64 = 1e-8;

/// Length of the real feature vector for `dims`.
pub fn feature_len(dims: &TensorDims) -> usize {
    2 * dims.entries()
}

/// Real parts of all entries followed by all imaginary parts.
pub fn encode(sample: &CsiSample) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * sample.csi.len());
    out.extend(sample.csi.iter().map(|z| z.re as f64));
    out.extend(sample.csi.iter().map(|z| z.im as f64));
    out
}

/// Design matrix and targets of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// `N x d`.
    pub features: Array2<f64>,
    /// `N x 2`, meters.
    pub targets: Array2<f64>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

pub fn encode_dataset(dataset: &Dataset) -> Encoded {
    let n = dataset.len();
    let d = feature_len(dataset.dims());
    let mut features = Array2::zeros((n, d));
    let mut targets = Array2::zeros((n, 2));
    for (i, s) in dataset.samples().iter().enumerate() {
        let e = dataset.dims().entries();
        let mut row = features.row_mut(i);
        for (k, z) in s.csi.iter().enumerate() {
            row[k] = z.re as f64;
            row[e + k] = z.im as f64;
        }
        targets[[i, 0]] = s.label.x;
        targets[[i, 1]] = s.label.y;
    }
    Encoded { features, targets }
}

/// Per-dimension affine normalization fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation, std floored at [`STD_FLOOR`].
    pub fn fit(features: ArrayView2<f64>) -> Result<Standardizer> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Precondition("cannot fit a standardizer on zero rows".into()));
        }
        let mean = features.mean_axis(Axis(0)).expect("nonempty");
        let mut var = Array1::<f64>::zeros(features.ncols());
        for row in features.rows() {
            Zip::from(&mut var).and(&row).and(&mean).for_each(|v, &x, &m| *v += (x - m) * (x - m));
        }
        let std = var.mapv(|v| (v / n as f64).sqrt().max(STD_FLOOR));
        Ok(Standardizer { mean: mean.to_vec(), std: std.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &mut Array2<f64>) -> Result<()> {
        if features.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} features, got {}",
                self.dim(),
                features.ncols()
            )));
        }
        for mut row in features.rows_mut() {
            for ((x, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }

    pub fn apply_vec(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.dim(), x.len())));
        }
        for ((v, &m), &s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    /// Per layer, `out x in`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Parameter gradients, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::Dimension(format!("invalid layer sizes {layer_sizes:?}")));
    }
    if *layer_sizes.last().unwrap() != 2 {
        return Err(Error::Dimension("output layer must have 2 units (x, y)".into()));
    }
    Ok(())
}

impl MlpModel {
    /// `[input_dim, 256, 256, 256, 2]`.
    pub fn default_sizes(input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        sizes.push(2);
        sizes
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<MlpModel> {
        check_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(MlpModel { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    /// He-uniform weights `U[−√(6/fan_in), √(6/fan_in)]`, zero biases.
    pub fn new(layer_sizes: &[usize], init_seed: u64) -> Result<MlpModel> {
        let mut model = MlpModel::zeros(layer_sizes)?;
        for (l, w) in model.weights.iter_mut().enumerate() {
            let mut rng = substream(init_seed, Purpose::Init, l as u64);
            let limit = (6.0 / w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| (2.0 * rng.random::<f64>() - 1.0) * limit);
        }
        Ok(model)
    }

    /// Builds a model from explicit parameters, checking that shapes chain.
    pub fn from_parameters(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<MlpModel> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Dimension("need one bias per weight matrix".into()));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *sizes.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::Dimension("layer shapes do not chain".into()));
            }
            sizes.push(w.nrows());
        }
        check_sizes(&sizes)?;
        Ok(MlpModel { layer_sizes: sizes, weights, biases })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Post-activation outputs of every layer, starting with the input batch.
    fn activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l + 1 < self.n_layers() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Predictions for a batch, `N x 2`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        Ok(self.activations(x).pop().unwrap())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Location> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let out = self.predict(view)?;
        Ok(Location::new(out[[0, 0]], out[[0, 1]]))
    }

    /// Mean squared Euclidean error over the batch and its gradients.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        self.check_batch(&x)?;
        let batch = x.nrows();
        if batch == 0 || y.nrows() != batch || y.ncols() != 2 {
            return Err(Error::Dimension(format!(
                "batch of {batch} inputs needs {batch} x 2 targets, got {:?}",
                y.shape()
            )));
        }
        let acts = self.activations(x);
        let diff = &acts[self.n_layers()] - &y;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / batch as f64;

        let mut delta = diff * (2.0 / batch as f64);
        let mut g_w = vec![Array2::zeros((0, 0)); self.n_layers()];
        let mut g_b = vec![Array1::zeros(0); self.n_layers()];
        for l in (0..self.n_layers()).rev() {
            g_w[l] = delta.t().dot(&acts[l]);
            g_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                Zip::from(&mut back).and(&acts[l]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok((loss, Gradients { weights: g_w, biases: g_b }))
    }
}

/// Mean over the set of `‖f̂(x_i) − y_i‖²`, in squared meters.
pub fn evaluate_mse(model: &MlpModel, data: &Encoded) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Precondition("cannot evaluate on an empty set".into()));
    }
    const CHUNK: usize = 1024;
    // Neumaier compensated summation
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let pred = model.predict(data.features.slice(s![start..end, ..]))?;
        for (p, t) in pred.rows().into_iter().zip(data.targets.slice(s![start..end, ..]).rows()) {
            let e = (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
            let s = sum + e;
            if sum.abs() >= e.abs() {
                comp += (sum - s) + e;
            } else {
                comp += (e - s) + sum;
            }
            sum = s;
        }
        start = end;
    }
    Ok((sum + comp) / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub shuffle_seed: u64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            shuffle_seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be ≥ 0, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: i32,
}

impl AdamState {
    fn new(model: &MlpModel) -> Self {
        let zw: Vec<Array2<f64>> = model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        let zb: Vec<Array1<f64>> = model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
        Self { m_w: zw.clone(), v_w: zw, m_b: zb.clone(), v_b: zb, step: 0 }
    }
}

fn adam_update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    (lr, b1, b2, eps, c1, c2): (f64, f64, f64, f64, f64, f64),
) {
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    });
}

fn apply_step(model: &mut MlpModel, grads: &Gradients, config: &TrainConfig, adam: &mut AdamState) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                w.scaled_add(-lr, g);
            }
            for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                b.scaled_add(-lr, g);
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            adam.step += 1;
            let c1 = 1.0 - beta1.powi(adam.step);
            let c2 = 1.0 - beta2.powi(adam.step);
            let k = (lr, beta1, beta2, epsilon, c1, c2);
            for l in 0..model.n_layers() {
                adam_update(&mut model.weights[l], &grads.weights[l], &mut adam.m_w[l], &mut adam.v_w[l], k);
                adam_update(&mut model.biases[l], &grads.biases[l], &mut adam.m_b[l], &mut adam.v_b[l], k);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training loss of each epoch, in order.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch training with a fresh shuffle each epoch.
pub fn train(mut model: MlpModel, data: &Encoded, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if data.features.ncols() != model.input_dim() || data.targets.ncols() != 2 || data.targets.nrows() != data.len() {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {} (targets {:?})",
            model.input_dim(),
            data.features.ncols(),
            data.targets.shape()
        )));
    }
    let n = data.len();
    let mut adam = AdamState::new(&model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = substream(config.shuffle_seed, Purpose::Shuffle, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            let xb = data.features.select(Axis(0), idx);
            let yb = data.targets.select(Axis(0), idx);
            let (loss, grads) = model.loss_and_gradients(xb.view(), yb.view())?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch: epoch + 1, message: format!("batch loss {loss}") });
            }
            epoch_loss += loss * idx.len() as f64;
            apply_step(&mut model, &grads, config, &mut adam);
        }
        let epoch_loss = epoch_loss / n as f64;
        log::debug!("epoch {}: loss {epoch_loss:.6}", epoch + 1);
        if !model.is_finite() {
            return Err(Error::Training { epoch: epoch + 1, message: "non-finite parameters".into() });
        }
        trace.push(epoch_loss);
    }
    Ok(TrainOutcome { model, loss_trace: trace })
}

/// Trained model plus what is needed to apply it to raw datasets.
///
/// File layout (little-endian):
///
/// | field            | type                                          |
/// |------------------|-----------------------------------------------|
/// | magic            | `b"CSIM"`                                     |
/// | version          | u32 = 1                                       |
/// | n_sizes          | u32                                           |
/// | layer_sizes      | u32 × n_sizes                                 |
/// | activation       | u8, 1 = ReLU hidden / identity output         |
/// | init_seed        | u64                                           |
/// | shuffle_seed     | u64                                           |
/// | standardized     | u8 (0 or 1)                                   |
/// | mean, std        | f64 × input_dim each, present if standardized |
/// | per layer        | weights f64 × (out·in) row-major, then bias f64 × out |
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub standardizer: Option<Standardizer>,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CSIM";
const ACTIVATION_RELU: u8 = 1;

impl Checkpoint {
    pub fn write<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = BufWriter::new(sink);
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        let sizes = self.model.layer_sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for &s in sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        w.write_all(&[ACTIVATION_RELU])?;
        w.write_all(&self.init_seed.to_le_bytes())?;
        w.write_all(&self.shuffle_seed.to_le_bytes())?;
        match &self.standardizer {
            Some(st) => {
                w.write_all(&[1])?;
                for v in st.mean.iter().chain(&st.std) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
        for (wt, b) in self.model.weights.iter().zip(&self.model.biases) {
            for v in wt.iter().chain(b.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Checkpoint> {
        let mut r = BufReader::new(source);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n_sizes = read_u32(&mut r)? as usize;
        if n_sizes > 64 {
            return Err(Error::Format(format!("implausible layer count {n_sizes}")));
        }
        let sizes = (0..n_sizes).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        check_sizes(&sizes).map_err(|e| Error::Format(e.to_string()))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] != ACTIVATION_RELU {
            return Err(Error::Format(format!("unknown activation tag {}", tag[0])));
        }
        let init_seed = read_u64(&mut r)?;
        let shuffle_seed = read_u64(&mut r)?;
        r.read_exact(&mut tag)?;
        let standardizer = match tag[0] {
            0 => None,
            1 => {
                let mean = read_f64s(&mut r, sizes[0])?;
                let std = read_f64s(&mut r, sizes[0])?;
                Some(Standardizer { mean, std })
            }
            other => return Err(Error::Format(format!("bad standardizer flag {other}"))),
        };
        let mut model = MlpModel::zeros(&sizes)?;
        for l in 0..model.n_layers() {
            let shape = model.weights[l].raw_dim();
            let values = read_f64s(&mut r, shape[0] * shape[1])?;
            model.weights[l] = Array2::from_shape_vec(shape, values).expect("shape");
            model.biases[l] = Array1::from(read_f64s(&mut r, sizes[l + 1])?);
        }
        Ok(Checkpoint { model, standardizer, init_seed, shuffle_seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::read(File::open(path)?)
    }

    /// Encodes (and standardizes, if fitted) a dataset for this model.
    pub fn prepare(&self, dataset: &Dataset) -> Result<Encoded> {
        let mut enc = encode_dataset(dataset);
        if let Some(st) = &self.standardizer {
            st.apply(&mut enc.features)?;
        }
        Ok(enc)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
