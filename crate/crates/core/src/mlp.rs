//! Feed-forward surrogate `p(t, x | y_s)`.
//!
//! A fully connected network over the 5-vector `(y_s.x, y_s.y, x.x, x.y, t)`
//! with tanh hidden layers, a linear output and optional identity skip
//! connections between equal-width hidden layers. Layers are numbered from 1;
//! a skip `(a, b)` adds the activation of hidden layer `a` to the
//! pre-activation of hidden layer `b`.
//!
//! All parameters live in one flat vector. Layer `l` stores its weight matrix
//! (`dims[l-1] x dims[l]`, row-major, so `z = h W + b`) followed by its bias.

use std::io::Write;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;

use crate::activation;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, stream};
use crate::textio::{self, fmt_f64};

pub const INPUT_DIM: usize = 5;

/// Six hidden layers of width 100 between the 5-wide input and scalar output.
pub const PAPER_DIMS: [usize; 8] = [5, 100, 100, 100, 100, 100, 100, 1];

/// Residual links 1 -> 3 and 3 -> 5.
pub const PAPER_SKIPS: [(usize, usize); 2] = [(1, 3), (3, 5)];

/// Rows per gradient chunk. Chunk gradients are summed in chunk order, so the
/// result is independent of how many workers evaluate them.
pub const GRAD_CHUNK: usize = 50;

const MODEL_MAGIC: &str = "wavesrc-mlp";
const MODEL_VERSION: u32 = 1;

/// Per-coordinate affine map `u -> scale * u + offset` applied to raw inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputScaling {
    pub scale: [f64; INPUT_DIM],
    pub offset: [f64; INPUT_DIM],
}

impl InputScaling {
    pub fn identity() -> Self {
        InputScaling {
            scale: [1.0; INPUT_DIM],
            offset: [0.0; INPUT_DIM],
        }
    }

    /// Maps unit-square coordinates with `2u - 1` and time on `[0, t_end]`
    /// with `2t / t_end - 1`, so every input lands in `[-1, 1]`.
    pub fn for_domain(t_end: f64) -> Self {
        InputScaling {
            scale: [2.0, 2.0, 2.0, 2.0, 2.0 / t_end],
            offset: [-1.0; INPUT_DIM],
        }
    }
}

impl Default for InputScaling {
    fn default() -> Self {
        Self::for_domain(2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    skips: Vec<(usize, usize)>,
    activation: Activation,
    scaling: InputScaling,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

impl Mlp {
    /// A network with every parameter zero.
    pub fn zeros(dims: &[usize], skips: &[(usize, usize)], scaling: InputScaling) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("mlp.dims", "need at least input and output widths"));
        }
        if dims[0] != INPUT_DIM || *dims.last().unwrap() != 1 {
            return Err(Error::config("mlp.dims", "input width must be 5 and output width 1"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::config("mlp.dims", "zero-width layer"));
        }
        let hidden = dims.len() - 2;
        for &(a, b) in skips {
            if !(1 <= a && a < b && b <= hidden) {
                return Err(Error::config(
                    "mlp.skips",
                    format!("skip {a}->{b} must link hidden layers 1..={hidden} forward"),
                ));
            }
            if dims[a] != dims[b] {
                return Err(Error::config(
                    "mlp.skips",
                    format!("skip {a}->{b} joins widths {} and {}", dims[a], dims[b]),
                ));
            }
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut n = 0;
        for w in dims.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        offsets.push(n);
        Ok(Mlp {
            dims: dims.to_vec(),
            skips: skips.to_vec(),
            activation: Activation::Tanh,
            scaling,
            params: vec![0.0; n],
            offsets,
        })
    }

    /// Scaled-uniform fan-in/fan-out initialization, zero biases.
    pub fn init(dims: &[usize], skips: &[(usize, usize)], scaling: InputScaling, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims, skips, scaling)?;
        let mut rng = rng::stream_rng(seed, stream::INIT, 0);
        for l in 1..=net.n_layers() {
            let (fan_in, fan_out) = (net.dims[l - 1], net.dims[l]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w0, w1) = net.weight_range(l);
            for w in &mut net.params[w0..w1] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn paper(seed: u64) -> Self {
        Self::init(&PAPER_DIMS, &PAPER_SKIPS, InputScaling::default(), seed).expect("paper architecture is valid")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn skips(&self) -> &[(usize, usize)] {
        &self.skips
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    /// Number of weight layers (hidden layers + output).
    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Same network with the skip connections dropped.
    pub fn without_skips(&self) -> Mlp {
        Mlp {
            skips: Vec::new(),
            ..self.clone()
        }
    }

    fn weight_range(&self, l: usize) -> (usize, usize) {
        let start = self.offsets[l - 1];
        (start, start + self.dims[l - 1] * self.dims[l])
    }

    pub fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let (a, b) = self.weight_range(l);
        ArrayView2::from_shape((self.dims[l - 1], self.dims[l]), &self.params[a..b]).expect("layout")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.weight_range(l);
        ArrayView1::from(&self.params[b..self.offsets[l]])
    }

    fn scale_inputs(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        let mut h = inputs.to_owned();
        for mut row in h.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.scaling.scale[k] * *v + self.scaling.offset[k];
            }
        }
        h
    }

    /// Activations `h_0 .. h_{L-1}` (scaled input and hidden layers) plus the
    /// output column.
    fn forward_tape(&self, inputs: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        assert_eq!(inputs.ncols(), INPUT_DIM, "surrogate inputs are 5-vectors");
        let n_layers = self.n_layers();
        let n = inputs.nrows();
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        acts.push(self.scale_inputs(inputs));
        for l in 1..n_layers {
            // z = bias + skip inputs, then z += h W in place.
            let mut z = self.bias(l).broadcast((n, self.dims[l])).expect("row broadcast").to_owned();
            for &(a, b) in &self.skips {
                if b == l {
                    z += &acts[a];
                }
            }
            general_mat_mul(1.0, &acts[l - 1], &self.weights(l), 1.0, &mut z);
            activation::tanh_in_place(z.as_slice_mut().expect("standard layout"));
            acts.push(z);
        }
        let mut out = acts[n_layers - 1].dot(&self.weights(n_layers));
        out += &self.bias(n_layers);
        (acts, out.index_axis_move(Axis(1), 0))
    }

    /// Batched forward pass over raw (unscaled) input rows.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Array1<f64> {
        if inputs.nrows() == 0 {
            return Array1::zeros(0);
        }
        self.forward_tape(inputs).1
    }

    pub fn forward(&self, input: [f64; INPUT_DIM]) -> f64 {
        let row = ArrayView2::from_shape((1, INPUT_DIM), &input).expect("shape");
        self.forward_batch(row)[0]
    }

    /// Batched forward pass split into row blocks evaluated on the worker
    /// pool. Identical to [`Mlp::forward_batch`] row for row.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Array1<f64> {
        const BLOCK: usize = 1024;
        let n = inputs.nrows();
        let blocks = n.div_ceil(BLOCK);
        let parts = par::map_indexed(blocks, |b| {
            let rows = inputs.slice(s![b * BLOCK..((b + 1) * BLOCK).min(n), ..]);
            self.forward_batch(rows)
        });
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend(p.iter());
        }
        Array1::from(out)
    }

    pub fn mse(&self, data: &Samples) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let pred = self.predict(data.inputs.view());
        pred.iter()
            .zip(data.targets.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / data.len() as f64
    }

    /// Sum of squared errors and the un-normalized gradient of that sum.
    fn sse_and_grad(&self, inputs: ArrayView2<f64>, targets: ArrayView1<f64>) -> (f64, Vec<f64>) {
        let n_layers = self.n_layers();
        let (acts, out) = self.forward_tape(inputs);
        let resid = &out - &targets;
        let sse = resid.iter().map(|r| r * r).sum::<f64>();

        let mut grad = vec![0.0; self.params.len()];
        // dSSE/dz for the layer currently being processed.
        let mut delta = (resid * 2.0).insert_axis(Axis(1));
        let mut skip_deltas: Vec<Option<Array2<f64>>> = vec![None; n_layers];
        for l in (1..=n_layers).rev() {
            let h_prev = &acts[l - 1];
            {
                let (w0, w1) = self.weight_range(l);
                let mut gw_view =
                    ArrayViewMut2::from_shape((self.dims[l - 1], self.dims[l]), &mut grad[w0..w1]).expect("layout");
                general_mat_mul(1.0, &h_prev.t(), &delta, 1.0, &mut gw_view);
                let gb = delta.sum_axis(Axis(0));
                for (g, v) in grad[w1..self.offsets[l]].iter_mut().zip(gb.iter()) {
                    *g += v;
                }
            }
            if l == 1 {
                break;
            }
            let mut g_h = delta.dot(&self.weights(l).t());
            for &(a, b) in &self.skips {
                if a == l - 1 {
                    g_h += skip_deltas[b].as_ref().expect("skip destination processed first");
                }
            }
            // tanh'(z) = 1 - tanh(z)^2
            ndarray::Zip::from(&mut g_h).and(h_prev).for_each(|g, &h| *g *= 1.0 - h * h);
            if self.skips.iter().any(|&(_, b)| b == l - 1) {
                skip_deltas[l - 1] = Some(g_h.clone());
            }
            delta = g_h;
        }
        (sse, grad)
    }

    /// Batch MSE and its exact gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, inputs: ArrayView2<f64>, targets: ArrayView1<f64>) -> (f64, Vec<f64>) {
        let n = inputs.nrows();
        assert!(n > 0, "empty batch");
        assert_eq!(n, targets.len());
        let chunks = n.div_ceil(GRAD_CHUNK);
        let parts = par::map_indexed(chunks, |c| {
            let r = c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n);
            self.sse_and_grad(inputs.slice(s![r.clone(), ..]), targets.slice(s![r]))
        });
        let mut iter = parts.into_iter();
        let (mut sse, mut grad) = iter.next().expect("at least one chunk");
        for (s, g) in iter {
            sse += s;
            for (a, b) in grad.iter_mut().zip(g.iter()) {
                *a += b;
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        (sse * inv, grad)
    }
}

/// Input rows `(y_s.x, y_s.y, x.x, x.y, t)` with target pressures.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
}

impl Samples {
    pub fn new(inputs: Array2<f64>, targets: Array1<f64>) -> Result<Self> {
        if inputs.ncols() != INPUT_DIM || inputs.nrows() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "samples need n x 5 inputs and n targets, got {:?} and {}",
                inputs.dim(),
                targets.len()
            )));
        }
        Ok(Samples { inputs, targets })
    }

    pub fn from_rows(rows: &[([f64; INPUT_DIM], f64)]) -> Self {
        let mut inputs = Array2::zeros((rows.len(), INPUT_DIM));
        let mut targets = Array1::zeros(rows.len());
        for (i, (x, y)) in rows.iter().enumerate() {
            inputs.row_mut(i).assign(&ArrayView1::from(&x[..]));
            targets[i] = *y;
        }
        Samples { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Variance of the targets about their mean.
    pub fn target_variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.targets.sum() / n;
        self.targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Adam { .. } => "adam",
            Optimizer::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate is multiplied by `decay_gamma` every `decay_every` epochs.
    pub decay_gamma: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation MSE.
    pub patience: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            decay_gamma: 0.5,
            decay_every: 200,
            batch_size: 100,
            epochs: 1000,
            patience: 100,
            optimizer: Optimizer::adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and >= 0"));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::config("train.decay_gamma", "must lie in (0, 1]"));
        }
        if self.decay_every == 0 {
            return Err(Error::config("train.decay_every", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::config("train.optimizer", "Adam needs 0 <= beta < 1 and eps > 0"));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_gamma.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation MSE seen (the initial ones count).
    pub net: Mlp,
    pub history: Vec<EpochRecord>,
    pub initial_valid_mse: f64,
    /// Validation MSE of `net`, the surrogate noise variance estimate.
    pub sigma1_sq: f64,
    pub best_epoch: Option<usize>,
}

struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn apply(&mut self, opt: Optimizer, lr: f64, params: &mut [f64], grad: &[f64]) {
        match opt {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                let step = lr / bc1;
                let inv_bc2 = 1.0 / bc2;
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= step * *m / ((*v * inv_bc2).sqrt() + eps);
                }
            }
        }
    }
}

/// Mini-batch training with a step-decayed learning rate.
pub fn train(net: &Mlp, train: &Samples, valid: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(net, train, valid, cfg, |_| {})
}

pub fn train_with_progress<F>(
    net: &Mlp,
    train: &Samples,
    valid: &Samples,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument("training and validation data must be nonempty".into()));
    }
    let mut current = net.clone();
    let initial_loss = current.mse(train);
    let initial_valid_mse = current.mse(valid);
    let mut best = (current.params.clone(), initial_valid_mse, None);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut state = OptimizerState::new(current.n_params());
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Array2::zeros((cfg.batch_size, INPUT_DIM));
    let mut batch_y = Array1::zeros(cfg.batch_size);
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut rng = rng::stream_rng(cfg.seed, stream::SHUFFLE, epoch as u64);
        // Fisher-Yates on the index vector, reset each epoch so the batch
        // partition depends only on (seed, epoch).
        for (i, v) in order.iter_mut().enumerate() {
            *v = i;
        }
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let m = batch.len();
            for (r, &idx) in batch.iter().enumerate() {
                batch_x.row_mut(r).assign(&train.inputs.row(idx));
                batch_y[r] = train.targets[idx];
            }
            let (loss, grad) =
                current.loss_and_gradient(batch_x.slice(s![..m, ..]), batch_y.slice(s![..m]));
            loss_sum += loss * m as f64;
            state.apply(cfg.optimizer, lr, &mut current.params, &grad);
        }
        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() || train_loss > 1e3 * initial_loss {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
                initial: initial_loss,
            });
        }
        let valid_mse = current.mse(valid);
        let rec = EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            valid_mse,
        };
        progress(&rec);
        history.push(rec);
        if valid_mse < best.1 {
            best = (current.params.clone(), valid_mse, Some(epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let mut out = current;
    out.params = best.0;
    Ok(TrainOutcome {
        net: out,
        history,
        initial_valid_mse,
        sigma1_sq: best.1,
        best_epoch: best.2,
    })
}

/// A trained surrogate together with its noise-variance estimate, as stored
/// in a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: Mlp,
    pub sigma1_sq: f64,
}

impl TrainedModel {
    /// Text layout:
    ///
    /// ```text
    /// wavesrc-mlp 1
    /// dims = 5 100 ... 1
    /// skips = 1:3 3:5
    /// activation = tanh
    /// input_scale = <5 floats>
    /// input_offset = <5 floats>
    /// sigma1_sq = <float>
    /// params = <count>
    /// <one parameter per line, layer by layer: weights row-major, then bias>
    /// ```
    pub fn save(&self, path: &Path) -> Result<()> {
        let net = &self.net;
        textio::write_with(path, |w| {
            writeln!(w, "{MODEL_MAGIC} {MODEL_VERSION}")?;
            let dims: Vec<String> = net.dims.iter().map(|d| d.to_string()).collect();
            writeln!(w, "dims = {}", dims.join(" "))?;
            let skips: Vec<String> = net.skips.iter().map(|(a, b)| format!("{a}:{b}")).collect();
            writeln!(w, "skips = {}", skips.join(" "))?;
            writeln!(w, "activation = {}", net.activation.name())?;
            let fl = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
            writeln!(w, "input_scale = {}", fl(&net.scaling.scale))?;
            writeln!(w, "input_offset = {}", fl(&net.scaling.offset))?;
            writeln!(w, "sigma1_sq = {}", fmt_f64(self.sigma1_sq))?;
            writeln!(w, "params = {}", net.params.len())?;
            for p in &net.params {
                writeln!(w, "{}", fmt_f64(*p))?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = textio::read_to_string(path)?;
        let bad = |m: String| Error::format("model file", path, m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut hp = header.split_whitespace();
        if hp.next() != Some(MODEL_MAGIC) {
            return Err(bad(format!("bad header {header:?}")));
        }
        let version: u32 = hp.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing version".into()))?;
        if version != MODEL_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected `{key} = ...`")))?;
            if k.trim() != key {
                return Err(bad(format!("expected {key}, found {}", k.trim())));
            }
            Ok(v.trim().to_string())
        };
        let dims: Vec<usize> = field("dims")?
            .split_whitespace()
            .map(|d| d.parse().map_err(|e| bad(format!("dims: {e}"))))
            .collect::<Result<_>>()?;
        let skips: Vec<(usize, usize)> = field("skips")?
            .split_whitespace()
            .map(|s| {
                let (a, b) = s.split_once(':').ok_or_else(|| bad(format!("skip {s:?}")))?;
                Ok((
                    a.parse().map_err(|e| bad(format!("skip: {e}")))?,
                    b.parse().map_err(|e| bad(format!("skip: {e}")))?,
                ))
            })
            .collect::<Result<_>>()?;
        let act = field("activation")?;
        let activation = Activation::parse(&act).ok_or_else(|| bad(format!("unknown activation {act:?}")))?;
        let floats5 = |s: String, what: &'static str| -> Result<[f64; INPUT_DIM]> {
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|x| textio::parse_f64(x, what, path))
                .collect::<Result<_>>()?;
            v.try_into().map_err(|_| bad(format!("{what} needs 5 values")))
        };
        let scale = floats5(field("input_scale")?, "input_scale")?;
        let offset = floats5(field("input_offset")?, "input_offset")?;
        let sigma1_sq = textio::parse_f64(&field("sigma1_sq")?, "sigma1_sq", path)?;
        let count: usize = field("params")?.parse().map_err(|e| bad(format!("params: {e}")))?;
        let mut net = Mlp::zeros(&dims, &skips, InputScaling { scale, offset })
            .map_err(|e| bad(format!("architecture: {e}")))?;
        net.activation = activation;
        if count != net.params.len() {
            return Err(bad(format!("{count} parameters for an architecture needing {}", net.params.len())));
        }
        for p in net.params.iter_mut() {
            let line = lines.next().ok_or_else(|| bad("truncated parameter list".into()))?;
            *p = textio::parse_f64(line, "parameter", path)?;
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(TrainedModel { net, sigma1_sq })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn random_samples(n: usize, seed: u64) -> Samples {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<([f64; 5], f64)> = (0..n)
            .map(|_| {
                let x = [
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    2.0 * rng.random::<f64>(),
                ];
                (x, rng.random_range(-1.0..1.0))
            })
            .collect();
        Samples::from_rows(&rows)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&PAPER_DIMS, &PAPER_SKIPS, InputScaling::default()).unwrap();
        assert_eq!(net.forward([0.3, 0.2, 0.9, 0.1, 1.7]), 0.0);
        assert_eq!(net.n_params(), 5 * 100 + 100 + 5 * (100 * 100 + 100) + 100 + 1);
    }

    #[test]
    fn hand_built_single_hidden_unit() {
        // 5 -> 1 -> 1, identity scaling: out = v * tanh(w * t + c) + d
        let mut net = Mlp::zeros(&[5, 1, 1], &[], InputScaling::identity()).unwrap();
        let (w, c, v, d) = (0.7, -0.2, 1.3, 0.05);
        {
            let p = net.params_mut();
            p[4] = w; // weight from input coordinate 4 (t)
            p[5] = c;
            p[6] = v;
            p[7] = d;
        }
        let expected = v * (w * 1.0f64 + c).tanh() + d;
        let got = net.forward([0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert_eq!(got.to_bits(), net.forward([0.0, 0.0, 0.0, 0.0, 1.0]).to_bits());
    }

    #[test]
    fn skip_connection_adds_activation() {
        // Three hidden layers of width 2 with a 1 -> 3 skip. Zero weights in
        // layers 2 and 3 make h3 = tanh(h1 + b3).
        let mut net = Mlp::zeros(&[5, 2, 2, 2, 1], &[(1, 3)], InputScaling::identity()).unwrap();
        let w1 = [[0.5, -0.4], [0.1, 0.2], [0.0, 0.3], [-0.7, 0.6], [0.25, -0.15]];
        let (b1, b3, w_out) = ([0.1, -0.3], [0.2, 0.05], [1.5, -0.8]);
        {
            let p = net.params_mut();
            for (i, r) in w1.iter().enumerate() {
                p[2 * i] = r[0];
                p[2 * i + 1] = r[1];
            }
            p[10] = b1[0];
            p[11] = b1[1];
            // layer 2 at 12..18, layer 3 weights at 18..22, bias 22..24
            p[22] = b3[0];
            p[23] = b3[1];
            p[24] = w_out[0];
            p[25] = w_out[1];
        }
        let x = [0.3, -0.2, 0.9, 0.4, 1.1];
        let h1: Vec<f64> = (0..2)
            .map(|k| (0..5).map(|i| x[i] * w1[i][k]).sum::<f64>() + b1[k])
            .map(f64::tanh)
            .collect();
        let expected: f64 = (0..2).map(|k| w_out[k] * (h1[k] + b3[k]).tanh()).sum();
        assert!((net.forward(x) - expected).abs() < 1e-12);
        // Without the skip the signal never reaches the output layer.
        let plain = net.without_skips();
        let expected_plain: f64 = (0..2).map(|k| w_out[k] * b3[k].tanh()).sum();
        assert!((plain.forward(x) - expected_plain).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_skip() {
        assert!(Mlp::zeros(&[5, 10, 20, 1], &[(1, 2)], InputScaling::default()).is_err());
        assert!(Mlp::zeros(&[5, 10, 10, 1], &[(2, 1)], InputScaling::default()).is_err());
        assert!(Mlp::zeros(&[5, 10, 10, 1], &[(1, 3)], InputScaling::default()).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let net = Mlp::init(&[5, 8, 8, 1], &[], InputScaling::default(), 3).unwrap();
        let mut data = random_samples(20, 1);
        data.targets = net.forward_batch(data.inputs.view());
        let (loss, grad) = net.loss_and_gradient(data.inputs.view(), data.targets.view());
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicating_rows_keeps_loss_and_gradient() {
        let net = Mlp::init(&[5, 12, 12, 12, 1], &[(1, 3)], InputScaling::default(), 9).unwrap();
        let data = random_samples(37, 2);
        let (l1, g1) = net.loss_and_gradient(data.inputs.view(), data.targets.view());
        let inputs = ndarray::concatenate(Axis(0), &[data.inputs.view(), data.inputs.view()]).unwrap();
        let targets = ndarray::concatenate(Axis(0), &[data.targets.view(), data.targets.view()]).unwrap();
        let (l2, g2) = net.loss_and_gradient(inputs.view(), targets.view());
        assert!((l1 - l2).abs() <= 1e-14 * l1.abs());
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_small_net() {
        let net = Mlp::init(&[5, 6, 6, 6, 1], &[(1, 3)], InputScaling::default(), 4).unwrap();
        let data = random_samples(30, 5);
        let (_, grad) = net.loss_and_gradient(data.inputs.view(), data.targets.view());
        let h = 1e-6;
        for k in 0..net.n_params() {
            let mut plus = net.clone();
            plus.params_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[k] -= h;
            let fd = (plus.mse(&data) - minus.mse(&data)) / (2.0 * h);
            let scale = grad[k].abs().max(fd.abs()).max(1e-6);
            assert!((grad[k] - fd).abs() / scale < 1e-5, "param {k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let net = Mlp::init(&[5, 8, 1], &[], InputScaling::default(), 1).unwrap();
        let (tr, va) = (random_samples(250, 1), random_samples(40, 2));
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(&net, &tr, &va, &cfg).unwrap();
        assert_eq!(out.net.params(), net.params());
        assert_eq!(out.sigma1_sq, net.mse(&va));
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn training_is_deterministic_and_best_is_monotone() {
        let net = Mlp::init(&[5, 10, 10, 1], &[], InputScaling::default(), 1).unwrap();
        let (tr, va) = (random_samples(300, 3), random_samples(50, 4));
        let cfg = TrainConfig {
            epochs: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&net, &tr, &va, &cfg).unwrap();
        let b = train(&net, &tr, &va, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.history, b.history);
        let best_seen = a.history.iter().map(|r| r.valid_mse).fold(a.initial_valid_mse, f64::min);
        assert_eq!(a.sigma1_sq, best_seen);
        assert_eq!(a.net.mse(&va), a.sigma1_sq);
    }

    #[test]
    fn learns_a_linear_function_of_time() {
        // p = 0.8 t with t in [0, 2]
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let rows: Vec<([f64; 5], f64)> = (0..n)
                .map(|_| {
                    let t = 2.0 * rng.random::<f64>();
                    ([rng.random(), rng.random(), rng.random(), rng.random(), t], 0.8 * t)
                })
                .collect();
            Samples::from_rows(&rows)
        };
        let (tr, va) = (mk(&mut rng, 1000), mk(&mut rng, 200));
        let net = Mlp::init(&[5, 4, 1], &[], InputScaling::default(), 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            decay_every: 60,
            epochs: 150,
            batch_size: 20,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&net, &tr, &va, &cfg).unwrap();
        assert!(out.net.mse(&tr) < 1e-4, "train mse {}", out.net.mse(&tr));
    }

    #[test]
    fn divergence_is_reported() {
        let net = Mlp::init(&[5, 8, 1], &[], InputScaling::default(), 1).unwrap();
        let mut tr = random_samples(200, 1);
        tr.targets.mapv_inplace(|t| t * 1e-3);
        let cfg = TrainConfig {
            learning_rate: 1e3,
            optimizer: Optimizer::Sgd,
            epochs: 20,
            ..TrainConfig::default()
        };
        let err = train(&net, &tr, &tr.clone(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn predict_matches_forward_batch() {
        let net = Mlp::paper(5);
        let data = random_samples(2500, 6);
        let a = net.predict(data.inputs.view());
        let b = net.forward_batch(data.inputs.view());
        assert_eq!(a, b);
    }

    #[test]
    fn model_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let model = TrainedModel {
            net: Mlp::init(&[5, 7, 7, 7, 1], &[(1, 3)], InputScaling::default(), 12).unwrap(),
            sigma1_sq: 0.0123456789,
        };
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, model);
        assert!(matches!(
            TrainedModel::load(&dir.path().join("missing.txt")),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn input_scaling_maps_domain_to_unit_box() {
        let s = InputScaling::default();
        let lo = [0.0, 0.0, 0.0, 0.0, 0.0];
        let hi = [1.0, 1.0, 1.0, 1.0, 2.0];
        for k in 0..5 {
            assert_eq!(s.scale[k] * lo[k] + s.offset[k], -1.0);
            assert_eq!(s.scale[k] * hi[k] + s.offset[k], 1.0);
        }
        let _ = array![1.0];
    }
}
