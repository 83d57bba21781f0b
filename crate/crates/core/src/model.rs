//! Small MLP stack standing in for the linear projections of a transformer.
//!
//! Weights always live in binary16. Activations and gradients are evaluated
//! in `f64` unless [`Precision::Half`] is requested for the forward pass.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::half::Fp16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    /// tanh approximation
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Gelu => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Gelu),
            _ => None,
        }
    }
}

/// One dense layer; `weights` is row-major with one row per output neuron.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearLayer {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<Fp16>,
    bias: Vec<Fp16>,
    activation: Activation,
}

impl LinearLayer {
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        weights: Vec<Fp16>,
        bias: Vec<Fp16>,
        activation: Activation,
    ) -> Result<Self, ModelError> {
        if weights.len() != fan_in * fan_out {
            return Err(ModelError::Shape(format!(
                "weights have {} elements, expected {fan_out}x{fan_in}",
                weights.len()
            )));
        }
        if bias.len() != fan_out {
            return Err(ModelError::Shape(format!(
                "bias has {} elements, expected {fan_out}",
                bias.len()
            )));
        }
        Ok(Self { fan_in, fan_out, weights, bias, activation })
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![Fp16::ZERO; fan_in * fan_out],
            bias: vec![Fp16::ZERO; fan_out],
            activation,
        }
    }

    pub fn from_f64(
        fan_in: usize,
        fan_out: usize,
        weights: &[f64],
        bias: &[f64],
        activation: Activation,
    ) -> Result<Self, ModelError> {
        Self::new(
            fan_in,
            fan_out,
            crate::half::quantize(weights),
            crate::half::quantize(bias),
            activation,
        )
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Fp16] {
        &self.weights
    }

    pub fn bias(&self) -> &[Fp16] {
        &self.bias
    }

    pub fn weight(&self, row: usize, lane: usize) -> Fp16 {
        self.weights[row * self.fan_in + lane]
    }

    pub fn set_weight(&mut self, row: usize, lane: usize, w: Fp16) {
        self.weights[row * self.fan_in + lane] = w;
    }

    pub fn row(&self, row: usize) -> &[Fp16] {
        &self.weights[row * self.fan_in..(row + 1) * self.fan_in]
    }

    /// Wide-precision operand view with every lane DRAM-backed.
    pub fn operands(&self) -> LinearOperands {
        LinearOperands {
            fan_in: self.fan_in,
            fan_out: self.fan_out,
            weights: crate::half::dequantize(&self.weights),
            bias: crate::half::dequantize(&self.bias),
            activation: self.activation,
            overrides: Vec::new(),
        }
    }
}

/// Where an overridden lane takes its weight from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LaneWeight {
    /// The DRAM weight at this (row, lane); it still receives a gradient.
    Dram,
    /// A value outside DRAM (shadow store or constant zero).
    Fixed(f64),
}

/// A lane whose contribution is `weight * scale * x[source]` instead of
/// `w[row][lane] * x[lane]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneOverride {
    pub row: usize,
    pub lane: usize,
    pub source: usize,
    pub scale: f64,
    pub weight: LaneWeight,
}

/// Wide-precision form of a (possibly rewired) linear layer, used for
/// forward evaluation, back-propagation and training.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperands {
    pub fan_in: usize,
    pub fan_out: usize,
    /// DRAM weights, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Sorted by (row, lane), at most one per lane.
    pub overrides: Vec<LaneOverride>,
}

impl LinearOperands {
    fn masked_weights(&self) -> Vec<f64> {
        let mut w = self.weights.clone();
        for o in &self.overrides {
            w[o.row * self.fan_in + o.lane] = 0.0;
        }
        w
    }

    fn override_weight(&self, o: &LaneOverride) -> f64 {
        match o.weight {
            LaneWeight::Dram => self.weights[o.row * self.fan_in + o.lane],
            LaneWeight::Fixed(v) => v,
        }
    }

    fn dram_mask(&self) -> Vec<bool> {
        let mut m = vec![true; self.weights.len()];
        for o in &self.overrides {
            m[o.row * self.fan_in + o.lane] = false;
        }
        m
    }

    /// Pre-activation output for a batch of `n` rows of width `fan_in`.
    pub fn linear(&self, x: &[f64], n: usize) -> Vec<f64> {
        let w = self.masked_weights();
        let mut out = vec![0.0; n * self.fan_out];
        for s in 0..n {
            let xs = &x[s * self.fan_in..(s + 1) * self.fan_in];
            let ys = &mut out[s * self.fan_out..(s + 1) * self.fan_out];
            for (r, y) in ys.iter_mut().enumerate() {
                let row = &w[r * self.fan_in..(r + 1) * self.fan_in];
                *y = row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>() + self.bias[r];
            }
            for o in &self.overrides {
                ys[o.row] += self.override_weight(o) * o.scale * xs[o.source];
            }
        }
        out
    }
}

/// Layer-level interface the network forward pass is generic over: a plain
/// layer and a FaR-hardened layer both provide a wide view and a bit-exact
/// binary16 kernel.
pub trait LinearKernel {
    fn fan_in(&self) -> usize;
    fn fan_out(&self) -> usize;
    fn activation(&self) -> Activation;
    fn operands(&self) -> LinearOperands;
    /// Binary16 pre-activation output for one input vector.
    fn apply_fp16(&self, x: &[Fp16]) -> Vec<Fp16>;
}

impl LinearKernel for LinearLayer {
    fn fan_in(&self) -> usize {
        self.fan_in
    }
    fn fan_out(&self) -> usize {
        self.fan_out
    }
    fn activation(&self) -> Activation {
        self.activation
    }
    fn operands(&self) -> LinearOperands {
        LinearLayer::operands(self)
    }
    fn apply_fp16(&self, x: &[Fp16]) -> Vec<Fp16> {
        crate::reference::linear_fp16_plain(x, self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyNetwork {
    layers: Vec<LinearLayer>,
    class_count: usize,
}

impl ToyNetwork {
    pub fn new(layers: Vec<LinearLayer>) -> Result<Self, ModelError> {
        let Some(last) = layers.last() else {
            return Err(ModelError::Shape("network has no layers".into()));
        };
        let class_count = last.fan_out;
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(ModelError::Shape(format!(
                    "layer {i} fan_out {} != layer {} fan_in {}",
                    pair[0].fan_out,
                    i + 1,
                    pair[1].fan_in
                )));
            }
        }
        Ok(Self { layers, class_count })
    }

    /// Gaussian initialization scaled by `1/sqrt(fan_in)`; the last layer
    /// uses the identity activation.
    pub fn random(dims: &[usize], hidden: Activation, seed: u64) -> Result<Self, ModelError> {
        if dims.len() < 2 {
            return Err(ModelError::Shape("need at least input and output dims".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, d) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (d[0], d[1]);
            let std = 1.0 / (fan_in.max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            let act = if i + 2 == dims.len() { Activation::Identity } else { hidden };
            layers.push(LinearLayer::from_f64(fan_in, fan_out, &w, &vec![0.0; fan_out], act)?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn layer(&self, i: usize) -> &LinearLayer {
        &self.layers[i]
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn operands(&self) -> Vec<LinearOperands> {
        self.layers.iter().map(LinearLayer::operands).collect()
    }

    pub fn forward(&self, batch: &Batch, precision: Precision) -> Result<ForwardPass, ModelError> {
        let kernels: Vec<&dyn LinearKernel> =
            self.layers.iter().map(|l| l as &dyn LinearKernel).collect();
        forward(&kernels, batch, precision)
    }

    pub fn loss_and_gradients(&self, batch: &Batch) -> Result<Gradients, ModelError> {
        loss_and_gradients(&self.operands(), batch)
    }

    pub fn accuracy(&self, batch: &Batch, precision: Precision) -> Result<f64, ModelError> {
        Ok(self.forward(batch, precision)?.accuracy(&batch.labels))
    }
}

/// Inputs are `len x dim`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self, ModelError> {
        if inputs.len() != dim * labels.len() {
            return Err(ModelError::Shape(format!(
                "{} inputs for {} labels of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { dim, inputs, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, inputs: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Batch {
        Batch {
            dim: self.dim,
            inputs: self.inputs[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }

    pub fn split_at(&self, n: usize) -> (Batch, Batch) {
        let n = n.min(self.len());
        (self.slice(0..n), self.slice(n..self.len()))
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            inputs.extend_from_slice(self.input(r));
        }
        Batch { dim: self.dim, inputs, labels: rows.iter().map(|&r| self.labels[r]).collect() }
    }

    fn check(&self, input_dim: usize, classes: usize) -> Result<(), ModelError> {
        if self.dim != input_dim {
            return Err(ModelError::Shape(format!(
                "batch width {} != network input {input_dim}",
                self.dim
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::Label { label, classes });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// f64 activations, binary16 weights.
    #[default]
    Wide,
    /// Every activation rounded to binary16; products and sums on the
    /// binary16 datapath.
    Half,
}

/// Retained forward state: `inputs[i]` feeds layer `i`, `pre[i]` is its
/// pre-activation output. All are `batch x width`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub batch_size: usize,
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub classes: usize,
}

impl ForwardPass {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.chunks(self.classes.max(1)).map(argmax).collect()
    }

    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self.predictions().iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len() as f64
    }

    pub fn loss(&self, labels: &[usize]) -> f64 {
        cross_entropy(&self.logits, labels, self.classes).0
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        // NaN logits never win; ties keep the lowest index
        if x > xs[best] || xs[best].is_nan() && !x.is_nan() {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and `d loss / d logits`.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; logits.len()];
    if n == 0 {
        return (0.0, grad);
    }
    let mut total = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let z = &logits[s * classes..(s + 1) * classes];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let log_sum = m + sum.ln();
        total += log_sum - z[label];
        for c in 0..classes {
            let p = (z[c] - log_sum).exp();
            grad[s * classes + c] = (p - if c == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (total / n as f64, grad)
}

pub fn forward(
    layers: &[&dyn LinearKernel],
    batch: &Batch,
    precision: Precision,
) -> Result<ForwardPass, ModelError> {
    check_chain(layers.iter().map(|k| (k.fan_in(), k.fan_out())))?;
    let classes = layers.last().map(|k| k.fan_out()).unwrap_or(0);
    batch.check(layers[0].fan_in(), classes)?;
    let n = batch.len();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut x = match precision {
        Precision::Wide => batch.inputs.clone(),
        Precision::Half => round_through_fp16(&batch.inputs),
    };
    for k in layers {
        let z = match precision {
            Precision::Wide => k.operands().linear(&x, n),
            Precision::Half => {
                let xq = crate::half::quantize(&x);
                let mut z = Vec::with_capacity(n * k.fan_out());
                for s in 0..n {
                    let out = k.apply_fp16(&xq[s * k.fan_in()..(s + 1) * k.fan_in()]);
                    z.extend(out.iter().map(|w| w.to_f64()));
                }
                z
            }
        };
        let act = k.activation();
        let mut next: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
        if precision == Precision::Half {
            next = round_through_fp16(&next);
        }
        inputs.push(std::mem::replace(&mut x, next));
        pre.push(z);
    }
    Ok(ForwardPass { batch_size: n, inputs, pre, logits: x, classes })
}

fn round_through_fp16(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&v| Fp16::from_f64(v).to_f64()).collect()
}

fn check_chain(dims: impl Iterator<Item = (usize, usize)>) -> Result<(), ModelError> {
    let mut prev: Option<usize> = None;
    let mut any = false;
    for (i, (fan_in, fan_out)) in dims.enumerate() {
        any = true;
        if let Some(p) = prev {
            if p != fan_in {
                return Err(ModelError::Shape(format!("layer {i} expects {fan_in} inputs, got {p}")));
            }
        }
        prev = Some(fan_out);
    }
    if !any {
        return Err(ModelError::Shape("network has no layers".into()));
    }
    Ok(())
}

/// Loss, gradients and activation statistics for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// `d loss / d w` for every DRAM weight, per layer, row-major.
    /// Overridden lanes carry zero.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    /// Per layer, mean |activation| of each input neuron over the batch.
    pub mean_abs_activation: Vec<Vec<f64>>,
    pub accuracy: f64,
}

pub fn loss_and_gradients(layers: &[LinearOperands], batch: &Batch) -> Result<Gradients, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    check_chain(layers.iter().map(|l| (l.fan_in, l.fan_out)))?;
    let classes = layers.last().map(|l| l.fan_out).unwrap_or(0);
    batch.check(layers[0].fan_in, classes)?;
    let n = batch.len();

    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut x = batch.inputs.clone();
    for l in layers {
        let z = l.linear(&x, n);
        let next = z.iter().map(|&v| l.activation.apply(v)).collect();
        inputs.push(std::mem::replace(&mut x, next));
        pre.push(z);
    }
    let logits = x;
    let (loss, mut delta) = cross_entropy(&logits, &batch.labels, classes);
    let accuracy = ForwardPass {
        batch_size: n,
        inputs: Vec::new(),
        pre: Vec::new(),
        logits: logits.clone(),
        classes,
    }
    .accuracy(&batch.labels);

    let mut wgrads = vec![Vec::new(); layers.len()];
    let mut bgrads = vec![Vec::new(); layers.len()];
    for (li, l) in layers.iter().enumerate().rev() {
        let (fi, fo) = (l.fan_in, l.fan_out);
        let z = &pre[li];
        let xin = &inputs[li];
        for (d, &zv) in delta.iter_mut().zip(z) {
            *d *= l.activation.derivative(zv);
        }
        let mask = l.dram_mask();
        let w = l.masked_weights();
        let mut gw = vec![0.0; fi * fo];
        let mut gb = vec![0.0; fo];
        let mut dx = vec![0.0; n * fi];
        for s in 0..n {
            let ds = &delta[s * fo..(s + 1) * fo];
            let xs = &xin[s * fi..(s + 1) * fi];
            let dxs = &mut dx[s * fi..(s + 1) * fi];
            for r in 0..fo {
                let d = ds[r];
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                let wrow = &w[r * fi..(r + 1) * fi];
                let grow = &mut gw[r * fi..(r + 1) * fi];
                for lane in 0..fi {
                    grow[lane] += d * xs[lane];
                    dxs[lane] += d * wrow[lane];
                }
            }
            for o in &l.overrides {
                dxs[o.source] += l.override_weight(o) * o.scale * ds[o.row];
            }
        }
        for (g, keep) in gw.iter_mut().zip(&mask) {
            if !keep {
                *g = 0.0;
            }
        }
        for o in &l.overrides {
            if o.weight == LaneWeight::Dram {
                let g: f64 = (0..n)
                    .map(|s| delta[s * fo + o.row] * o.scale * xin[s * fi + o.source])
                    .sum();
                gw[o.row * fi + o.lane] += g;
            }
        }
        wgrads[li] = gw;
        bgrads[li] = gb;
        delta = dx;
    }

    let mean_abs_activation = inputs
        .iter()
        .zip(layers)
        .map(|(xin, l)| {
            let mut acc = vec![0.0; l.fan_in];
            for s in 0..n {
                for (a, v) in acc.iter_mut().zip(&xin[s * l.fan_in..(s + 1) * l.fan_in]) {
                    *a += v.abs();
                }
            }
            acc.iter().map(|a| a / n as f64).collect()
        })
        .collect();

    Ok(Gradients { loss, weights: wgrads, bias: bgrads, mean_abs_activation, accuracy })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 60, learning_rate: 0.1, batch_size: 32, momentum: 0.9, seed: 0 }
    }
}

/// Mini-batch SGD with momentum on `f64` master weights, re-quantized to
/// binary16 at the end.
pub fn train_toy(net: &ToyNetwork, data: &Batch, cfg: &TrainConfig) -> Result<ToyNetwork, ModelError> {
    if cfg.epochs == 0 {
        return Ok(net.clone());
    }
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut master = net.operands();
    let mut vel_w: Vec<Vec<f64>> = master.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut vel_b: Vec<Vec<f64>> = master.iter().map(|l| vec![0.0; l.bias.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            let mb = data.select(chunk);
            let g = loss_and_gradients(&master, &mb)?;
            if !g.loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            for (li, l) in master.iter_mut().enumerate() {
                for ((w, v), gw) in l.weights.iter_mut().zip(&mut vel_w[li]).zip(&g.weights[li]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gw;
                    *w += *v;
                }
                for ((b, v), gb) in l.bias.iter_mut().zip(&mut vel_b[li]).zip(&g.bias[li]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gb;
                    *b += *v;
                }
            }
            if master.iter().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
                return Err(ModelError::Diverged { epoch });
            }
        }
    }
    let layers = master
        .iter()
        .map(|l| LinearLayer::from_f64(l.fan_in, l.fan_out, &l.weights, &l.bias, l.activation))
        .collect::<Result<Vec<_>, _>>()?;
    ToyNetwork::new(layers)
}

/// Gaussian-clusters classification task. `dead_dims` trailing features are
/// identically zero so the first layer has dead input lanes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub informative_dims: usize,
    pub dead_dims: usize,
    pub samples_per_class: usize,
    /// Distance of each class mean from the origin, in units of `noise`.
    pub separation: f64,
    /// Common shift added to every informative feature, in units of `noise`.
    /// A large shift keeps the inputs mostly positive, like pixel intensities.
    pub offset: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            informative_dims: 24,
            dead_dims: 8,
            samples_per_class: 150,
            separation: 3.5,
            offset: 2.0,
            noise: 1.0,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn dim(&self) -> usize {
        self.informative_dims + self.dead_dims
    }

    /// Class means: random unit directions scaled by `separation * noise`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0001);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (0..self.classes)
            .map(|_| {
                let v: Vec<f64> =
                    (0..self.informative_dims).map(|_| normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.iter().map(|a| (a / norm * self.separation + self.offset) * self.noise).collect()
            })
            .collect()
    }
}

/// Deterministic, shuffled sample of the task described by `spec`.
pub fn synth_dataset(spec: &DatasetSpec) -> Batch {
    let dim = spec.dim();
    let means = spec.class_means();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for _ in 0..spec.samples_per_class {
        for (c, mean) in means.iter().enumerate() {
            let mut x: Vec<f64> = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            x.resize(dim, 0.0);
            rows.push((x, c));
        }
    }
    rows.shuffle(&mut rng);
    let mut inputs = Vec::with_capacity(rows.len() * dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (x, c) in rows {
        inputs.extend(x);
        labels.push(c);
    }
    Batch { dim, inputs, labels }
}
