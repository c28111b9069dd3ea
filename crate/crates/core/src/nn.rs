//! A small 1D CNN kernel: convolution, pooling, dense layers, residual and concatenation
//! blocks, with reverse-mode gradients and Adam.
//!
//! Activations are stored per example as row-major `[timestep][channel]` buffers. All
//! arithmetic is `f64`.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Seq { len: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Seq { len, channels } => len * channels,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.size() != data.len() {
            return Err(Error::Shape(format!("{shape:?} needs {} values, got {}", shape.size(), data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_window(w: &FeatureWindow) -> Self {
        Tensor {
            shape: Shape::Seq {
                len: w.samples.len(),
                channels: crate::features::FEATURE_COUNT,
            },
            data: w.samples.iter().flat_map(|s| s.iter().copied()).collect(),
        }
    }
}

/// Kernel-size-`kernel`, stride-1, unpadded 1D convolution.
/// `weight` is laid out `[filter][tap][in_channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Fully connected layer; `weight` is `[unit][input]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv1d(Conv1d),
    MaxPool1d { pool: usize, stride: usize },
    AvgPool1d { pool: usize, stride: usize },
    Flatten,
    Dropout { rate: f64 },
    Dense(Dense),
    /// `y = act(body(x) + x)`, where `act` is the activation of the body's last
    /// (parametric) layer, applied after the merge.
    Residual { body: Vec<Layer> },
    /// Runs every branch on the same input and joins the outputs along channels.
    Concat { branches: Vec<Vec<Layer>> },
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

impl Conv1d {
    pub fn new(in_channels: usize, filters: usize, kernel: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Conv1d {
            in_channels,
            filters,
            kernel,
            activation,
            weight: glorot(rng, kernel * in_channels, kernel * filters, filters * kernel * in_channels),
            bias: vec![0.0; filters],
        }
    }

    #[inline]
    pub fn w(&self, f: usize, j: usize, c: usize) -> f64 {
        self.weight[(f * self.kernel + j) * self.in_channels + c]
    }
}

impl Dense {
    pub fn new(inputs: usize, units: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            inputs,
            units,
            activation,
            weight: glorot(rng, inputs, units, inputs * units),
            bias: vec![0.0; units],
        }
    }
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::MaxPool1d { .. } => "max_pool1d",
            Layer::AvgPool1d { .. } => "avg_pool1d",
            Layer::Flatten => "flatten",
            Layer::Dropout { .. } => "dropout",
            Layer::Dense(_) => "dense",
            Layer::Residual { .. } => "residual",
            Layer::Concat { .. } => "concat",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |msg: String| Err(Error::Shape(format!("{}: {msg}", self.name())));
        match self {
            Layer::Conv1d(c) => match input {
                Shape::Seq { len, channels } if channels == c.in_channels && len >= c.kernel => Ok(Shape::Seq {
                    len: len - c.kernel + 1,
                    channels: c.filters,
                }),
                _ => bad(format!("input {input:?} incompatible with {} channels, kernel {}", c.in_channels, c.kernel)),
            },
            Layer::MaxPool1d { pool, stride } | Layer::AvgPool1d { pool, stride } => match input {
                Shape::Seq { len, channels } if *pool >= 1 && *stride >= 1 && len >= *pool => Ok(Shape::Seq {
                    len: (len - pool) / stride + 1,
                    channels,
                }),
                _ => bad(format!("input {input:?} incompatible with pool {pool}, stride {stride}")),
            },
            Layer::Flatten => Ok(Shape::Flat(input.size())),
            Layer::Dropout { rate } => {
                if (0.0..1.0).contains(rate) {
                    Ok(input)
                } else {
                    bad(format!("rate {rate} outside [0, 1)"))
                }
            }
            Layer::Dense(d) => match input {
                Shape::Flat(n) if n == d.inputs => Ok(Shape::Flat(d.units)),
                _ => bad(format!("input {input:?} incompatible with {} inputs", d.inputs)),
            },
            Layer::Residual { body } => {
                let out = chain_shape(body, input)?;
                match body.last() {
                    Some(Layer::Conv1d(_)) | Some(Layer::Dense(_)) => {}
                    _ => return bad("body must end with a conv1d or dense layer".into()),
                }
                if out != input {
                    return bad(format!("body maps {input:?} to {out:?}"));
                }
                Ok(out)
            }
            Layer::Concat { branches } => {
                if branches.is_empty() {
                    return bad("no branches".into());
                }
                let shapes = branches
                    .iter()
                    .map(|b| chain_shape(b, input))
                    .collect::<Result<Vec<_>>>()?;
                match shapes[0] {
                    Shape::Flat(_) => {
                        if shapes.iter().all(|s| matches!(s, Shape::Flat(_))) {
                            Ok(Shape::Flat(shapes.iter().map(|s| s.size()).sum()))
                        } else {
                            bad("mixed branch shapes".into())
                        }
                    }
                    Shape::Seq { len, .. } => {
                        let mut channels = 0;
                        for s in &shapes {
                            match s {
                                Shape::Seq { len: l, channels: c } if *l == len => channels += c,
                                _ => return bad(format!("branch shapes {shapes:?} differ in length")),
                            }
                        }
                        Ok(Shape::Seq { len, channels })
                    }
                }
            }
        }
    }

    fn param_tensors(&self) -> usize {
        match self {
            Layer::Conv1d(_) | Layer::Dense(_) => 2,
            Layer::Residual { body } => body.iter().map(Layer::param_tensors).sum(),
            Layer::Concat { branches } => branches.iter().flatten().map(Layer::param_tensors).sum(),
            _ => 0,
        }
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        match self {
            Layer::Conv1d(c) => {
                out.push(&c.weight);
                out.push(&c.bias);
            }
            Layer::Dense(d) => {
                out.push(&d.weight);
                out.push(&d.bias);
            }
            Layer::Residual { body } => body.iter().for_each(|l| l.collect_params(out)),
            Layer::Concat { branches } => branches.iter().flatten().for_each(|l| l.collect_params(out)),
            _ => {}
        }
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        match self {
            Layer::Conv1d(c) => {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
            Layer::Dense(d) => {
                out.push(&mut d.weight);
                out.push(&mut d.bias);
            }
            Layer::Residual { body } => body.iter_mut().for_each(|l| l.collect_params_mut(out)),
            Layer::Concat { branches } => branches.iter_mut().flatten().for_each(|l| l.collect_params_mut(out)),
            _ => {}
        }
    }
}

fn chain_shape(layers: &[Layer], input: Shape) -> Result<Shape> {
    layers.iter().try_fold(input, |s, l| l.output_shape(s))
}

/// Forward-pass mode. Dropout draws from the supplied stream in training mode only.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut ChaCha8Rng),
}

enum Cache {
    Conv { input: Vec<f64>, len: usize, output: Vec<f64> },
    Dense { input: Vec<f64>, output: Vec<f64> },
    MaxPool { in_shape: Shape, argmax: Vec<usize> },
    AvgPool { in_shape: Shape },
    Reshape,
    Dropout { mask: Option<Vec<f64>> },
    Residual { body: Vec<Cache>, output: Vec<f64> },
    Concat { branches: Vec<Vec<Cache>>, widths: Vec<Shape>, in_size: usize },
}

/// Four-lane dot product (fixed summation order).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Probabilities below the smallest normal f64 are flushed to zero; subnormals would
/// otherwise propagate through backprop at a large speed penalty.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
        if *v < f64::MIN_POSITIVE {
            *v = 0.0;
        }
    }
}

fn activate(act: Activation, z: &mut [f64]) {
    match act {
        Activation::Linear => {}
        Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => softmax_in_place(z),
    }
}

/// Gradient through an activation given the activated output. Softmax layers receive
/// the gradient with respect to their logits directly (cross-entropy head).
fn activation_backward(act: Activation, output: &[f64], grad: &mut [f64]) {
    if act == Activation::Relu {
        for (g, &o) in grad.iter_mut().zip(output) {
            if o <= 0.0 {
                *g = 0.0;
            }
        }
    }
}

fn layer_forward(layer: &Layer, x: Tensor, mode: &mut Mode, cache: Option<&mut Vec<Cache>>, apply_act: bool) -> Result<Tensor> {
    let out_shape = layer.output_shape(x.shape)?;
    let out = match layer {
        Layer::Conv1d(c) => {
            let Shape::Seq { len, .. } = x.shape else { unreachable!() };
            let out_len = len - c.kernel + 1;
            let mut y = Vec::with_capacity(out_len * c.filters);
            let span = c.kernel * c.in_channels;
            for t in 0..out_len {
                let window = &x.data[t * c.in_channels..t * c.in_channels + span];
                for f in 0..c.filters {
                    y.push(c.bias[f] + dot(&c.weight[f * span..(f + 1) * span], window));
                }
            }
            if apply_act {
                activate(c.activation, &mut y);
            }
            if let Some(cache) = cache {
                cache.push(Cache::Conv { input: x.data, len, output: y.clone() });
            }
            y
        }
        Layer::Dense(d) => {
            let mut y: Vec<f64> = (0..d.units)
                .map(|u| d.bias[u] + dot(&d.weight[u * d.inputs..(u + 1) * d.inputs], &x.data))
                .collect();
            if apply_act {
                activate(d.activation, &mut y);
            }
            if let Some(cache) = cache {
                cache.push(Cache::Dense { input: x.data, output: y.clone() });
            }
            y
        }
        Layer::MaxPool1d { pool, stride } => {
            let Shape::Seq { channels, .. } = x.shape else { unreachable!() };
            let Shape::Seq { len: out_len, .. } = out_shape else { unreachable!() };
            let mut y = Vec::with_capacity(out_len * channels);
            let mut argmax = Vec::with_capacity(out_len * channels);
            for t in 0..out_len {
                for c in 0..channels {
                    let mut best = (t * stride) * channels + c;
                    for j in 1..*pool {
                        let i = (t * stride + j) * channels + c;
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                    y.push(x.data[best]);
                    argmax.push(best);
                }
            }
            if let Some(cache) = cache {
                cache.push(Cache::MaxPool { in_shape: x.shape, argmax });
            }
            y
        }
        Layer::AvgPool1d { pool, stride } => {
            let Shape::Seq { channels, .. } = x.shape else { unreachable!() };
            let Shape::Seq { len: out_len, .. } = out_shape else { unreachable!() };
            let mut y = Vec::with_capacity(out_len * channels);
            for t in 0..out_len {
                for c in 0..channels {
                    let s: f64 = (0..*pool).map(|j| x.data[(t * stride + j) * channels + c]).sum();
                    y.push(s / *pool as f64);
                }
            }
            if let Some(cache) = cache {
                cache.push(Cache::AvgPool { in_shape: x.shape });
            }
            y
        }
        Layer::Flatten => {
            if let Some(cache) = cache {
                cache.push(Cache::Reshape);
            }
            x.data
        }
        Layer::Dropout { rate } => match mode {
            Mode::Train(rng) if *rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.data.len())
                    .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                    .collect();
                let y = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
                if let Some(cache) = cache {
                    cache.push(Cache::Dropout { mask: Some(mask) });
                }
                y
            }
            _ => {
                if let Some(cache) = cache {
                    cache.push(Cache::Dropout { mask: None });
                }
                x.data
            }
        },
        Layer::Residual { body } => {
            let act = match body.last() {
                Some(Layer::Conv1d(c)) => c.activation,
                Some(Layer::Dense(d)) => d.activation,
                _ => unreachable!(),
            };
            let skip = x.data.clone();
            let mut sub = cache.as_ref().map(|_| Vec::new());
            let z = seq_forward(body, x, mode, sub.as_mut(), true)?;
            let mut y: Vec<f64> = z.data.iter().zip(&skip).map(|(a, b)| a + b).collect();
            activate(act, &mut y);
            if let Some(cache) = cache {
                cache.push(Cache::Residual { body: sub.unwrap(), output: y.clone() });
            }
            y
        }
        Layer::Concat { branches } => {
            let in_size = x.data.len();
            let mut outs = Vec::with_capacity(branches.len());
            let mut subs = Vec::new();
            for b in branches {
                let mut sub = cache.as_ref().map(|_| Vec::new());
                outs.push(seq_forward(b, x.clone(), mode, sub.as_mut(), false)?);
                if let Some(s) = sub {
                    subs.push(s);
                }
            }
            let widths: Vec<Shape> = outs.iter().map(|o| o.shape).collect();
            let y = concat_data(&outs);
            if let Some(cache) = cache {
                cache.push(Cache::Concat { branches: subs, widths, in_size });
            }
            y
        }
    };
    Tensor::new(out_shape, out)
}

fn concat_data(parts: &[Tensor]) -> Vec<f64> {
    match parts[0].shape {
        Shape::Flat(_) => parts.iter().flat_map(|p| p.data.iter().copied()).collect(),
        Shape::Seq { len, .. } => {
            let mut y = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
            for t in 0..len {
                for p in parts {
                    let Shape::Seq { channels, .. } = p.shape else { unreachable!() };
                    y.extend_from_slice(&p.data[t * channels..(t + 1) * channels]);
                }
            }
            y
        }
    }
}

fn seq_forward(layers: &[Layer], mut x: Tensor, mode: &mut Mode, mut cache: Option<&mut Vec<Cache>>, defer_last: bool) -> Result<Tensor> {
    let n = layers.len();
    for (i, layer) in layers.iter().enumerate() {
        let apply_act = !(defer_last && i + 1 == n);
        x = layer_forward(layer, x, mode, cache.as_deref_mut(), apply_act)?;
    }
    Ok(x)
}

/// Backward through one layer. `grads` holds exactly this layer's parameter tensors.
fn layer_backward(layer: &Layer, cache: Cache, mut grad: Vec<f64>, grads: &mut [Vec<f64>], apply_act: bool) -> Vec<f64> {
    match (layer, cache) {
        (Layer::Conv1d(c), Cache::Conv { input, len, output }) => {
            if apply_act {
                activation_backward(c.activation, &output, &mut grad);
            }
            let out_len = len - c.kernel + 1;
            let span = c.kernel * c.in_channels;
            let (gw, gb) = grads.split_at_mut(1);
            let (gw, gb) = (&mut gw[0], &mut gb[0]);
            let mut gx = vec![0.0; input.len()];
            for t in 0..out_len {
                let window = &input[t * c.in_channels..t * c.in_channels + span];
                for f in 0..c.filters {
                    let g = grad[t * c.filters + f];
                    if g == 0.0 {
                        continue;
                    }
                    gb[f] += g;
                    axpy(g, window, &mut gw[f * span..(f + 1) * span]);
                    axpy(g, &c.weight[f * span..(f + 1) * span], &mut gx[t * c.in_channels..t * c.in_channels + span]);
                }
            }
            gx
        }
        (Layer::Dense(d), Cache::Dense { input, output }) => {
            if apply_act {
                activation_backward(d.activation, &output, &mut grad);
            }
            let (gw, gb) = grads.split_at_mut(1);
            let (gw, gb) = (&mut gw[0], &mut gb[0]);
            let mut gx = vec![0.0; d.inputs];
            for u in 0..d.units {
                let g = grad[u];
                if g == 0.0 {
                    continue;
                }
                gb[u] += g;
                let row = u * d.inputs..(u + 1) * d.inputs;
                axpy(g, &input, &mut gw[row.clone()]);
                axpy(g, &d.weight[row], &mut gx);
            }
            gx
        }
        (Layer::MaxPool1d { .. }, Cache::MaxPool { in_shape, argmax }) => {
            let mut gx = vec![0.0; in_shape.size()];
            for (g, &i) in grad.iter().zip(&argmax) {
                gx[i] += g;
            }
            gx
        }
        (Layer::AvgPool1d { pool, stride }, Cache::AvgPool { in_shape }) => {
            let Shape::Seq { channels, .. } = in_shape else { unreachable!() };
            let mut gx = vec![0.0; in_shape.size()];
            let out_len = grad.len() / channels;
            for t in 0..out_len {
                for c in 0..channels {
                    let g = grad[t * channels + c] / *pool as f64;
                    for j in 0..*pool {
                        gx[(t * stride + j) * channels + c] += g;
                    }
                }
            }
            gx
        }
        (Layer::Flatten, Cache::Reshape) => grad,
        (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
            if let Some(mask) = mask {
                grad.iter_mut().zip(&mask).for_each(|(g, m)| *g *= m);
            }
            grad
        }
        (Layer::Residual { body }, Cache::Residual { body: sub, output }) => {
            let act = match body.last() {
                Some(Layer::Conv1d(c)) => c.activation,
                Some(Layer::Dense(d)) => d.activation,
                _ => unreachable!(),
            };
            activation_backward(act, &output, &mut grad);
            let mut gx = seq_backward(body, sub, grad.clone(), grads, true);
            gx.iter_mut().zip(&grad).for_each(|(a, b)| *a += b);
            gx
        }
        (Layer::Concat { branches }, Cache::Concat { branches: subs, widths, in_size }) => {
            let mut gx = vec![0.0; in_size];
            let parts = split_concat_grad(&grad, &widths);
            let mut offset = 0;
            for ((b, sub), g) in branches.iter().zip(subs).zip(parts) {
                let n: usize = b.iter().map(Layer::param_tensors).sum();
                let gb = seq_backward(b, sub, g, &mut grads[offset..offset + n], false);
                gx.iter_mut().zip(&gb).for_each(|(a, v)| *a += v);
                offset += n;
            }
            gx
        }
        _ => unreachable!("cache does not match layer"),
    }
}

fn split_concat_grad(grad: &[f64], widths: &[Shape]) -> Vec<Vec<f64>> {
    match widths[0] {
        Shape::Flat(_) => {
            let mut parts = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for w in widths {
                parts.push(grad[offset..offset + w.size()].to_vec());
                offset += w.size();
            }
            parts
        }
        Shape::Seq { len, .. } => {
            let chans: Vec<usize> = widths
                .iter()
                .map(|w| match w {
                    Shape::Seq { channels, .. } => *channels,
                    Shape::Flat(_) => unreachable!(),
                })
                .collect();
            let total: usize = chans.iter().sum();
            let mut parts: Vec<Vec<f64>> = chans.iter().map(|c| Vec::with_capacity(c * len)).collect();
            for t in 0..len {
                let mut offset = t * total;
                for (p, &c) in parts.iter_mut().zip(&chans) {
                    p.extend_from_slice(&grad[offset..offset + c]);
                    offset += c;
                }
            }
            parts
        }
    }
}

fn seq_backward(layers: &[Layer], caches: Vec<Cache>, mut grad: Vec<f64>, grads: &mut [Vec<f64>], defer_last: bool) -> Vec<f64> {
    let n = layers.len();
    let mut end = grads.len();
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let k = layer.param_tensors();
        let apply_act = !(defer_last && i + 1 == n);
        grad = layer_backward(layer, cache, grad, &mut grads[end - k..end], apply_act);
        end -= k;
    }
    grad
}

/// Parameter gradients aligned with [`CnnModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Gradients(model.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Layer graph plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

pub const CHECKPOINT_FORMAT: &str = "respira-cnn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    param_count: usize,
    model: CnnModel,
}

/// Width settings of the respiratory classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub timesteps: usize,
    pub features: usize,
    pub filters: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            timesteps: crate::features::DEFAULT_SAMPLES_PER_WINDOW,
            features: crate::features::FEATURE_COUNT,
            filters: 64,
            kernel: 1,
            dropout: 0.01,
            hidden1: 200,
            hidden2: 100,
            classes: 2,
        }
    }
}

impl CnnModel {
    /// Validate the shape chain. Softmax is only allowed on a final dense layer.
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        let model = CnnModel { input, layers };
        model.output_shape()?;
        fn check(layers: &[Layer], top: bool) -> Result<()> {
            for (i, l) in layers.iter().enumerate() {
                let last = top && i + 1 == layers.len();
                match l {
                    Layer::Conv1d(Conv1d { activation: Activation::Softmax, .. }) => {
                        return Err(Error::InvalidArgument("softmax is only supported on the output dense layer".into()))
                    }
                    Layer::Dense(d) if d.activation == Activation::Softmax && !last => {
                        return Err(Error::InvalidArgument("softmax is only supported on the output dense layer".into()))
                    }
                    Layer::Residual { body } => check(body, false)?,
                    Layer::Concat { branches } => branches.iter().try_for_each(|b| check(b, false))?,
                    _ => {}
                }
            }
            Ok(())
        }
        check(&model.layers, true)?;
        Ok(model)
    }

    /// Conv1D(ReLU) -> MaxPool1D -> Flatten -> Dropout -> Dense(ReLU) -> Dense(ReLU) ->
    /// Dense(softmax), Glorot-uniform initialized from `seed`.
    pub fn respiratory(arch: &Architecture, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x494e4954]);
        let conv_len = arch.timesteps - arch.kernel + 1;
        let layers = vec![
            Layer::Conv1d(Conv1d::new(arch.features, arch.filters, arch.kernel, Activation::Relu, &mut r)),
            Layer::MaxPool1d { pool: 1, stride: 1 },
            Layer::Flatten,
            Layer::Dropout { rate: arch.dropout },
            Layer::Dense(Dense::new(conv_len * arch.filters, arch.hidden1, Activation::Relu, &mut r)),
            Layer::Dense(Dense::new(arch.hidden1, arch.hidden2, Activation::Relu, &mut r)),
            Layer::Dense(Dense::new(arch.hidden2, arch.classes, Activation::Softmax, &mut r)),
        ];
        CnnModel::new(
            Shape::Seq {
                len: arch.timesteps,
                channels: arch.features,
            },
            layers,
        )
        .expect("architecture shapes are consistent")
    }

    pub fn output_shape(&self) -> Result<Shape> {
        chain_shape(&self.layers, self.input)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.collect_params(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.collect_params_mut(&mut out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape != self.input {
            return Err(Error::Shape(format!("model expects {:?}, got {:?}", self.input, x.shape)));
        }
        Ok(())
    }

    /// Output vector of one example (class probabilities for a softmax head).
    pub fn forward(&self, x: &Tensor, mut mode: Mode) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(seq_forward(&self.layers, x.clone(), &mut mode, None, false)?.data)
    }

    pub fn forward_batch(&self, batch: &[Tensor], mut mode: Mode) -> Result<Vec<Vec<f64>>> {
        batch
            .iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(seq_forward(&self.layers, x.clone(), &mut mode, None, false)?.data)
            })
            .collect()
    }

    /// Inference pass that lets `hook(index, layer, output)` rewrite each top-level
    /// layer's output before it feeds the next layer.
    pub fn forward_hooked<F>(&self, x: &Tensor, mut hook: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &Layer, &mut Tensor),
    {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            cur = layer_forward(l, cur, &mut Mode::Infer, None, true)?;
            hook(i, l, &mut cur);
        }
        Ok(cur.data)
    }

    /// Outputs of every top-level layer for one example (inference mode).
    pub fn layer_outputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            cur = layer_forward(l, cur, &mut Mode::Infer, None, true)?;
            outs.push(cur.clone());
        }
        Ok(outs)
    }

    pub fn predict_proba(&self, windows: &[FeatureWindow]) -> Result<Vec<Vec<f64>>> {
        windows
            .iter()
            .map(|w| self.forward(&Tensor::from_window(w), Mode::Infer))
            .collect()
    }

    fn has_softmax_head(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Dense(d)) if d.activation == Activation::Softmax)
    }

    /// Summed cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_gradients(&self, batch: &[Tensor], labels: &[usize], mut mode: Mode) -> Result<(f64, Gradients)> {
        if batch.len() != labels.len() {
            return Err(Error::Shape(format!("{} examples but {} labels", batch.len(), labels.len())));
        }
        if !self.has_softmax_head() {
            return Err(Error::InvalidArgument("cross-entropy requires a softmax output layer".into()));
        }
        let classes = self.output_shape()?.size();
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for (x, &y) in batch.iter().zip(labels) {
            if y >= classes {
                return Err(Error::OutOfRange(format!("label {y} with {classes} classes")));
            }
            self.check_input(x)?;
            let mut caches = Vec::with_capacity(self.layers.len());
            let p = seq_forward(&self.layers, x.clone(), &mut mode, Some(&mut caches), false)?.data;
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            let mut g = p;
            g[y] -= 1.0;
            seq_backward(&self.layers, caches, g, &mut grads.0, false);
        }
        Ok((loss, grads))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            param_count: self.param_count(),
            model: self.clone(),
        };
        let text = serde_json::to_string(&ck)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::schema(path, format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let model = CnnModel::new(ck.model.input, ck.model.layers)?;
        if model.param_count() != ck.param_count {
            return Err(Error::schema(path, "parameter count does not match header"));
        }
        for (i, p) in model.params().iter().enumerate() {
            let expected = expected_param_len(&model, i);
            if p.len() != expected {
                return Err(Error::schema(path, format!("parameter tensor {i} has {} values, expected {expected}", p.len())));
            }
        }
        Ok(model)
    }
}

fn expected_param_len(model: &CnnModel, index: usize) -> usize {
    fn walk(layers: &[Layer], out: &mut Vec<usize>) {
        for l in layers {
            match l {
                Layer::Conv1d(c) => {
                    out.push(c.filters * c.kernel * c.in_channels);
                    out.push(c.filters);
                }
                Layer::Dense(d) => {
                    out.push(d.units * d.inputs);
                    out.push(d.units);
                }
                Layer::Residual { body } => walk(body, out),
                Layer::Concat { branches } => branches.iter().for_each(|b| walk(b, out)),
                _ => {}
            }
        }
    }
    let mut sizes = Vec::new();
    walk(&model.layers, &mut sizes);
    sizes[index]
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &CnnModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Vec<f64>>, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (s1, s2) = (lr / c1, 1.0 / c2);
        for (((p, g), m), v) in params.into_iter().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                if *vi < f64::MIN_POSITIVE {
                    *vi = 0.0;
                }
                if mi.abs() < f64::MIN_POSITIVE {
                    *mi = 0.0;
                }
                *pi -= s1 * *mi / ((*vi * s2).sqrt() + eps);
            }
        }
    }
}
