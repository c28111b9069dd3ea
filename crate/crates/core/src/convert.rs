//! ANN-to-SNN conversion and data-based weight normalization.
//!
//! Every ReLU unit becomes an integrate-and-fire neuron, biases become constant input
//! currents, dropout disappears, flatten and unit pooling are pure rewiring, max pooling
//! becomes a first-spike gate, average pooling a rate-forwarding neuron with weights
//! `1/pool`, residual skips are weight-1 synapses and concatenation joins channel blocks.
//! A softmax head becomes categorical spike generators driven by accumulated input.
//!
//! Inputs are signed, so each analog input feeds a positive and a negative encoder
//! neuron whose outgoing weights carry opposite signs.

use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::nn::{Activation, CnnModel, Conv1d, Dense, Layer, Shape, Tensor};
use crate::snn::{LayerInfo, Neuron, NeuronKind, SnnNetwork, Synapse};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvertOptions {
    /// Default V_th in mV.
    pub v_th: f64,
    pub leak: f64,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions { v_th: 1.0, leak: 1.0 }
    }
}

/// Analog values of one layer as weighted neuron references.
struct Src {
    shape: Shape,
    nodes: Vec<Vec<(u32, f64)>>,
}

struct Builder {
    opts: ConvertOptions,
    neurons: Vec<Neuron>,
    synapses: Vec<Synapse>,
    layers: Vec<LayerInfo>,
    counter: usize,
}

impl Builder {
    fn add_layer(&mut self, name: &str, kind: NeuronKind, biases: &[f64]) -> u32 {
        let start = self.neurons.len() as u32;
        let layer = self.layers.len();
        self.counter += 1;
        self.layers.push(LayerInfo {
            name: format!("{name}_{}", self.counter),
            start,
            len: biases.len() as u32,
            lambda: 1.0,
        });
        for &b in biases {
            self.neurons.push(Neuron {
                kind,
                threshold: self.opts.v_th,
                bias: b,
                v_init: 0.0,
                leak: self.opts.leak,
                layer,
            });
        }
        start
    }

    fn connect(&mut self, from: &[(u32, f64)], post: u32, w: f64) {
        if w == 0.0 {
            return;
        }
        for &(pre, sign) in from {
            self.synapses.push(Synapse { pre, post, weight: w * sign });
        }
    }

    fn neuron_kind(&self, act: Activation, what: &str, is_head: bool) -> Result<NeuronKind> {
        match act {
            Activation::Relu => Ok(NeuronKind::If),
            Activation::Softmax if is_head => Ok(NeuronKind::PoissonSoftmax),
            Activation::Softmax => Err(Error::UnsupportedLayer(format!("{what} with softmax outside the output layer"))),
            Activation::Linear => Err(Error::UnsupportedLayer(format!("{what} with linear activation"))),
        }
    }

    fn conv(&mut self, c: &Conv1d, src: &Src, skip: Option<&Src>, is_head: bool) -> Result<Src> {
        let kind = self.neuron_kind(c.activation, "conv1d", is_head)?;
        let Shape::Seq { len, channels } = src.shape else { unreachable!() };
        let out_len = len - c.kernel + 1;
        let biases: Vec<f64> = (0..out_len).flat_map(|_| c.bias.iter().copied()).collect();
        let start = self.add_layer("conv1d", kind, &biases);
        for t in 0..out_len {
            for f in 0..c.filters {
                let post = start + (t * c.filters + f) as u32;
                for j in 0..c.kernel {
                    for ch in 0..channels {
                        self.connect(&src.nodes[(t + j) * channels + ch], post, c.w(f, j, ch));
                    }
                }
                if let Some(s) = skip {
                    self.connect(&s.nodes[t * c.filters + f], post, 1.0);
                }
            }
        }
        Ok(Src {
            shape: Shape::Seq { len: out_len, channels: c.filters },
            nodes: (0..biases.len() as u32).map(|i| vec![(start + i, 1.0)]).collect(),
        })
    }

    fn dense(&mut self, d: &Dense, src: &Src, skip: Option<&Src>, is_head: bool) -> Result<Src> {
        let kind = self.neuron_kind(d.activation, "dense", is_head)?;
        let start = self.add_layer(if kind == NeuronKind::PoissonSoftmax { "softmax" } else { "dense" }, kind, &d.bias);
        for u in 0..d.units {
            let post = start + u as u32;
            for i in 0..d.inputs {
                self.connect(&src.nodes[i], post, d.weight[u * d.inputs + i]);
            }
            if let Some(s) = skip {
                self.connect(&s.nodes[u], post, 1.0);
            }
        }
        Ok(Src {
            shape: Shape::Flat(d.units),
            nodes: (0..d.units as u32).map(|i| vec![(start + i, 1.0)]).collect(),
        })
    }

    fn layer(&mut self, layer: &Layer, src: Src, skip: Option<&Src>, is_head: bool) -> Result<Src> {
        let out_shape = layer.output_shape(src.shape)?;
        match layer {
            Layer::Conv1d(c) => self.conv(c, &src, skip, is_head),
            Layer::Dense(d) => self.dense(d, &src, skip, is_head),
            Layer::Flatten | Layer::Dropout { .. } => Ok(Src { shape: out_shape, nodes: src.nodes }),
            Layer::MaxPool1d { pool, stride } | Layer::AvgPool1d { pool, stride } => {
                let Shape::Seq { channels, .. } = src.shape else { unreachable!() };
                let Shape::Seq { len: out_len, .. } = out_shape else { unreachable!() };
                let pick = |t: usize, j: usize, c: usize| (t * stride + j) * channels + c;
                if *pool == 1 {
                    let nodes = (0..out_len).flat_map(|t| (0..channels).map(move |c| (t, c))).map(|(t, c)| src.nodes[pick(t, 0, c)].clone()).collect();
                    return Ok(Src { shape: out_shape, nodes });
                }
                if src.nodes.iter().any(|n| n.len() != 1 || n[0].1 != 1.0) {
                    return Err(Error::UnsupportedLayer(format!("{} over signed inputs", layer.name())));
                }
                let is_max = matches!(layer, Layer::MaxPool1d { .. });
                let (kind, name, w) = if is_max {
                    (NeuronKind::MaxGate, "max_gate", 1.0)
                } else {
                    (NeuronKind::If, "avg_pool", 1.0 / *pool as f64)
                };
                let start = self.add_layer(name, kind, &vec![0.0; out_len * channels]);
                for t in 0..out_len {
                    for c in 0..channels {
                        let post = start + (t * channels + c) as u32;
                        for j in 0..*pool {
                            self.connect(&src.nodes[pick(t, j, c)], post, w);
                        }
                    }
                }
                Ok(Src {
                    shape: out_shape,
                    nodes: (0..(out_len * channels) as u32).map(|i| vec![(start + i, 1.0)]).collect(),
                })
            }
            Layer::Residual { body } => {
                let (last, init) = body.split_last().expect("validated non-empty body");
                let mut cur = Src { shape: src.shape, nodes: src.nodes.clone() };
                for l in init {
                    cur = self.layer(l, cur, None, false)?;
                }
                self.layer(last, cur, Some(&src), false)
            }
            Layer::Concat { branches } => {
                let mut outs = Vec::with_capacity(branches.len());
                for b in branches {
                    let mut cur = Src { shape: src.shape, nodes: src.nodes.clone() };
                    for l in b {
                        cur = self.layer(l, cur, None, false)?;
                    }
                    outs.push(cur);
                }
                let nodes = match out_shape {
                    Shape::Flat(_) => outs.into_iter().flat_map(|o| o.nodes).collect(),
                    Shape::Seq { len, .. } => {
                        let mut nodes = Vec::new();
                        for t in 0..len {
                            for o in &outs {
                                let Shape::Seq { channels, .. } = o.shape else { unreachable!() };
                                nodes.extend_from_slice(&o.nodes[t * channels..(t + 1) * channels]);
                            }
                        }
                        nodes
                    }
                };
                Ok(Src { shape: out_shape, nodes })
            }
        }
    }
}

/// Convert a trained model. All normalization factors start at 1.
pub fn convert(model: &CnnModel, opts: ConvertOptions) -> Result<SnnNetwork> {
    if !(opts.v_th > 0.0) {
        return Err(Error::InvalidArgument("V_th must be positive".into()));
    }
    let mut b = Builder {
        opts,
        neurons: Vec::new(),
        synapses: Vec::new(),
        layers: Vec::new(),
        counter: 0,
    };
    let n_in = model.input.size();
    b.layers.push(LayerInfo { name: "input".into(), start: 0, len: 2 * n_in as u32, lambda: 1.0 });
    for _ in 0..2 * n_in {
        b.neurons.push(Neuron {
            kind: NeuronKind::Input,
            threshold: opts.v_th,
            bias: 0.0,
            v_init: 0.0,
            leak: 1.0,
            layer: 0,
        });
    }
    let mut src = Src {
        shape: model.input,
        nodes: (0..n_in as u32).map(|i| vec![(2 * i, 1.0), (2 * i + 1, -1.0)]).collect(),
    };
    let n = model.layers.len();
    for (i, l) in model.layers.iter().enumerate() {
        src = b.layer(l, src, None, i + 1 == n)?;
    }
    let outputs: Vec<u32> = src
        .nodes
        .iter()
        .map(|nd| match nd.as_slice() {
            [(id, s)] if *s == 1.0 && *id >= 2 * n_in as u32 => Ok(*id),
            _ => Err(Error::UnsupportedLayer("network output is not a spiking layer".into())),
        })
        .collect::<Result<_>>()?;
    let net = SnnNetwork {
        neurons: b.neurons,
        synapses: b.synapses,
        layers: b.layers,
        inputs: (0..2 * n_in as u32).collect(),
        outputs,
        v_th: opts.v_th,
    };
    net.validate()?;
    Ok(net)
}

/// Encoder-level analog values: `(max(x, 0), max(-x, 0))` per input element.
pub fn input_activations(x: &[f64]) -> Vec<f64> {
    x.iter().flat_map(|&v| [v.max(0.0), (-v).max(0.0)]).collect()
}

/// Analog evaluation of the spiking graph in normalized units (activation / lambda).
/// `inputs` are raw encoder-level values in the order of `net.inputs`.
pub fn analog_forward(net: &SnnNetwork, inputs: &[f64]) -> Result<Vec<f64>> {
    if inputs.len() != net.inputs.len() {
        return Err(Error::Shape(format!("{} input values for {} input neurons", inputs.len(), net.inputs.len())));
    }
    let (off, tgt, w) = net.outgoing();
    let n = net.neurons.len();
    let mut z = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut gate_max = vec![f64::NEG_INFINITY; n];
    for (k, &id) in net.inputs.iter().enumerate() {
        z[id as usize] = inputs[k] / net.layer_of(id).lambda;
    }
    for i in 0..n {
        let nr = &net.neurons[i];
        a[i] = match nr.kind {
            NeuronKind::Input => z[i],
            NeuronKind::If => (z[i] + nr.bias).max(0.0),
            NeuronKind::MaxGate => gate_max[i].max(0.0),
            NeuronKind::PoissonSoftmax => z[i] + nr.bias,
        };
        for e in off[i]..off[i + 1] {
            let p = tgt[e] as usize;
            if net.neurons[p].kind == NeuronKind::MaxGate {
                gate_max[p] = gate_max[p].max(a[i]);
            } else {
                z[p] += w[e] * a[i];
            }
        }
    }
    Ok(a)
}

/// Nearest-rank percentile of the strictly positive values; `None` if there are none.
pub fn positive_percentile(values: &mut Vec<f64>, pct: f64) -> Option<f64> {
    values.retain(|v| *v > 0.0);
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    // The epsilon keeps exact ranks like 99.9% of 1000 from rounding up.
    let rank = ((pct / 100.0) * values.len() as f64 - 1e-9).ceil() as usize;
    Some(values[rank.clamp(1, values.len()) - 1])
}

pub const DEFAULT_PERCENTILE: f64 = 99.9;

/// Set each layer's lambda to the given percentile of its positive analog activations
/// over `calibration` and rescale weights by `lambda_pre / lambda_post` and biases by
/// `1 / lambda_post`. Softmax heads keep lambda 1; max gates inherit their source's.
pub fn normalize_weights(net: &SnnNetwork, calibration: &[Vec<f64>], percentile: f64) -> Result<SnnNetwork> {
    if calibration.is_empty() {
        return Err(Error::InsufficientData("empty calibration batch".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside (0, 100]")));
    }
    // Work on an unnormalized copy so repeated normalization is stable.
    let mut raw = net.clone();
    let old: Vec<f64> = net.layers.iter().map(|l| l.lambda).collect();
    for s in raw.synapses.iter_mut() {
        let (lp, lq) = (old[raw.neurons[s.pre as usize].layer], old[raw.neurons[s.post as usize].layer]);
        if raw.neurons[s.post as usize].kind != NeuronKind::MaxGate {
            s.weight *= lq / lp;
        }
    }
    for nr in raw.neurons.iter_mut() {
        nr.bias *= old[nr.layer];
    }
    raw.layers.iter_mut().for_each(|l| l.lambda = 1.0);

    let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); raw.layers.len()];
    for x in calibration {
        let a = analog_forward(&raw, x)?;
        for (li, l) in raw.layers.iter().enumerate() {
            per_layer[li].extend_from_slice(&a[l.start as usize..(l.start + l.len) as usize]);
        }
    }
    let first_pre: Vec<Option<u32>> = {
        let mut f = vec![None; raw.neurons.len()];
        for s in &raw.synapses {
            f[s.post as usize].get_or_insert(s.pre);
        }
        f
    };
    let mut lambda = vec![1.0; raw.layers.len()];
    for (li, l) in raw.layers.iter().enumerate() {
        let kind = raw.neurons[l.start as usize].kind;
        lambda[li] = match kind {
            NeuronKind::PoissonSoftmax => 1.0,
            NeuronKind::MaxGate => first_pre[l.start as usize].map_or(1.0, |p| lambda[raw.neurons[p as usize].layer]),
            _ => positive_percentile(&mut per_layer[li], percentile).unwrap_or(1.0),
        };
    }
    let mut out = raw;
    for s in out.synapses.iter_mut() {
        let (lp, lq) = (lambda[out.neurons[s.pre as usize].layer], lambda[out.neurons[s.post as usize].layer]);
        if out.neurons[s.post as usize].kind != NeuronKind::MaxGate {
            s.weight *= lp / lq;
        }
    }
    for nr in out.neurons.iter_mut() {
        nr.bias /= lambda[nr.layer];
    }
    for (l, lam) in out.layers.iter_mut().zip(&lambda) {
        l.lambda = *lam;
    }
    out.validate()?;
    Ok(out)
}

/// Encoder-level calibration inputs from feature windows.
pub fn calibration_inputs(windows: &[FeatureWindow]) -> Vec<Vec<f64>> {
    windows.iter().map(|w| input_activations(&Tensor::from_window(w).data)).collect()
}

/// Three inputs feeding two ReLU units through weights 0.2 and 0.1; with every input at
/// 1 the analog outputs are 0.6 and 0.3.
pub fn two_unit_example() -> CnnModel {
    CnnModel::new(
        Shape::Flat(3),
        vec![Layer::Dense(Dense {
            inputs: 3,
            units: 2,
            activation: Activation::Relu,
            weight: vec![0.2, 0.2, 0.2, 0.1, 0.1, 0.1],
            bias: vec![0.0, 0.0],
        })],
    )
    .expect("static shapes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use crate::rng;
    use rand::Rng;

    fn random_windows(n: usize, timesteps: usize, seed: u64) -> Vec<FeatureWindow> {
        let mut r = rng::stream(seed, &[3]);
        (0..n)
            .map(|i| FeatureWindow {
                samples: (0..timesteps).map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect(),
                label: (i % 2) as u8,
                window_start: i as f64,
            })
            .collect()
    }

    fn small_arch() -> Architecture {
        Architecture { timesteps: 6, filters: 5, hidden1: 7, hidden2: 4, ..Architecture::default() }
    }

    /// The analog pass of the spiking graph reproduces the CNN layer by layer.
    #[test]
    fn analog_graph_matches_cnn() {
        let mut model = CnnModel::respiratory(&small_arch(), 4);
        let mut r = rng::stream(4, &[1]);
        for p in model.params_mut() {
            p.iter_mut().for_each(|v| *v = r.random_range(-0.7..0.7));
        }
        let net = convert(&model, ConvertOptions::default()).unwrap();
        let ws = random_windows(5, 6, 1);
        let norm = normalize_weights(&net, &calibration_inputs(&ws), DEFAULT_PERCENTILE).unwrap();
        for w in &ws {
            let x = Tensor::from_window(w);
            let outs = model.layer_outputs(&x).unwrap();
            for candidate in [&net, &norm] {
                let a = analog_forward(candidate, &input_activations(&x.data)).unwrap();
                let conv = &candidate.layers[1];
                for (k, v) in outs[0].data.iter().enumerate() {
                    assert!((a[conv.start as usize + k] * conv.lambda - v).abs() < 1e-9);
                }
                // softmax logits: compare probabilities
                let mut logits: Vec<f64> = candidate.outputs.iter().map(|&o| a[o as usize]).collect();
                crate::nn::softmax_in_place(&mut logits);
                let p = outs.last().unwrap();
                for (x, y) in logits.iter().zip(&p.data) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn conversion_preserves_unit_count_and_unit_pool_is_rewiring() {
        let model = CnnModel::respiratory(&small_arch(), 1);
        let net = convert(&model, ConvertOptions::default()).unwrap();
        let analog_units = 6 * 5 + 7 + 4 + 2;
        assert_eq!(net.len() - net.inputs.len(), analog_units);
        assert!(net.neurons.iter().all(|n| n.kind != NeuronKind::MaxGate));
        assert_eq!(net.outputs.len(), 2);
        assert!(net.outputs.iter().all(|&o| net.neurons[o as usize].kind == NeuronKind::PoissonSoftmax));
    }

    #[test]
    fn pooling_residual_and_concat_convert() {
        let mut r = rng::stream(9, &[0]);
        let model = CnnModel::new(
            Shape::Seq { len: 6, channels: 2 },
            vec![
                Layer::Conv1d(Conv1d::new(2, 3, 1, Activation::Relu, &mut r)),
                Layer::Residual { body: vec![Layer::Conv1d(Conv1d::new(3, 3, 1, Activation::Relu, &mut r))] },
                Layer::Concat {
                    branches: vec![
                        vec![Layer::MaxPool1d { pool: 2, stride: 2 }],
                        vec![Layer::AvgPool1d { pool: 2, stride: 2 }],
                    ],
                },
                Layer::Flatten,
                Layer::Dense(Dense::new(18, 2, Activation::Softmax, &mut r)),
            ],
        )
        .unwrap();
        let net = convert(&model, ConvertOptions::default()).unwrap();
        assert_eq!(net.neurons.iter().filter(|n| n.kind == NeuronKind::MaxGate).count(), 9);
        let x = random_windows(1, 6, 2)[0].clone();
        let t = Tensor::from_window(&x);
        let a = analog_forward(&net, &input_activations(&t.data)).unwrap();
        let mut logits: Vec<f64> = net.outputs.iter().map(|&o| a[o as usize]).collect();
        crate::nn::softmax_in_place(&mut logits);
        let p = model.forward(&t, crate::nn::Mode::Infer).unwrap();
        for (x, y) in logits.iter().zip(&p) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn unsupported_layers_are_named() {
        let mut r = rng::stream(9, &[0]);
        let model = CnnModel::new(Shape::Flat(3), vec![Layer::Dense(Dense::new(3, 2, Activation::Linear, &mut r))]).unwrap();
        match convert(&model, ConvertOptions::default()) {
            Err(Error::UnsupportedLayer(m)) => assert!(m.contains("dense")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_is_invariant_to_rescaled_layers() {
        let mut model = CnnModel::respiratory(&small_arch(), 2);
        let ws = random_windows(20, 6, 3);
        let base = normalize_weights(&convert(&model, ConvertOptions::default()).unwrap(), &calibration_inputs(&ws), 99.9).unwrap();
        // Scale the first dense layer by 10 and undo it in the next one.
        let mut dense = model.layers.iter_mut().filter_map(|l| if let Layer::Dense(d) = l { Some(d) } else { None });
        let d1 = dense.next().unwrap();
        d1.weight.iter_mut().chain(d1.bias.iter_mut()).for_each(|v| *v *= 10.0);
        let d2 = dense.next().unwrap();
        d2.weight.iter_mut().for_each(|v| *v /= 10.0);
        let scaled = normalize_weights(&convert(&model, ConvertOptions::default()).unwrap(), &calibration_inputs(&ws), 99.9).unwrap();
        for (a, b) in base.synapses.iter().zip(&scaled.synapses) {
            assert!((a.weight - b.weight).abs() <= 1e-12 * a.weight.abs().max(1.0));
        }
        // renormalizing an already normalized network changes nothing
        let again = normalize_weights(&base, &calibration_inputs(&ws), 99.9).unwrap();
        for (a, b) in base.synapses.iter().zip(&again.synapses) {
            assert!((a.weight - b.weight).abs() <= 1e-12 * a.weight.abs().max(1.0));
        }
    }

    #[test]
    fn small_activations_keep_their_max_as_lambda() {
        let model = two_unit_example();
        let net = convert(&model, ConvertOptions::default()).unwrap();
        let cal = vec![input_activations(&[1.0, 1.0, 1.0]), input_activations(&[0.5, 0.5, 0.5])];
        let norm = normalize_weights(&net, &cal, 100.0).unwrap();
        assert!((norm.layers[1].lambda - 0.6).abs() < 1e-12);
        assert_eq!(norm.layers[0].lambda, 1.0);
        assert!(normalize_weights(&net, &[], 99.9).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let mut v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        v.push(-5.0);
        v.push(0.0);
        assert_eq!(positive_percentile(&mut v, 99.9), Some(999.0));
        assert_eq!(positive_percentile(&mut vec![0.0, -1.0], 99.9), None);
    }
}
