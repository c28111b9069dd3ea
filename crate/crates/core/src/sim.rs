//! Discrete-time integrate-and-fire simulation: encoding, integration, decoding and
//! dataset-level evaluation.
//!
//! Within a timestep neurons update in id order and spikes are delivered immediately, so
//! an input spike can traverse the whole network in the step it was emitted.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convert::input_activations;
use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::metrics::{self, MetricsReport};
use crate::nn::{softmax_in_place, Tensor};
use crate::rng;
use crate::snn::{NeuronKind, SnnNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub timesteps: usize,
    /// Global V_th override in mV; `None` keeps each neuron's stored threshold.
    pub v_th: Option<f64>,
    /// Global leak override.
    pub leak: Option<f64>,
    pub seed: u64,
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            timesteps: 256,
            v_th: None,
            leak: None,
            seed: 42,
            record_events: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::InvalidArgument("timesteps must be >= 1".into()));
        }
        if let Some(v) = self.v_th {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("V_th must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Input spikes laid out `[timestep][input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTrains {
    pub timesteps: usize,
    pub inputs: usize,
    pub bits: Vec<bool>,
}

impl InputTrains {
    #[inline]
    pub fn get(&self, t: usize, i: usize) -> bool {
        self.bits[t * self.inputs + i]
    }

    pub fn count(&self, i: usize) -> usize {
        (0..self.timesteps).filter(|&t| self.get(t, i)).count()
    }
}

/// Bernoulli encoding of encoder-level values: input `i` fires with probability
/// `clip(values[i] / lambda_in, 0, 1)`. Uniforms are drawn timestep-major, so shorter
/// horizons see a prefix of the same trains.
pub fn encode_values(net: &SnnNetwork, values: &[f64], timesteps: usize, seed: u64) -> Result<InputTrains> {
    if values.len() != net.inputs.len() {
        return Err(Error::Shape(format!("{} values for {} input neurons", values.len(), net.inputs.len())));
    }
    let probs: Vec<f64> = net
        .inputs
        .iter()
        .zip(values)
        .map(|(&id, &v)| (v / net.layer_of(id).lambda).clamp(0.0, 1.0))
        .collect();
    let mut r = rng::stream(seed, &[0x454e43]);
    let mut bits = Vec::with_capacity(timesteps * probs.len());
    for _ in 0..timesteps {
        for &p in &probs {
            bits.push(r.random::<f64>() < p);
        }
    }
    Ok(InputTrains { timesteps, inputs: probs.len(), bits })
}

/// Encode a feature window with the two-channel signed scheme.
pub fn encode(net: &SnnNetwork, window: &FeatureWindow, timesteps: usize, seed: u64) -> Result<InputTrains> {
    encode_values(net, &input_activations(&Tensor::from_window(window).data), timesteps, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrace {
    pub timesteps: usize,
    /// `(neuron, timestep)` in emission order; empty unless recording was requested.
    pub events: Vec<(u32, u32)>,
    pub counts: Vec<u32>,
    pub total: u64,
}

impl SpikeTrace {
    pub fn rates(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.timesteps as f64).collect()
    }
}

/// Reusable simulation state for one network and configuration.
pub struct Engine<'a> {
    net: &'a SnnNetwork,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    kinds: Vec<NeuronKind>,
    threshold: Vec<f64>,
    leak: Vec<f64>,
    bias: Vec<f64>,
    input_slot: Vec<u32>,
    v: Vec<f64>,
    inc: Vec<f64>,
    winner: Vec<u32>,
    gate_fire: Vec<bool>,
    softmax_ids: Vec<u32>,
}

const NONE: u32 = u32::MAX;

impl<'a> Engine<'a> {
    pub fn new(net: &'a SnnNetwork, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        net.validate()?;
        let (offsets, targets, weights) = net.outgoing();
        let n = net.neurons.len();
        let mut input_slot = vec![NONE; n];
        for (k, &id) in net.inputs.iter().enumerate() {
            input_slot[id as usize] = k as u32;
        }
        Ok(Engine {
            net,
            offsets,
            targets,
            weights,
            kinds: net.neurons.iter().map(|x| x.kind).collect(),
            threshold: net.neurons.iter().map(|x| cfg.v_th.unwrap_or(x.threshold)).collect(),
            leak: net.neurons.iter().map(|x| cfg.leak.unwrap_or(x.leak)).collect(),
            bias: net.neurons.iter().map(|x| x.bias).collect(),
            input_slot,
            v: vec![0.0; n],
            inc: vec![0.0; n],
            winner: vec![NONE; n],
            gate_fire: vec![false; n],
            softmax_ids: (0..n as u32).filter(|&i| net.neurons[i as usize].kind == NeuronKind::PoissonSoftmax).collect(),
        })
    }

    fn reset(&mut self) {
        for (v, nr) in self.v.iter_mut().zip(&self.net.neurons) {
            *v = nr.v_init;
        }
        self.inc.iter_mut().for_each(|x| *x = 0.0);
        self.winner.iter_mut().for_each(|x| *x = NONE);
        self.gate_fire.iter_mut().for_each(|x| *x = false);
    }

    #[inline]
    fn deliver(&mut self, pre: usize) {
        for e in self.offsets[pre]..self.offsets[pre + 1] {
            let post = self.targets[e] as usize;
            if self.kinds[post] == NeuronKind::MaxGate {
                if self.winner[post] == NONE {
                    self.winner[post] = pre as u32;
                }
                if self.winner[post] == pre as u32 {
                    self.gate_fire[post] = true;
                }
            } else {
                self.inc[post] += self.weights[e];
            }
        }
    }

    /// Simulate up to the last checkpoint, returning one trace per checkpoint. Events are
    /// recorded only into the final trace, and only when `record` is set.
    pub fn run_checkpoints(&mut self, inputs: &InputTrains, seed: u64, checkpoints: &[usize], record: bool) -> Result<Vec<SpikeTrace>> {
        if inputs.inputs != self.net.inputs.len() {
            return Err(Error::Shape(format!("{} input trains for {} input neurons", inputs.inputs, self.net.inputs.len())));
        }
        let horizon = checkpoints.iter().copied().max().unwrap_or(0);
        if horizon == 0 || horizon > inputs.timesteps || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "checkpoints {checkpoints:?} must be strictly increasing and within 1..={}",
                inputs.timesteps
            )));
        }
        self.reset();
        let n = self.kinds.len();
        let mut counts = vec![0u32; n];
        let mut total = 0u64;
        let mut events = Vec::new();
        let mut acc = vec![0.0; self.softmax_ids.len()];
        let mut out_rng = rng::stream(seed, &[0x4f5554]);
        let mut traces = Vec::with_capacity(checkpoints.len());
        let mut next_cp = 0;
        let mut probs = vec![0.0; self.softmax_ids.len()];
        for t in 0..horizon {
            for i in 0..n {
                let fired = match self.kinds[i] {
                    NeuronKind::Input => inputs.get(t, self.input_slot[i] as usize),
                    NeuronKind::If => {
                        let v = (self.v[i] + self.inc[i] + self.bias[i]) * self.leak[i];
                        self.inc[i] = 0.0;
                        if v >= self.threshold[i] {
                            self.v[i] = v - self.threshold[i];
                            true
                        } else {
                            self.v[i] = v;
                            false
                        }
                    }
                    NeuronKind::MaxGate => std::mem::take(&mut self.gate_fire[i]),
                    // handled after the sweep
                    NeuronKind::PoissonSoftmax => false,
                };
                if fired {
                    counts[i] += 1;
                    total += 1;
                    if record {
                        events.push((i as u32, t as u32));
                    }
                    self.deliver(i);
                }
            }
            if !self.softmax_ids.is_empty() {
                for (k, &id) in self.softmax_ids.iter().enumerate() {
                    acc[k] += self.inc[id as usize] + self.bias[id as usize];
                    self.inc[id as usize] = 0.0;
                    probs[k] = acc[k] / (t + 1) as f64;
                }
                softmax_in_place(&mut probs);
                let u: f64 = out_rng.random();
                let mut cum = 0.0;
                let mut pick = probs.len() - 1;
                for (k, p) in probs.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        pick = k;
                        break;
                    }
                }
                let id = self.softmax_ids[pick] as usize;
                counts[id] += 1;
                total += 1;
                if record {
                    events.push((id as u32, t as u32));
                }
                self.deliver(id);
            }
            if t + 1 == checkpoints[next_cp] {
                traces.push(SpikeTrace {
                    timesteps: t + 1,
                    events: if t + 1 == horizon { std::mem::take(&mut events) } else { Vec::new() },
                    counts: counts.clone(),
                    total,
                });
                next_cp += 1;
            }
        }
        Ok(traces)
    }

    pub fn run(&mut self, inputs: &InputTrains, seed: u64, record: bool) -> Result<SpikeTrace> {
        let mut t = self.run_checkpoints(inputs, seed, &[inputs.timesteps], record)?;
        Ok(t.pop().unwrap())
    }
}

/// Simulate one input encoding for `cfg.timesteps` steps.
pub fn run(net: &SnnNetwork, inputs: &InputTrains, cfg: &SimConfig) -> Result<SpikeTrace> {
    Engine::new(net, cfg)?.run(inputs, cfg.seed, cfg.record_events)
}

/// Argmax of output spike counts; ties go to the lower class index.
pub fn decode(trace: &SpikeTrace, outputs: &[u32]) -> usize {
    let mut best = 0;
    for (k, &id) in outputs.iter().enumerate() {
        if trace.counts[id as usize] > trace.counts[outputs[best] as usize] {
            best = k;
        }
    }
    best
}

/// Share of output spikes on class 1, used as a ranking score.
pub fn positive_score(trace: &SpikeTrace, outputs: &[u32]) -> f64 {
    let total: u32 = outputs.iter().map(|&o| trace.counts[o as usize]).sum();
    if total == 0 || outputs.len() < 2 {
        0.5
    } else {
        trace.counts[outputs[1] as usize] as f64 / total as f64
    }
}

/// Per-window seed shared by every threshold and horizon.
pub fn window_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, &[0x57494e, index as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window_id: usize,
    pub predicted: usize,
    pub label: usize,
    pub total_spikes: u64,
    pub score: f64,
    /// `sum_n counts[n] * neuron_cost[n]` when a cost vector was supplied, else 0.
    pub energy_pj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub timesteps: usize,
    pub windows: Vec<WindowResult>,
    pub report: MetricsReport,
    pub mean_spikes: f64,
    /// Spike counts per neuron summed over all windows.
    pub neuron_counts: Vec<u64>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.report.accuracy
    }
}

fn assemble(timesteps: usize, windows: Vec<WindowResult>, neuron_counts: Vec<u64>) -> Result<Evaluation> {
    let preds: Vec<usize> = windows.iter().map(|w| w.predicted).collect();
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let scores: Vec<f64> = windows.iter().map(|w| w.score).collect();
    let cm = metrics::confusion(&preds, &labels)?;
    let report = metrics::summarize(&cm, &scores, &labels)?;
    let mean_spikes = windows.iter().map(|w| w.total_spikes as f64).sum::<f64>() / windows.len().max(1) as f64;
    Ok(Evaluation { timesteps, windows, report, mean_spikes, neuron_counts })
}

/// Evaluate every window at several horizons from a single simulation per window.
/// `neuron_cost` (pJ per spike of each neuron) fills in per-window energy.
pub fn classify_checkpoints(
    net: &SnnNetwork,
    windows: &[FeatureWindow],
    cfg: &SimConfig,
    horizons: &[usize],
    neuron_cost: Option<&[f64]>,
) -> Result<Vec<Evaluation>> {
    if let Some(c) = neuron_cost {
        if c.len() != net.neurons.len() {
            return Err(Error::Shape(format!("{} neuron costs for {} neurons", c.len(), net.neurons.len())));
        }
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to classify".into()));
    }
    let mut hs = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    let horizon = *hs.last().ok_or_else(|| Error::InvalidArgument("no horizons".into()))?;
    let per_window: Vec<Vec<SpikeTrace>> = windows
        .par_iter()
        .enumerate()
        .map_init(
            || Engine::new(net, cfg),
            |engine, (i, w)| {
                let engine = engine.as_mut().map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let seed = window_seed(cfg.seed, i);
                let trains = encode(net, w, horizon, seed)?;
                engine.run_checkpoints(&trains, seed, &hs, false)
            },
        )
        .collect::<Result<_>>()?;
    let n = net.neurons.len();
    let mut out = Vec::with_capacity(hs.len());
    for (k, &t) in hs.iter().enumerate() {
        let mut neuron_counts = vec![0u64; n];
        let mut results = Vec::with_capacity(windows.len());
        for (i, (w, traces)) in windows.iter().zip(&per_window).enumerate() {
            let tr = &traces[k];
            neuron_counts.iter_mut().zip(&tr.counts).for_each(|(a, &c)| *a += c as u64);
            results.push(WindowResult {
                window_id: i,
                predicted: decode(tr, &net.outputs),
                label: w.label as usize,
                total_spikes: tr.total,
                score: positive_score(tr, &net.outputs),
                energy_pj: neuron_cost.map_or(0.0, |c| tr.counts.iter().zip(c).map(|(&n, &e)| n as f64 * e).sum()),
            });
        }
        out.push(assemble(t, results, neuron_counts)?);
    }
    Ok(out)
}

pub fn classify(net: &SnnNetwork, windows: &[FeatureWindow], cfg: &SimConfig) -> Result<Evaluation> {
    Ok(classify_checkpoints(net, windows, cfg, &[cfg.timesteps], None)?.pop().unwrap())
}

pub const TRACE_HEADER: [&str; 2] = ["neuron_id", "timestep"];
pub const SUMMARY_HEADER: [&str; 4] = ["window_id", "predicted", "label", "total_spikes"];

pub fn write_trace_csv<W: Write>(trace: &SpikeTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for (n, t) in &trace.events {
        w.write_record([n.to_string(), t.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<trace csv>", e))?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(eval: &Evaluation, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in &eval.windows {
        w.write_record([r.window_id.to_string(), r.predicted.to_string(), r.label.to_string(), r.total_spikes.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))?;
    Ok(())
}
