//! Spiking network representation and its text serialization.
//!
//! Neuron ids are topologically ordered: every synapse runs from a lower id to a higher
//! one, which lets the simulator settle a whole timestep in a single pass.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    /// Rate-coded input; fires from the encoder.
    Input,
    /// Integrate-and-fire unit with subtractive reset.
    If,
    /// Forwards spikes of whichever presynaptic neuron fired first (max pooling).
    MaxGate,
    /// Output unit driven by a categorical spike generator over the softmax of its
    /// running mean input.
    PoissonSoftmax,
}

impl NeuronKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NeuronKind::Input => "input",
            NeuronKind::If => "if",
            NeuronKind::MaxGate => "max_gate",
            NeuronKind::PoissonSoftmax => "poisson_softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "input" => NeuronKind::Input,
            "if" => NeuronKind::If,
            "max_gate" => NeuronKind::MaxGate,
            "poisson_softmax" => NeuronKind::PoissonSoftmax,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub kind: NeuronKind,
    /// mV.
    pub threshold: f64,
    /// Constant input current, mV per timestep.
    pub bias: f64,
    /// Initial membrane potential, mV.
    pub v_init: f64,
    /// Multiplicative leak per timestep; 1 is a pure integrator.
    pub leak: f64,
    pub layer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: u32,
    pub post: u32,
    /// mV per spike.
    pub weight: f64,
}

/// A contiguous block of neuron ids produced from one analog layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub start: u32,
    pub len: u32,
    /// Normalization factor: analog activation represented by one spike per timestep.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnNetwork {
    pub neurons: Vec<Neuron>,
    pub synapses: Vec<Synapse>,
    pub layers: Vec<LayerInfo>,
    /// Input neuron ids in encoder order (two per analog input: positive, negative).
    pub inputs: Vec<u32>,
    /// Decoded neurons, one per class.
    pub outputs: Vec<u32>,
    /// Default V_th, mV.
    pub v_th: f64,
}

pub const FORMAT_TAG: &str = "respira-snn";
pub const FORMAT_VERSION: u32 = 1;

impl SnnNetwork {
    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    /// Check ids, ordering, thresholds and layer coverage.
    pub fn validate(&self) -> Result<()> {
        let n = self.neurons.len() as u32;
        for (i, s) in self.synapses.iter().enumerate() {
            if s.pre >= n || s.post >= n {
                return Err(Error::InvalidArgument(format!("synapse {i} references a missing neuron ({} -> {})", s.pre, s.post)));
            }
            if s.pre == s.post {
                return Err(Error::InvalidArgument(format!("synapse {i} is a self-loop on {}", s.pre)));
            }
            if s.pre > s.post {
                return Err(Error::InvalidArgument(format!("synapse {i} runs backwards ({} -> {})", s.pre, s.post)));
            }
            if !s.weight.is_finite() {
                return Err(Error::InvalidArgument(format!("synapse {i} has a non-finite weight")));
            }
        }
        for (i, nr) in self.neurons.iter().enumerate() {
            if nr.kind == NeuronKind::If && !(nr.threshold > 0.0) {
                return Err(Error::InvalidArgument(format!("neuron {i} has non-positive threshold")));
            }
            if nr.layer >= self.layers.len() {
                return Err(Error::InvalidArgument(format!("neuron {i} names missing layer {}", nr.layer)));
            }
        }
        let mut next = 0;
        for (li, l) in self.layers.iter().enumerate() {
            if l.start != next {
                return Err(Error::InvalidArgument(format!("layer {li} starts at {} instead of {next}", l.start)));
            }
            if self.neurons[l.start as usize..(l.start + l.len) as usize].iter().any(|nr| nr.layer != li) {
                return Err(Error::InvalidArgument(format!("layer {li} metadata disagrees with its neurons")));
            }
            next += l.len;
        }
        if next != n {
            return Err(Error::InvalidArgument("layers do not cover every neuron".into()));
        }
        for &i in self.inputs.iter() {
            if i >= n || self.neurons[i as usize].kind != NeuronKind::Input {
                return Err(Error::InvalidArgument(format!("input id {i} is not an input neuron")));
            }
        }
        if self.outputs.iter().any(|&o| o >= n) {
            return Err(Error::InvalidArgument("output id out of range".into()));
        }
        if self.v_th <= 0.0 {
            return Err(Error::InvalidArgument("default V_th must be positive".into()));
        }
        Ok(())
    }

    /// Compressed outgoing adjacency: `(offsets, targets, weights)`.
    pub fn outgoing(&self) -> (Vec<usize>, Vec<u32>, Vec<f64>) {
        let n = self.neurons.len();
        let mut offsets = vec![0usize; n + 1];
        for s in &self.synapses {
            offsets[s.pre as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; self.synapses.len()];
        let mut weights = vec![0.0; self.synapses.len()];
        for s in &self.synapses {
            let at = fill[s.pre as usize];
            targets[at] = s.post;
            weights[at] = s.weight;
            fill[s.pre as usize] += 1;
        }
        (offsets, targets, weights)
    }

    /// Number of incoming synapses per neuron.
    pub fn fan_in(&self) -> Vec<u32> {
        let mut f = vec![0u32; self.neurons.len()];
        for s in &self.synapses {
            f[s.post as usize] += 1;
        }
        f
    }

    pub fn layer_of(&self, id: u32) -> &LayerInfo {
        &self.layers[self.neurons[id as usize].layer]
    }

    /// Text layout:
    ///
    /// ```text
    /// respira-snn 1
    /// v_th_mv <value>
    /// inputs <id> <id> ...
    /// outputs <id> <id> ...
    /// layer <name> <start> <len> <lambda>      (one line per layer)
    /// neurons <count>
    /// id,kind,threshold_mv,bias_mv,v_init_mv,leak,layer
    /// ...
    /// synapses <count>
    /// pre,post,weight_mV
    /// ...
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ids = |v: &[u32]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(s, "{FORMAT_TAG} {FORMAT_VERSION}").unwrap();
        writeln!(s, "v_th_mv {}", self.v_th).unwrap();
        writeln!(s, "inputs {}", ids(&self.inputs)).unwrap();
        writeln!(s, "outputs {}", ids(&self.outputs)).unwrap();
        for l in &self.layers {
            writeln!(s, "layer {} {} {} {}", l.name, l.start, l.len, l.lambda).unwrap();
        }
        writeln!(s, "neurons {}", self.neurons.len()).unwrap();
        writeln!(s, "id,kind,threshold_mv,bias_mv,v_init_mv,leak,layer").unwrap();
        for (i, n) in self.neurons.iter().enumerate() {
            writeln!(s, "{i},{},{},{},{},{},{}", n.kind.as_str(), n.threshold, n.bias, n.v_init, n.leak, n.layer).unwrap();
        }
        writeln!(s, "synapses {}", self.synapses.len()).unwrap();
        writeln!(s, "pre,post,weight_mV").unwrap();
        for syn in &self.synapses {
            writeln!(s, "{},{},{}", syn.pre, syn.post, syn.weight).unwrap();
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end())).filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::schema(path, format!("unexpected end of file, expected {what}")));
        let perr = |line: usize, msg: String| Error::parse(path, line as u64, msg);

        let (ln, head) = next("header")?;
        if head != format!("{FORMAT_TAG} {FORMAT_VERSION}") {
            return Err(perr(ln, format!("unsupported header `{head}`")));
        }
        let keyed = |ln: usize, line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| if r.is_empty() { Some("") } else { r.strip_prefix(' ') })
                .map(str::to_string)
                .ok_or_else(|| perr(ln, format!("expected `{key}`")))
        };
        let num = |ln: usize, v: &str| -> Result<f64> { v.trim().parse::<f64>().map_err(|_| perr(ln, format!("bad number `{v}`"))) };
        let id_list = |ln: usize, v: &str| -> Result<Vec<u32>> {
            v.split_whitespace().map(|t| t.parse::<u32>().map_err(|_| perr(ln, format!("bad id `{t}`")))).collect()
        };

        let (ln, l) = next("v_th_mv")?;
        let v_th = num(ln, &keyed(ln, l, "v_th_mv")?)?;
        let (ln, l) = next("inputs")?;
        let inputs = id_list(ln, &keyed(ln, l, "inputs")?)?;
        let (ln, l) = next("outputs")?;
        let outputs = id_list(ln, &keyed(ln, l, "outputs")?)?;

        let mut layers = Vec::new();
        let neuron_count;
        loop {
            let (ln, l) = next("layer or neurons")?;
            if let Some(rest) = l.strip_prefix("layer ") {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 {
                    return Err(perr(ln, "layer line needs name, start, len, lambda".into()));
                }
                layers.push(LayerInfo {
                    name: f[0].to_string(),
                    start: f[1].parse().map_err(|_| perr(ln, "bad layer start".into()))?,
                    len: f[2].parse().map_err(|_| perr(ln, "bad layer length".into()))?,
                    lambda: num(ln, f[3])?,
                });
            } else {
                neuron_count = keyed(ln, l, "neurons")?.parse::<usize>().map_err(|_| perr(ln, "bad neuron count".into()))?;
                break;
            }
        }
        let (ln, l) = next("neuron table header")?;
        if l != "id,kind,threshold_mv,bias_mv,v_init_mv,leak,layer" {
            return Err(perr(ln, format!("unexpected neuron table header `{l}`")));
        }
        let mut neurons = Vec::with_capacity(neuron_count);
        for i in 0..neuron_count {
            let (ln, l) = next("neuron row")?;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(perr(ln, format!("neuron row has {} fields, expected 7", f.len())));
            }
            if f[0].parse::<usize>().ok() != Some(i) {
                return Err(perr(ln, format!("neuron ids must be consecutive, expected {i}")));
            }
            neurons.push(Neuron {
                kind: NeuronKind::parse(f[1]).ok_or_else(|| perr(ln, format!("unknown neuron kind `{}`", f[1])))?,
                threshold: num(ln, f[2])?,
                bias: num(ln, f[3])?,
                v_init: num(ln, f[4])?,
                leak: num(ln, f[5])?,
                layer: f[6].parse().map_err(|_| perr(ln, "bad layer index".into()))?,
            });
        }
        let (ln, l) = next("synapses")?;
        let syn_count = keyed(ln, l, "synapses")?.parse::<usize>().map_err(|_| perr(ln, "bad synapse count".into()))?;
        let (ln, l) = next("synapse table header")?;
        if l != "pre,post,weight_mV" {
            return Err(perr(ln, format!("unexpected synapse table header `{l}`")));
        }
        let mut synapses = Vec::with_capacity(syn_count);
        for _ in 0..syn_count {
            let (ln, l) = next("synapse row")?;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(perr(ln, format!("synapse row has {} fields, expected 3", f.len())));
            }
            synapses.push(Synapse {
                pre: f[0].parse().map_err(|_| perr(ln, "bad pre id".into()))?,
                post: f[1].parse().map_err(|_| perr(ln, "bad post id".into()))?,
                weight: num(ln, f[2])?,
            });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing content after synapse table".into()));
        }
        let net = SnnNetwork { neurons, synapses, layers, inputs, outputs, v_th };
        net.validate().map_err(|e| Error::schema(path, e.to_string()))?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}
