//! k-bit quantization of weights and activations, quantized inference, and model size
//! and energy accounting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::nn::{Activation, CnnModel, Layer, Shape, Tensor};

pub const MAX_BITS: u32 = 64;

fn levels(k: u32) -> f64 {
    2f64.powi(k as i32) - 1.0
}

fn check_bits(k: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("bit width {k} outside 1..={MAX_BITS}")))
    }
}

#[inline]
fn q(z: f64, k: u32) -> f64 {
    let n = levels(k);
    (n * z).round() / n
}

/// `round((2^k - 1) z) / (2^k - 1)` for `z` in [0, 1], rounding half away from zero.
pub fn quantize_value(z: f64, k: u32) -> Result<f64> {
    check_bits(k)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::OutOfRange(format!("{z} outside [0, 1]")));
    }
    Ok(q(z, k))
}

/// `Q(clip(x, 0, 1))`.
pub fn quantize_activation(x: f64, k: u32) -> Result<f64> {
    check_bits(k)?;
    Ok(q(x.clamp(0.0, 1.0), k))
}

/// Signed fixed point with `b` integer bits: `2^(b-k+1) clip(round(x 2^(k-b-1)), -2^(k-1), 2^(k-1)-1)`.
pub fn mantissa_quantize(x: f64, k: u32, b: u32) -> Result<f64> {
    check_bits(k)?;
    if b >= k {
        return Err(Error::InvalidArgument(format!("integer bits {b} must be below k = {k}")));
    }
    let frac = (k - b - 1) as i32;
    let lo = -(2f64.powi(k as i32 - 1));
    let hi = 2f64.powi(k as i32 - 1) - 1.0;
    Ok(2f64.powi(-frac) * (x * 2f64.powi(frac)).round().clamp(lo, hi))
}

/// Tanh-normalized weight quantization of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    /// Quantized values on the k-bit grid of [0, 1].
    pub q: Vec<f64>,
    /// `max |tanh(w)|` of the source tensor.
    pub norm: f64,
}

impl QuantTensor {
    /// Signed weights for inference: `atanh((2 q - 1) norm)`, the inverse of the
    /// normalization, so wide grids reproduce the source weights.
    pub fn dequantize(&self) -> Vec<f64> {
        self.q.iter().map(|&v| ((2.0 * v - 1.0) * self.norm).atanh()).collect()
    }
}

/// Pre-quantization values `tanh(w) / (2 max|tanh w|) + 1/2`.
pub fn normalize_weights(w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = w.iter().map(|v| v.tanh().abs()).fold(0.0, f64::max);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidArgument("weight tensor has zero tanh range".into()));
    }
    Ok((w.iter().map(|v| (v.tanh() / (2.0 * norm) + 0.5).clamp(0.0, 1.0)).collect(), norm))
}

pub fn quantize_weights(w: &[f64], k: u32) -> Result<QuantTensor> {
    check_bits(k)?;
    let (z, norm) = normalize_weights(w)?;
    Ok(QuantTensor {
        q: z.into_iter().map(|v| q(v, k)).collect(),
        norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyTo {
    Weights,
    Activations,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub k: u32,
    /// Integer bits for [`mantissa_quantize`].
    pub b: u32,
    pub apply_to: ApplyTo,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            k: 8,
            b: 0,
            apply_to: ApplyTo::Both,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        check_bits(self.k)?;
        if self.b >= self.k {
            return Err(Error::InvalidArgument(format!("b = {} must be below k = {}", self.b, self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub source: CnnModel,
    pub config: QuantConfig,
    /// Aligned with `source.params()`; `None` for tensors left exact (all-zero biases,
    /// or every tensor when only activations are quantized).
    pub tensors: Vec<Option<QuantTensor>>,
    /// Inference model carrying the de-quantized weights.
    pub effective: CnnModel,
    /// Per top-level layer: full-scale value of its ReLU output, when quantized.
    pub activation_scales: Vec<Option<f64>>,
}

fn relu_layer(l: &Layer) -> bool {
    matches!(l, Layer::Conv1d(c) if c.activation == Activation::Relu) || matches!(l, Layer::Dense(d) if d.activation == Activation::Relu)
}

/// Post-training quantization. Activation full-scale values come from the largest ReLU
/// output seen on `calibration`; activations are then `s Q(clip(x / s, 0, 1))`.
pub fn quantize_model(model: &CnnModel, cfg: QuantConfig, calibration: &[FeatureWindow]) -> Result<QuantizedModel> {
    cfg.validate()?;
    let weights = matches!(cfg.apply_to, ApplyTo::Weights | ApplyTo::Both);
    let acts = matches!(cfg.apply_to, ApplyTo::Activations | ApplyTo::Both);
    let mut effective = model.clone();
    let mut tensors = Vec::new();
    for p in effective.params_mut() {
        if !weights || p.iter().all(|&v| v == 0.0) {
            tensors.push(None);
            continue;
        }
        let t = quantize_weights(p, cfg.k)?;
        *p = t.dequantize();
        tensors.push(Some(t));
    }
    let mut activation_scales = vec![None; model.layers.len()];
    if acts {
        if calibration.is_empty() {
            return Err(Error::InsufficientData("activation quantization needs calibration windows".into()));
        }
        let mut max = vec![0.0f64; model.layers.len()];
        for w in calibration {
            effective.forward_hooked(&Tensor::from_window(w), |i, _, t| {
                max[i] = t.data.iter().copied().fold(max[i], f64::max);
            })?;
        }
        for (i, l) in model.layers.iter().enumerate() {
            if relu_layer(l) {
                activation_scales[i] = Some(if max[i] > 0.0 { max[i] } else { 1.0 });
            }
        }
    }
    Ok(QuantizedModel {
        source: model.clone(),
        config: cfg,
        tensors,
        effective,
        activation_scales,
    })
}

impl QuantizedModel {
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        let k = self.config.k;
        self.effective.forward_hooked(x, |i, _, t| {
            if let Some(s) = self.activation_scales[i] {
                t.data.iter_mut().for_each(|v| *v = s * q((*v / s).clamp(0.0, 1.0), k));
            }
        })
    }

    pub fn predict_proba(&self, windows: &[FeatureWindow]) -> Result<Vec<Vec<f64>>> {
        windows.iter().map(|w| self.forward(&Tensor::from_window(w))).collect()
    }
}

pub fn model_size_bits(params: u64, k: u32) -> u64 {
    params * k as u64
}

/// Operation counts of one layer for a single inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
    /// Parameter reads plus activation reads and writes.
    pub mem_accesses: u64,
}

pub fn layer_costs(model: &CnnModel) -> Result<Vec<LayerCost>> {
    fn walk(layers: &[Layer], mut shape: Shape, prefix: &str, out: &mut Vec<LayerCost>) -> Result<Shape> {
        for (i, l) in layers.iter().enumerate() {
            let next = l.output_shape(shape)?;
            let name = format!("{prefix}{i}:{}", l.name());
            let (inp, outp) = (shape.size() as u64, next.size() as u64);
            match l {
                Layer::Conv1d(c) => out.push(LayerCost {
                    name,
                    macs: outp * (c.kernel * c.in_channels) as u64,
                    mem_accesses: (c.weight.len() + c.bias.len()) as u64 + inp + outp,
                }),
                Layer::Dense(d) => out.push(LayerCost {
                    name,
                    macs: (d.inputs * d.units) as u64,
                    mem_accesses: (d.weight.len() + d.bias.len()) as u64 + inp + outp,
                }),
                Layer::MaxPool1d { pool, .. } | Layer::AvgPool1d { pool, .. } => {
                    if *pool > 1 {
                        out.push(LayerCost { name, macs: outp * *pool as u64, mem_accesses: inp + outp });
                    }
                }
                Layer::Residual { body } => {
                    walk(body, shape, &format!("{name}/"), out)?;
                    out.push(LayerCost { name: format!("{name}/add"), macs: outp, mem_accesses: 2 * inp + outp });
                }
                Layer::Concat { branches } => {
                    for (b, br) in branches.iter().enumerate() {
                        walk(br, shape, &format!("{name}/{b}/"), out)?;
                    }
                }
                Layer::Flatten | Layer::Dropout { .. } => {}
            }
            shape = next;
        }
        Ok(shape)
    }
    let mut out = Vec::new();
    walk(&model.layers, model.input, "", &mut out)?;
    Ok(out)
}

/// Per-operation energy as a function of bit width.
///
/// Narrow fixed-point formats cost `alpha k` pJ per MAC; wider formats add `beta` pJ per
/// bit beyond `knee`. A memory access costs `mem_ratio` times a MAC at the same width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub alpha: f64,
    pub beta: f64,
    pub knee: u32,
    pub mem_ratio: f64,
}

pub const DEFAULT_MEM_RATIO: f64 = 1.6;
pub const DEFAULT_KNEE: u32 = 32;
/// Reference totals used for calibration: (bits, pJ per inference).
pub const REFERENCE_LOW: (u32, f64) = (2, 7_089.0);
pub const REFERENCE_HIGH: (u32, f64) = (64, 134_613.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub name: String,
    pub mac_pj: f64,
    pub mem_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub k: u32,
    pub layers: Vec<LayerEnergy>,
    pub total_pj: f64,
    pub model_size_bits: u64,
}

fn weighted_ops(costs: &[LayerCost], mem_ratio: f64) -> f64 {
    costs.iter().map(|c| c.macs as f64 + mem_ratio * c.mem_accesses as f64).sum()
}

impl EnergyModel {
    pub fn mac_pj(&self, k: u32) -> f64 {
        if k <= self.knee {
            self.alpha * k as f64
        } else {
            self.alpha * self.knee as f64 + self.beta * (k - self.knee) as f64
        }
    }

    pub fn mem_pj(&self, k: u32) -> f64 {
        self.mem_ratio * self.mac_pj(k)
    }

    /// Fit `alpha` to the low reference point and `beta` to the high one for `model`.
    pub fn calibrate(model: &CnnModel, low: (u32, f64), high: (u32, f64), knee: u32, mem_ratio: f64) -> Result<Self> {
        if !(low.0 >= 1 && low.0 <= knee && high.0 > knee && high.0 <= MAX_BITS) {
            return Err(Error::InvalidArgument(format!("calibration bits {} / {} must straddle the knee {knee}", low.0, high.0)));
        }
        let ops = weighted_ops(&layer_costs(model)?, mem_ratio);
        if ops == 0.0 {
            return Err(Error::InvalidArgument("model performs no operations".into()));
        }
        let alpha = low.1 / (ops * low.0 as f64);
        let beta = (high.1 / ops - alpha * knee as f64) / (high.0 - knee) as f64;
        if beta <= 0.0 {
            return Err(Error::InvalidArgument("calibration points do not increase past the knee".into()));
        }
        Ok(EnergyModel { alpha, beta, knee, mem_ratio })
    }

    pub fn reference(model: &CnnModel) -> Result<Self> {
        Self::calibrate(model, REFERENCE_LOW, REFERENCE_HIGH, DEFAULT_KNEE, DEFAULT_MEM_RATIO)
    }
}

pub fn cnn_energy(model: &CnnModel, k: u32, energy: &EnergyModel) -> Result<EnergyReport> {
    check_bits(k)?;
    let layers: Vec<LayerEnergy> = layer_costs(model)?
        .into_iter()
        .map(|c| LayerEnergy {
            name: c.name,
            mac_pj: c.macs as f64 * energy.mac_pj(k),
            mem_pj: c.mem_accesses as f64 * energy.mem_pj(k),
        })
        .collect();
    let total_pj = layers.iter().map(|l| l.mac_pj + l.mem_pj).sum();
    Ok(EnergyReport {
        k,
        layers,
        total_pj,
        model_size_bits: model_size_bits(model.param_count() as u64, k),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: u32,
    pub accuracy: f64,
    pub energy_pj: f64,
    pub model_size_bits: u64,
}

pub const SWEEP_HEADER: [&str; 4] = ["k", "accuracy", "energy_pj", "model_size_bits"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([r.k.to_string(), r.accuracy.to_string(), r.energy_pj.to_string(), r.model_size_bits.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<quant sweep csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use proptest::prelude::*;

    #[test]
    fn value_quantizer_by_hand() {
        assert_eq!(quantize_value(0.0, 3).unwrap(), 0.0);
        assert_eq!(quantize_value(1.0, 3).unwrap(), 1.0);
        assert_eq!(quantize_value(0.4, 2).unwrap(), 1.0 / 3.0);
        assert!(quantize_value(1.2, 2).is_err());
        assert!(quantize_value(0.5, 0).is_err());
    }

    #[test]
    fn activation_quantizer_by_hand() {
        assert_eq!(quantize_activation(-3.0, 4).unwrap(), 0.0);
        assert_eq!(quantize_activation(7.0, 4).unwrap(), 1.0);
        assert_eq!(quantize_activation(0.4, 2).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn mantissa_by_hand() {
        assert_eq!(mantissa_quantize(0.0, 4, 0).unwrap(), 0.0);
        assert_eq!(mantissa_quantize(0.3, 4, 0).unwrap(), 0.25);
        assert_eq!(mantissa_quantize(10.0, 4, 0).unwrap(), 0.875);
        assert_eq!(mantissa_quantize(-10.0, 4, 0).unwrap(), -1.0);
        assert!(mantissa_quantize(1.0, 4, 4).is_err());
    }

    #[test]
    fn weight_normalization_anchors() {
        let w = [0.0, 0.7, -0.3];
        let (z, norm) = normalize_weights(&w).unwrap();
        assert_eq!(z[0], 0.5);
        assert_eq!(z[1], 1.0);
        assert_eq!(norm, 0.7f64.tanh());
        assert_eq!(quantize_weights(&w, 4).unwrap().q[1], 1.0);
        assert!(quantize_weights(&[0.0, 0.0], 4).is_err());
    }

    #[test]
    fn negation_mirrors_grid() {
        let w = [0.1, -0.5, 0.33, 0.9, -0.02];
        let a = quantize_weights(&w, 40).unwrap();
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let b = quantize_weights(&neg, 40).unwrap();
        for (x, y) in a.q.iter().zip(&b.q) {
            assert!((x - (1.0 - y)).abs() < 1e-9);
        }
    }

    #[test]
    fn one_bit_tensors_have_two_values() {
        let model = CnnModel::respiratory(&Architecture { timesteps: 6, filters: 4, hidden1: 10, hidden2: 5, ..Architecture::default() }, 1);
        let qm = quantize_model(&model, QuantConfig { k: 1, b: 0, apply_to: ApplyTo::Weights }, &[]).unwrap();
        for p in qm.effective.params() {
            let mut vals: Vec<f64> = p.to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            assert!(vals.len() <= 2, "{vals:?}");
        }
    }

    #[test]
    fn wide_grid_is_near_lossless() {
        let model = CnnModel::respiratory(&Architecture::default(), 2);
        let mut r = crate::rng::stream(2, &[1]);
        use rand::Rng;
        let windows: Vec<FeatureWindow> = (0..50)
            .map(|i| FeatureWindow {
                samples: (0..28).map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect(),
                label: (i % 2) as u8,
                window_start: i as f64,
            })
            .collect();
        let qm = quantize_model(&model, QuantConfig { k: 64, ..QuantConfig::default() }, &windows).unwrap();
        for (a, b) in model.predict_proba(&windows).unwrap().iter().zip(qm.predict_proba(&windows).unwrap()) {
            assert!((a[0] - b[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn size_is_linear_in_bits() {
        assert_eq!(model_size_bits(46_129, 2), 92_258);
        assert_eq!(model_size_bits(46_129, 64), 2_952_256);
    }

    #[test]
    fn calibration_reproduces_anchors_and_is_monotone() {
        let model = CnnModel::respiratory(&Architecture::default(), 0);
        let e = EnergyModel::reference(&model).unwrap();
        let at = |k| cnn_energy(&model, k, &e).unwrap().total_pj;
        assert!((at(2) - 7_089.0).abs() < 1e-6);
        assert!((at(64) - 134_613.0).abs() < 1e-6);
        for k in 1..MAX_BITS {
            assert!(at(k + 1) > at(k), "k = {k}");
        }
        let r = cnn_energy(&model, 8, &e).unwrap();
        let sum: f64 = r.layers.iter().map(|l| l.mac_pj + l.mem_pj).sum();
        assert!((sum - r.total_pj).abs() < 1e-9);
        assert_eq!(r.model_size_bits, model.param_count() as u64 * 8);
    }

    proptest! {
        #[test]
        fn quantizers_are_idempotent_and_on_grid(z in 0.0f64..=1.0, x in -4.0f64..4.0, k in 1u32..16, b in 0u32..4) {
            let a = quantize_value(z, k).unwrap();
            prop_assert_eq!(quantize_value(a, k).unwrap(), a);
            let n = levels(k);
            prop_assert!(((a * n) - (a * n).round()).abs() < 1e-9);
            prop_assert!((a - z).abs() <= 0.5 / n + 1e-15);
            let c = quantize_activation(x, k).unwrap();
            prop_assert_eq!(quantize_activation(c, k).unwrap(), c);
            prop_assume!(b < k);
            let m = mantissa_quantize(x, k, b).unwrap();
            prop_assert_eq!(mantissa_quantize(m, k, b).unwrap(), m);
        }

        #[test]
        fn activation_quantizer_is_monotone(a in -2.0f64..2.0, d in 0.0f64..2.0, k in 1u32..10) {
            prop_assert!(quantize_activation(a, k).unwrap() <= quantize_activation(a + d, k).unwrap());
        }
    }
}
