//! Run configuration: one TOML file with a section per stage.
//!
//! ```toml
//! seed = 42
//!
//! [synth]
//! script = ["breathe 60 31", "apnea 30"]   # empty: the default one-hour script
//!
//! [rf]
//! interrogation_rate = 28.0
//!
//! [train]
//! max_epochs = 100
//! ```
//!
//! Every key is optional. Unknown keys are rejected so typos do not silently fall back
//! to defaults.

use std::path::{Path, PathBuf};

use respira::dse::SweepAxes;
use respira::features::WindowConfig;
use respira::neuromap::TileGrid;
use respira::nn::Architecture;
use respira::quant::ApplyTo;
use respira::simbaby::{BreathScript, RfConfig};
use respira::trainer::{Hyperparameters, TuneSpace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSection,
    pub rf: RfConfig,
    pub window: WindowConfig,
    pub model: Architecture,
    pub train: Hyperparameters,
    pub tune: TuneSection,
    pub quant: QuantSection,
    pub convert: ConvertSection,
    pub sim: SimSection,
    pub map: MapSection,
    pub explore: ExploreSection,
}

/// Directories relative to `--out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "data".into(),
            models: "models".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// `"breathe <seconds> <bpm>"` / `"apnea <seconds>"` directives.
    pub script: Vec<String>,
}

impl SynthSection {
    pub fn breath_script(&self) -> respira::Result<BreathScript> {
        if self.script.is_empty() {
            Ok(BreathScript::default_script())
        } else {
            BreathScript::from_directives(&self.script)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub space: TuneSpace,
    pub folds: usize,
    pub repeats: usize,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            space: TuneSpace::default(),
            folds: 10,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSection {
    pub bits: Vec<u32>,
    /// Integer bits of the fixed-point mantissa quantizer.
    pub mantissa_bits: u32,
    pub apply_to: ApplyTo,
    /// Bit width above which the per-MAC energy slope changes.
    pub knee: u32,
    /// Memory-access energy relative to one MAC.
    pub mem_ratio: f64,
}

impl Default for QuantSection {
    fn default() -> Self {
        QuantSection {
            bits: vec![2, 4, 8, 16, 32, 64],
            mantissa_bits: 0,
            apply_to: ApplyTo::Both,
            knee: respira::quant::DEFAULT_KNEE,
            mem_ratio: respira::quant::DEFAULT_MEM_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertSection {
    /// mV.
    pub v_th: f64,
    pub leak: f64,
    pub percentile: f64,
}

impl Default for ConvertSection {
    fn default() -> Self {
        ConvertSection {
            v_th: 1.0,
            leak: 1.0,
            percentile: respira::convert::DEFAULT_PERCENTILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub timesteps: usize,
    /// Overrides the converted threshold when set.
    pub v_th: Option<f64>,
    /// Windows whose full spike trace is exported.
    pub trace_windows: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            timesteps: 256,
            v_th: None,
            trace_windows: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficSource {
    /// Spike counts recorded by `simulate`.
    Simulated,
    /// One spike per neuron.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub grid: TileGrid,
    pub traffic: TrafficSource,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            grid: TileGrid::default(),
            traffic: TrafficSource::Simulated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreSection {
    pub axes: SweepAxes,
    /// Efficient operating point: cheapest point within this accuracy gap of the CNN.
    pub accuracy_gap: f64,
}

impl Default for ExploreSection {
    fn default() -> Self {
        ExploreSection {
            axes: SweepAxes {
                thresholds: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 8.0],
                timesteps: vec![1, 2, 3, 4, 8, 16, 32],
                sample_sizes: vec![100, 300, 900],
            },
            accuracy_gap: 0.05,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            paths: Paths::default(),
            synth: SynthSection::default(),
            rf: RfConfig::default(),
            window: WindowConfig::default(),
            model: Architecture::default(),
            train: Hyperparameters::default(),
            tune: TuneSection::default(),
            quant: QuantSection::default(),
            convert: ConvertSection::default(),
            sim: SimSection::default(),
            map: MapSection::default(),
            explore: ExploreSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            msg: e.to_string().trim().replace('\n', " "),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing_or_io(path, e))?;
        Self::parse(&text, path)
    }

    /// Apply `seed` everywhere a stage reads it and check cross-field constraints.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.rf.seed = self.seed;
        let bad = |msg: String| CliError::Config { path: PathBuf::from("<config>"), msg };
        self.rf.validate().map_err(|e| bad(e.to_string()))?;
        self.train.validate().map_err(|e| bad(e.to_string()))?;
        self.tune.space.validate().map_err(|e| bad(e.to_string()))?;
        self.map.grid.validate().map_err(|e| bad(e.to_string()))?;
        self.synth.breath_script().map_err(|e| bad(e.to_string()))?;
        if self.quant.bits.is_empty() {
            return Err(bad("quant.bits is empty".into()));
        }
        if !(self.convert.v_th > 0.0) || !(self.convert.percentile > 0.0 && self.convert.percentile <= 100.0) {
            return Err(bad("convert.v_th must be > 0 and convert.percentile in (0, 100]".into()));
        }
        if self.sim.timesteps == 0 || self.sim.v_th.is_some_and(|v| !(v > 0.0)) {
            return Err(bad("sim.timesteps must be >= 1 and sim.v_th > 0".into()));
        }
        let ax = &self.explore.axes;
        if ax.thresholds.is_empty() || ax.timesteps.is_empty() || ax.timesteps.contains(&0) || ax.thresholds.iter().any(|v| !(*v > 0.0)) {
            return Err(bad("explore.axes needs positive thresholds and timesteps".into()));
        }
        if self.tune.folds < 2 || self.tune.repeats == 0 {
            return Err(bad("tune.folds must be >= 2 and tune.repeats >= 1".into()));
        }
        Ok(self)
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of [`RunConfig::canonical`], lowercase hex.
    pub fn sha256(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
