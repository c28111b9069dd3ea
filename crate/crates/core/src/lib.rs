//! Wearable respiratory-cessation classification, end to end.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`simbaby`]: programmable breathing scripts and a synthetic RFID backscatter channel.
//! - [`features`]: radar-cross-section normalization, Doppler velocity, windowing,
//!   standardization, splitting and CSV ingestion.
//! - [`nn`]: a small 1D CNN kernel with reverse-mode gradients and Adam.
//! - [`trainer`]: early-stopped training, repeated k-fold validation and grid search.
//! - [`metrics`]: confusion matrices, ROC AUC and Bland-Altman agreement.
//! - [`quant`]: k-bit weight/activation quantization plus size and energy accounting.
//! - [`snn`], [`convert`], [`sim`]: spiking networks, ANN-to-SNN conversion and a
//!   discrete-time integrate-and-fire simulator.
//! - [`neuromap`]: clustering and tile placement on a mesh neuromorphic substrate.
//! - [`dse`]: threshold/horizon sweeps and accuracy-energy Pareto frontiers.

pub mod convert;
pub mod dse;
pub mod error;
pub mod features;
pub mod metrics;
pub mod neuromap;
pub mod nn;
pub mod plot;
pub mod quant;
pub mod rng;
pub mod sim;
pub mod simbaby;
pub mod snn;
pub mod trainer;

pub use error::{Error, Result};
