//! Feature engineering: RCS-normalized signal strength, Doppler velocity, fixed-length
//! windows, z-score standardization, the 3:1 split and the two-file CSV layout.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::simbaby::{
    dbm_to_watts, sawtooth_residual_db, wavelength, BreathScript, Observation, ObservationStream,
    RfConfig,
};

pub const FEATURE_COUNT: usize = 2;
pub const DEFAULT_SAMPLES_PER_WINDOW: usize = 28;

/// `zeta = P_tx G_reader^2 / P_rx * (lambda / 4 pi)^4` for a received power in watts.
pub fn zeta_from_power(p_rx_w: f64, freq_hz: f64, cfg: &RfConfig) -> Result<f64> {
    if !(p_rx_w > 0.0) {
        return Err(Error::OutOfRange(format!("received power must be positive, got {p_rx_w}")));
    }
    let lambda = wavelength(freq_hz);
    Ok(cfg.tx_power * cfg.reader_gain.powi(2) / p_rx_w * (lambda / (4.0 * PI)).powi(4))
}

/// RCS-normalized signal strength of one observation. The channel sawtooth is removed in
/// the dB domain before converting to watts.
pub fn compute_zeta(obs: &Observation, cfg: &RfConfig) -> Result<f64> {
    let mut dbm = obs.rssi_dbm;
    if cfg.sawtooth_residual {
        dbm -= sawtooth_residual_db(obs.freq_hz);
    }
    zeta_from_power(dbm_to_watts(dbm), obs.freq_hz, cfg)
}

/// Radial tag velocity from the monostatic Doppler relation `v = f_d * lambda / 2`.
pub fn doppler_velocity(obs: &Observation) -> f64 {
    obs.doppler_hz * wavelength(obs.freq_hz) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    /// `(zeta, velocity)` per sample.
    pub samples: Vec<[f64; FEATURE_COUNT]>,
    pub label: u8,
    pub window_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_s: f64,
    /// Fraction of a window shared with its successor, in `[0, 1)`.
    pub overlap: f64,
    pub samples_per_window: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_s: 1.0,
            overlap: 0.0,
            samples_per_window: DEFAULT_SAMPLES_PER_WINDOW,
        }
    }
}

/// Linear interpolation of `(t, value)` points onto `grid`, holding end values flat.
fn interpolate(points: &[(f64, [f64; 2])], grid: &[f64]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(grid.len());
    let mut j = 0;
    for &g in grid {
        while j + 1 < points.len() && points[j + 1].0 <= g {
            j += 1;
        }
        let (t0, v0) = points[j];
        if g <= t0 || j + 1 == points.len() {
            out.push(v0);
            continue;
        }
        let (t1, v1) = points[j + 1];
        let a = (g - t0) / (t1 - t0);
        out.push([v0[0] + a * (v1[0] - v0[0]), v0[1] + a * (v1[1] - v0[1])]);
    }
    out
}

/// Cut the stream into fixed-length labeled windows.
///
/// Records with non-finite readings are dropped first. A window holding exactly
/// `samples_per_window` records keeps them as-is; otherwise its features are linearly
/// resampled onto a uniform grid. Windows with fewer than two records are skipped. The
/// label is the ground truth at the window midpoint.
pub fn windowize(
    stream: &ObservationStream,
    script: &BreathScript,
    rf: &RfConfig,
    wc: &WindowConfig,
) -> Result<Vec<FeatureWindow>> {
    if stream.is_empty() {
        return Err(Error::InsufficientData("observation stream is empty".into()));
    }
    if !(wc.window_s > 0.0) || !(0.0..1.0).contains(&wc.overlap) || wc.samples_per_window < 2 {
        return Err(Error::InvalidArgument(format!("bad window configuration {wc:?}")));
    }
    let t_first = stream.records[0].timestamp;
    let t_end = stream.records.last().unwrap().timestamp;
    let span = (t_end - t_first).max(0.0) + 1.0 / rf.interrogation_rate;
    if wc.window_s > span + 1e-9 {
        return Err(Error::InsufficientData(format!(
            "window of {} s is longer than the {span} s stream",
            wc.window_s
        )));
    }

    let mut points: Vec<(f64, [f64; 2])> = Vec::with_capacity(stream.len());
    for obs in &stream.records {
        if !(obs.timestamp.is_finite()
            && obs.rssi_dbm.is_finite()
            && obs.doppler_hz.is_finite()
            && obs.freq_hz.is_finite())
        {
            continue;
        }
        let zeta = compute_zeta(obs, rf)?;
        points.push((obs.timestamp, [zeta, doppler_velocity(obs)]));
    }

    let step = wc.window_s * (1.0 - wc.overlap);
    let horizon = script.total_duration().min(t_first + span);
    let n = wc.samples_per_window;
    let mut windows = Vec::new();
    let mut k = 0usize;
    let mut lo = 0usize;
    loop {
        let start = t_first + k as f64 * step;
        let end = start + wc.window_s;
        if end > horizon + 1e-9 {
            break;
        }
        k += 1;
        while lo < points.len() && points[lo].0 < start {
            lo += 1;
        }
        let hi = lo + points[lo..].partition_point(|p| p.0 < end);
        let inside = &points[lo..hi];
        if inside.len() < 2 {
            continue;
        }
        let samples = if inside.len() == n {
            inside.iter().map(|p| p.1).collect()
        } else {
            let grid: Vec<f64> = (0..n)
                .map(|j| start + (j as f64 + 0.5) * wc.window_s / n as f64)
                .collect();
            interpolate(inside, &grid)
        };
        let label = script.ground_truth(start + wc.window_s / 2.0)?;
        windows.push(FeatureWindow {
            samples,
            label,
            window_start: start,
        });
    }
    Ok(windows)
}

/// Per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl ScalerStats {
    /// Fit on every sample of every window, in order.
    pub fn fit(windows: &[FeatureWindow]) -> Result<Self> {
        let count: usize = windows.iter().map(|w| w.samples.len()).sum();
        if count == 0 {
            return Err(Error::InsufficientData("cannot fit scaler on no samples".into()));
        }
        let mut mean = [0.0; FEATURE_COUNT];
        for s in windows.iter().flat_map(|w| &w.samples) {
            for f in 0..FEATURE_COUNT {
                mean[f] += s[f];
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = [0.0; FEATURE_COUNT];
        for s in windows.iter().flat_map(|w| &w.samples) {
            for f in 0..FEATURE_COUNT {
                var[f] += (s[f] - mean[f]).powi(2);
            }
        }
        let mut std = [0.0; FEATURE_COUNT];
        for f in 0..FEATURE_COUNT {
            std[f] = (var[f] / count as f64).sqrt();
            if !(std[f] > 0.0) {
                return Err(Error::ZeroVariance { feature: f });
            }
        }
        Ok(ScalerStats { mean, std })
    }

    pub fn transform(&self, w: &FeatureWindow) -> FeatureWindow {
        FeatureWindow {
            samples: w
                .samples
                .iter()
                .map(|s| {
                    let mut z = [0.0; FEATURE_COUNT];
                    for f in 0..FEATURE_COUNT {
                        z[f] = (s[f] - self.mean[f]) / self.std[f];
                    }
                    z
                })
                .collect(),
            label: w.label,
            window_start: w.window_start,
        }
    }

    pub fn transform_all(&self, ws: &[FeatureWindow]) -> Vec<FeatureWindow> {
        ws.iter().map(|w| self.transform(w)).collect()
    }
}

/// Seeded shuffle followed by a 3:1 train/test partition.
pub fn split(
    windows: &[FeatureWindow],
    seed: u64,
) -> Result<(Vec<FeatureWindow>, Vec<FeatureWindow>)> {
    let n = windows.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 windows to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[0x53504c54]));
    let n_test = ((n + 1) / 4).max(1);
    let test = idx[..n_test].iter().map(|&i| windows[i].clone()).collect();
    let train = idx[n_test..].iter().map(|&i| windows[i].clone()).collect();
    Ok((train, test))
}

/// Standardized train/test partitions with the train-fitted scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<FeatureWindow>,
    pub test: Vec<FeatureWindow>,
    pub scaler: ScalerStats,
}

impl Dataset {
    /// Split raw windows 3:1, fit the scaler on the training part and standardize both.
    pub fn from_windows(windows: &[FeatureWindow], seed: u64) -> Result<Self> {
        let (train, test) = split(windows, seed)?;
        let scaler = ScalerStats::fit(&train)?;
        Ok(Dataset {
            train: scaler.transform_all(&train),
            test: scaler.transform_all(&test),
            scaler,
        })
    }

    /// Write `train_features.csv`, `train_labels.csv`, `test_features.csv`,
    /// `test_labels.csv` and `scaler.csv` into `dir`.
    pub fn export_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, ws) in [("train", &self.train), ("test", &self.test)] {
            export_csv(
                ws,
                &dir.join(format!("{name}_features.csv")),
                &dir.join(format!("{name}_labels.csv")),
            )?;
        }
        let path = dir.join("scaler.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["feature", "mean", "std"])?;
        for (f, name) in ["zeta", "velocity"].iter().enumerate() {
            w.write_record([name.to_string(), self.scaler.mean[f].to_string(), self.scaler.std[f].to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn import_dir(dir: &Path) -> Result<Self> {
        let load = |name: &str| -> Result<Vec<FeatureWindow>> {
            Ok(import_csv(
                &dir.join(format!("{name}_features.csv")),
                &dir.join(format!("{name}_labels.csv")),
            )?
            .windows)
        };
        let path = dir.join("scaler.csv");
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path)?;
        expect_header(&mut r, &path, &["feature", "mean", "std"])?;
        let mut mean = [0.0; FEATURE_COUNT];
        let mut std = [0.0; FEATURE_COUNT];
        let mut seen = 0;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let f = match rec.get(0) {
                Some("zeta") => 0,
                Some("velocity") => 1,
                other => return Err(Error::parse(&path, line, format!("unknown feature {other:?}"))),
            };
            mean[f] = parse_f64(&rec, 1, &path, line)?;
            std[f] = parse_f64(&rec, 2, &path, line)?;
            seen += 1;
        }
        if seen != FEATURE_COUNT {
            return Err(Error::schema(&path, "expected one row per feature"));
        }
        Ok(Dataset {
            train: load("train")?,
            test: load("test")?,
            scaler: ScalerStats { mean, std },
        })
    }
}

pub const FEATURES_HEADER: [&str; 4] = ["window_start", "sample_idx", "zeta", "velocity"];
pub const LABELS_HEADER: [&str; 2] = ["window_start", "label"];

/// Write the two-file layout. Floats use the shortest exact round-trip representation.
pub fn export_csv(windows: &[FeatureWindow], features: &Path, labels: &Path) -> Result<()> {
    let file = fs::File::create(features).map_err(|e| Error::io(features, e))?;
    write_features(windows, file)?;
    let file = fs::File::create(labels).map_err(|e| Error::io(labels, e))?;
    write_labels(windows, file)
}

pub fn write_features<W: Write>(windows: &[FeatureWindow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FEATURES_HEADER)?;
    for win in windows {
        let start = win.window_start.to_string();
        for (i, s) in win.samples.iter().enumerate() {
            w.write_record([start.clone(), i.to_string(), s[0].to_string(), s[1].to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

pub fn write_labels<W: Write>(windows: &[FeatureWindow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABELS_HEADER)?;
    for win in windows {
        w.write_record([win.window_start.to_string(), win.label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

/// Result of reading the two-file layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Import {
    pub windows: Vec<FeatureWindow>,
    /// Line numbers of feature rows dropped because they held `NaN`.
    pub dropped_rows: Vec<u64>,
}

fn expect_header<R: std::io::Read>(r: &mut csv::Reader<R>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = r.headers()?;
    if header.iter().map(str::trim).collect::<Vec<_>>() != expected {
        return Err(Error::schema(path, format!("expected header {expected:?}, got {header:?}")));
    }
    Ok(())
}

fn parse_f64(rec: &csv::StringRecord, col: usize, path: &Path, line: u64) -> Result<f64> {
    let s = rec
        .get(col)
        .ok_or_else(|| Error::parse(path, line, format!("missing column {col}")))?;
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("column {col}: not a number: {s:?}")))
}

/// Read the two-file layout. Feature rows containing `NaN` are dropped (and reported);
/// the affected window is refilled by interpolating along `sample_idx`. Infinite values,
/// malformed rows and schema mismatches are errors carrying the file line number.
pub fn import_csv(features: &Path, labels: &Path) -> Result<Import> {
    let mut label_map: BTreeMap<u64, (f64, u8)> = BTreeMap::new();
    let mut order: Vec<u64> = Vec::new();
    {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_path(labels)?;
        expect_header(&mut r, labels, &LABELS_HEADER)?;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 2 {
                return Err(Error::parse(labels, line, format!("expected 2 fields, got {}", rec.len())));
            }
            let start = parse_f64(&rec, 0, labels, line)?;
            if !start.is_finite() {
                return Err(Error::parse(labels, line, "non-finite window_start"));
            }
            let label = match rec[1].trim() {
                "0" => 0u8,
                "1" => 1u8,
                other => return Err(Error::parse(labels, line, format!("label must be 0 or 1, got {other:?}"))),
            };
            if label_map.insert(start.to_bits(), (start, label)).is_some() {
                return Err(Error::parse(labels, line, format!("duplicate window_start {start}")));
            }
            order.push(start.to_bits());
        }
    }

    let mut rows: BTreeMap<u64, Vec<(usize, Option<[f64; 2]>)>> = BTreeMap::new();
    let mut dropped = Vec::new();
    {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_path(features)?;
        expect_header(&mut r, features, &FEATURES_HEADER)?;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 4 {
                return Err(Error::parse(features, line, format!("expected 4 fields, got {}", rec.len())));
            }
            let start = parse_f64(&rec, 0, features, line)?;
            let idx = rec[1]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(features, line, format!("bad sample_idx {:?}", &rec[1])))?;
            let zeta = parse_f64(&rec, 2, features, line)?;
            let vel = parse_f64(&rec, 3, features, line)?;
            if zeta.is_infinite() || vel.is_infinite() || !start.is_finite() {
                return Err(Error::parse(features, line, "infinite value"));
            }
            if !label_map.contains_key(&start.to_bits()) {
                return Err(Error::parse(features, line, format!("window {start} has no label")));
            }
            let value = if zeta.is_nan() || vel.is_nan() {
                dropped.push(line);
                None
            } else {
                Some([zeta, vel])
            };
            rows.entry(start.to_bits()).or_default().push((idx, value));
        }
    }
    if !dropped.is_empty() {
        log::warn!("{}: dropped {} row(s) containing NaN", features.display(), dropped.len());
    }

    let mut windows = Vec::with_capacity(order.len());
    for key in order {
        let (start, label) = label_map[&key];
        let mut entries = rows.remove(&key).ok_or_else(|| {
            Error::schema(features, format!("labeled window {start} has no feature rows"))
        })?;
        entries.sort_by_key(|e| e.0);
        let len = entries.last().map_or(0, |e| e.0 + 1);
        if entries.len() != len || entries.iter().enumerate().any(|(i, e)| e.0 != i) {
            return Err(Error::schema(features, format!("window {start}: sample_idx must run 0..n without gaps")));
        }
        let known: Vec<(f64, [f64; 2])> = entries
            .iter()
            .filter_map(|(i, v)| v.map(|v| (*i as f64, v)))
            .collect();
        if known.is_empty() {
            return Err(Error::schema(features, format!("window {start}: every sample is NaN")));
        }
        let samples = if known.len() == len {
            known.into_iter().map(|k| k.1).collect()
        } else {
            let grid: Vec<f64> = (0..len).map(|i| i as f64).collect();
            interpolate(&known, &grid)
        };
        windows.push(FeatureWindow {
            samples,
            label,
            window_start: start,
        });
    }
    Ok(Import {
        windows,
        dropped_rows: dropped,
    })
}

/// Mean spectral power of one feature channel inside `[lo_hz, hi_hz]`, from a direct DFT
/// of the mean-removed window sampled at `sample_rate`.
pub fn band_power(window: &FeatureWindow, feature: usize, sample_rate: f64, lo_hz: f64, hi_hz: f64) -> f64 {
    let n = window.samples.len();
    if n == 0 {
        return 0.0;
    }
    let mean = window.samples.iter().map(|s| s[feature]).sum::<f64>() / n as f64;
    let mut total = 0.0;
    let mut bins = 0usize;
    for k in 0..=n / 2 {
        let f = k as f64 * sample_rate / n as f64;
        if f < lo_hz || f > hi_hz {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (j, s) in window.samples.iter().enumerate() {
            let a = -2.0 * PI * (k * j) as f64 / n as f64;
            re += (s[feature] - mean) * a.cos();
            im += (s[feature] - mean) * a.sin();
        }
        total += (re * re + im * im) / (n * n) as f64;
        bins += 1;
    }
    if bins == 0 {
        0.0
    } else {
        total / bins as f64
    }
}

/// Default path pair used by the CLI for the raw (unsplit) window set.
pub fn default_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("features.csv"), dir.join("labels.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simbaby::{synthesize, Segment, SPEED_OF_LIGHT};
    use proptest::prelude::*;

    fn obs(rssi_dbm: f64, freq_hz: f64, doppler_hz: f64) -> Observation {
        Observation {
            timestamp: 0.0,
            rssi_dbm,
            phase_rad: 0.0,
            doppler_hz,
            channel: 0,
            freq_hz,
        }
    }

    fn unit_cfg() -> RfConfig {
        RfConfig {
            tx_power: 1.0,
            reader_gain: 1.0,
            sawtooth_residual: false,
            ..RfConfig::default()
        }
    }

    #[test]
    fn zeta_of_unit_inputs_is_one() {
        // lambda = 4 pi meters
        let f = SPEED_OF_LIGHT / (4.0 * PI);
        let z = compute_zeta(&obs(30.0, f, 0.0), &unit_cfg()).unwrap();
        assert!((z - 1.0).abs() < 1e-12, "{z}");
    }

    #[test]
    fn doubling_power_halves_zeta() {
        let cfg = RfConfig::default();
        let a = zeta_from_power(1e-3, 915e6, &cfg).unwrap();
        let b = zeta_from_power(2e-3, 915e6, &cfg).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(zeta_from_power(0.0, 915e6, &cfg).is_err());
        assert!(zeta_from_power(-1.0, 915e6, &cfg).is_err());
    }

    #[test]
    fn zeta_recovers_modeled_tag_terms() {
        let script = BreathScript::new(vec![Segment::breathing(20.0, 31.0)]).unwrap();
        let cfg = RfConfig {
            noise_sigma: 0.0,
            ..RfConfig::default()
        };
        let stream = synthesize(&script, &cfg).unwrap();
        for r in &stream.records {
            let modeled = crate::simbaby::tag_state(&script, &cfg, r.timestamp).zeta();
            let z = compute_zeta(r, &cfg).unwrap();
            assert!(((z - modeled) / modeled).abs() < 1e-6);
        }
    }

    #[test]
    fn doppler_velocity_cases() {
        assert_eq!(doppler_velocity(&obs(0.0, 900e6, 0.0)), 0.0);
        let v = doppler_velocity(&obs(0.0, 900e6, 30.0));
        assert!((v - 4.99654).abs() < 1e-4, "{v}");
        assert_eq!(doppler_velocity(&obs(0.0, 900e6, -30.0)), -v);
    }

    fn script_and_stream(segments: Vec<Segment>) -> (BreathScript, ObservationStream, RfConfig) {
        let script = BreathScript::new(segments).unwrap();
        let cfg = RfConfig::default();
        let stream = synthesize(&script, &cfg).unwrap();
        (script, stream, cfg)
    }

    #[test]
    fn windows_cover_the_stream() {
        let (script, stream, cfg) = script_and_stream(vec![
            Segment::breathing(60.0, 31.0),
            Segment::apnea(30.0),
            Segment::breathing(30.0, 31.0),
        ]);
        let ws = windowize(&stream, &script, &cfg, &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 120);
        assert!(ws.iter().all(|w| w.samples.len() == 28));
        assert!(ws.len() * 28 <= stream.len());
        assert_eq!(ws[59].label, 1);
        assert_eq!(ws[60].label, 0);
        assert_eq!(ws[89].label, 0);
        assert_eq!(ws[90].label, 1);
    }

    #[test]
    fn all_apnea_windows_are_zero() {
        let (script, stream, cfg) = script_and_stream(vec![Segment::apnea(45.0)]);
        let ws = windowize(&stream, &script, &cfg, &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 45);
        assert!(ws.iter().all(|w| w.label == 0));
    }

    #[test]
    fn straddling_window_takes_midpoint_label() {
        let (script, stream, cfg) = script_and_stream(vec![Segment::breathing(10.4, 31.0), Segment::apnea(10.0)]);
        let ws = windowize(&stream, &script, &cfg, &WindowConfig::default()).unwrap();
        // [10, 11) has its midpoint 10.5 inside the apnea segment.
        let w = ws.iter().find(|w| (w.window_start - 10.0).abs() < 1e-9).unwrap();
        assert_eq!(w.label, 0);
        let (script, stream, cfg) = script_and_stream(vec![Segment::breathing(10.6, 31.0), Segment::apnea(10.0)]);
        let ws = windowize(&stream, &script, &cfg, &WindowConfig::default()).unwrap();
        let w = ws.iter().find(|w| (w.window_start - 10.0).abs() < 1e-9).unwrap();
        assert_eq!(w.label, 1);
    }

    #[test]
    fn nan_records_are_filtered_and_windows_resampled() {
        let (script, mut stream, cfg) = script_and_stream(vec![Segment::breathing(5.0, 31.0)]);
        stream.records[3].rssi_dbm = f64::NAN;
        let ws = windowize(&stream, &script, &cfg, &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 5);
        assert!(ws.iter().all(|w| w.samples.len() == 28));
        assert!(ws.iter().flat_map(|w| &w.samples).all(|s| s[0].is_finite() && s[1].is_finite()));
    }

    #[test]
    fn window_longer_than_stream_is_rejected() {
        let (script, stream, cfg) = script_and_stream(vec![Segment::breathing(2.0, 31.0)]);
        let wc = WindowConfig {
            window_s: 5.0,
            ..WindowConfig::default()
        };
        assert!(windowize(&stream, &script, &cfg, &wc).is_err());
        assert!(windowize(&ObservationStream::default(), &script, &cfg, &WindowConfig::default()).is_err());
    }

    #[test]
    fn interrogation_rate_mismatch_is_resampled() {
        let script = BreathScript::new(vec![Segment::breathing(4.0, 31.0)]).unwrap();
        let cfg = RfConfig {
            interrogation_rate: 90.0,
            ..RfConfig::default()
        };
        let stream = synthesize(&script, &cfg).unwrap();
        let ws = windowize(&stream, &script, &cfg, &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 4);
        assert!(ws.iter().all(|w| w.samples.len() == 28));
    }

    fn window(values: &[[f64; 2]], label: u8, start: f64) -> FeatureWindow {
        FeatureWindow {
            samples: values.to_vec(),
            label,
            window_start: start,
        }
    }

    #[test]
    fn standard_score_of_mean_and_one_sigma() {
        let ws = vec![window(&[[1.0, 10.0], [3.0, 30.0]], 1, 0.0)];
        let s = ScalerStats::fit(&ws).unwrap();
        let z = s.transform(&window(&[[2.0, 20.0], [3.0, 30.0]], 1, 0.0));
        assert_eq!(z.samples[0], [0.0, 0.0]);
        assert!((z.samples[1][0] - 1.0).abs() < 1e-12);
        assert!((z.samples[1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_rejected() {
        let ws = vec![window(&[[1.0, 10.0], [1.0, 30.0]], 1, 0.0)];
        assert!(matches!(ScalerStats::fit(&ws), Err(Error::ZeroVariance { feature: 0 })));
    }

    fn moments(ws: &[FeatureWindow]) -> ([f64; 2], [f64; 2]) {
        let n = ws.iter().map(|w| w.samples.len()).sum::<usize>() as f64;
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        for s in ws.iter().flat_map(|w| &w.samples) {
            m[0] += s[0] / n;
            m[1] += s[1] / n;
        }
        for s in ws.iter().flat_map(|w| &w.samples) {
            v[0] += (s[0] - m[0]).powi(2) / n;
            v[1] += (s[1] - m[1]).powi(2) / n;
        }
        (m, [v[0].sqrt(), v[1].sqrt()])
    }

    fn arb_windows() -> impl Strategy<Value = Vec<FeatureWindow>> {
        prop::collection::vec(
            prop::collection::vec((-1e3f64..1e3, -50f64..50.0), 3..6),
            2..12,
        )
        .prop_map(|ws| {
            ws.into_iter()
                .enumerate()
                .map(|(i, s)| window(&s.into_iter().map(|(a, b)| [a, b]).collect::<Vec<_>>(), 0, i as f64))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn standardized_moments_are_zero_one(ws in arb_windows()) {
            prop_assume!(ScalerStats::fit(&ws).is_ok());
            let s = ScalerStats::fit(&ws).unwrap();
            let z = s.transform_all(&ws);
            let (m, sd) = moments(&z);
            for f in 0..2 {
                prop_assert!(m[f].abs() < 1e-9);
                prop_assert!((sd[f] - 1.0).abs() < 1e-9);
            }
            // refitting on standardized data is (numerically) the identity
            let again = ScalerStats::fit(&z).unwrap().transform_all(&z);
            for (a, b) in again.iter().flat_map(|w| &w.samples).zip(z.iter().flat_map(|w| &w.samples)) {
                prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn zeta_is_scale_covariant(dbm in -80f64..10.0, c in 0.01f64..100.0) {
            let cfg = RfConfig::default();
            let p = dbm_to_watts(dbm);
            let a = zeta_from_power(p, 910e6, &cfg).unwrap();
            let b = zeta_from_power(c * p, 910e6, &cfg).unwrap();
            prop_assert!(((b * c) / a - 1.0).abs() < 1e-12);
        }
    }

    fn numbered(n: usize) -> Vec<FeatureWindow> {
        (0..n)
            .map(|i| window(&[[i as f64, -(i as f64)], [0.5, 0.25]], (i % 2) as u8, i as f64))
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (tr, te) = split(&numbered(100), 3).unwrap();
        assert_eq!((tr.len(), te.len()), (75, 25));
        let (tr, te) = split(&numbered(4), 3).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 1));
        assert_eq!(split(&numbered(50), 9).unwrap(), split(&numbered(50), 9).unwrap());
        assert!(split(&numbered(3), 1).is_err());
        for n in 4..200 {
            let (tr, te) = split(&numbered(n), 1).unwrap();
            assert_eq!(tr.len() + te.len(), n);
            assert!((tr.len() as f64 - 3.0 * te.len() as f64).abs() <= 4.0, "{n}");
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ws = vec![
            window(&[[0.1 + 0.2, 1e-300], [-3.5, std::f64::consts::PI]], 1, 0.0),
            window(&[[1.0 / 3.0, -0.0], [2.0, 7.25]], 0, 1.0),
        ];
        let (f, l) = default_paths(dir.path());
        export_csv(&ws, &f, &l).unwrap();
        let back = import_csv(&f, &l).unwrap();
        assert!(back.dropped_rows.is_empty());
        assert_eq!(back.windows, ws);

        let ds = Dataset::from_windows(&numbered(20), 4).unwrap();
        ds.export_dir(&dir.path().join("ds")).unwrap();
        assert_eq!(Dataset::import_dir(&dir.path().join("ds")).unwrap(), ds);
    }

    #[test]
    fn nan_row_is_dropped_with_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = default_paths(dir.path());
        fs::write(&f, "window_start,sample_idx,zeta,velocity\n0,0,1.0,2.0\n0,1,NaN,3.0\n0,2,3.0,4.0\n").unwrap();
        fs::write(&l, "window_start,label\n0,1\n").unwrap();
        let im = import_csv(&f, &l).unwrap();
        assert_eq!(im.dropped_rows, vec![3]);
        assert_eq!(im.windows[0].samples, vec![[1.0, 2.0], [2.0, 3.0], [3.0, 4.0]]);
    }

    #[test]
    fn schema_and_parse_errors_carry_context() {
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = default_paths(dir.path());
        fs::write(&f, "window_start,sample_idx,zeta,velocity\n0,0,1.0,2.0\n").unwrap();
        fs::write(&l, "window_start\n0\n").unwrap();
        assert!(matches!(import_csv(&f, &l), Err(Error::Schema { .. })));

        fs::write(&l, "window_start,label\n0,1\n").unwrap();
        fs::write(&f, "window_start,sample_idx,zeta,velocity\n0,0,1.0,inf\n").unwrap();
        match import_csv(&f, &l) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        fs::write(&f, "window_start,sample_idx,zeta,velocity\n0,0,1.0,2.0\n0,1,abc,2.0\n").unwrap();
        match import_csv(&f, &l) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn band_power_peaks_for_breathing() {
        let script = BreathScript::new(vec![Segment::breathing(30.0, 60.0), Segment::apnea(30.0)]).unwrap();
        let cfg = RfConfig {
            noise_sigma: 0.0,
            ..RfConfig::default()
        };
        let stream = synthesize(&script, &cfg).unwrap();
        let wc = WindowConfig {
            window_s: 2.0,
            samples_per_window: 56,
            ..WindowConfig::default()
        };
        let ws = windowize(&stream, &script, &cfg, &wc).unwrap();
        let breathing = band_power(&ws[2], 1, 28.0, 0.3, 1.5);
        let apnea = band_power(&ws[20], 1, 28.0, 0.3, 1.5);
        assert!(breathing > 0.0);
        assert_eq!(apnea, 0.0);
    }
}
