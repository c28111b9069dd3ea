//! Synthetic mannequin + RFID backscatter channel.
//!
//! A [`BreathScript`] programs the mannequin as an ordered list of breathing and apnea
//! segments. [`synthesize`] interrogates a chest-worn tag at a fixed rate, hopping over
//! the configured channels, and emits RSSI/phase/Doppler observations from the radar
//! cross-section forward model
//!
//! ```text
//! P_rx = P_tx * G_reader^2 * G_tag^2 * R * (lambda / (4 pi r))^4
//! ```
//!
//! Breathing moves the tag radially by `a * sin(2 pi f_b t)` and strains the antenna,
//! modulating both `r` and `G_tag`. The reader's per-channel RSSI sawtooth is injected
//! in the dB domain so the feature stage can remove it again.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Offset used by the reader's RSSI sawtooth, in Hz.
const SAWTOOTH_OFFSET_HZ: f64 = 0.5e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreathState {
    Breathing,
    Apnea,
}

impl BreathState {
    pub fn label(self) -> u8 {
        match self {
            BreathState::Breathing => 1,
            BreathState::Apnea => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub state: BreathState,
    pub duration_s: f64,
    /// Breaths per minute; ignored (and stored as 0) for apnea.
    pub rate_bpm: f64,
}

impl Segment {
    pub fn breathing(duration_s: f64, rate_bpm: f64) -> Self {
        Segment {
            state: BreathState::Breathing,
            duration_s,
            rate_bpm,
        }
    }

    pub fn apnea(duration_s: f64) -> Self {
        Segment {
            state: BreathState::Apnea,
            duration_s,
            rate_bpm: 0.0,
        }
    }
}

/// Ordered breathing schedule. Segments occupy closed-open intervals `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BreathScript {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    total_duration: f64,
}

/// Breathing rate used by the default schedule.
pub const DEFAULT_RATE_BPM: f64 = 31.0;
pub const DEFAULT_APNEA_S: [f64; 3] = [30.0, 45.0, 60.0];
const DEFAULT_BREATHING_S: [f64; 6] = [90.0, 120.0, 75.0, 105.0, 60.0, 135.0];

impl BreathScript {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("breath script has no segments".into()));
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for (i, s) in segments.iter().enumerate() {
            if !(s.duration_s > 0.0) || !s.duration_s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "segment {i}: duration must be positive, got {}",
                    s.duration_s
                )));
            }
            if s.state == BreathState::Breathing && !(s.rate_bpm > 0.0 && s.rate_bpm.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "segment {i}: breathing rate must be positive, got {}",
                    s.rate_bpm
                )));
            }
            starts.push(t);
            t += s.duration_s;
        }
        Ok(BreathScript {
            segments,
            starts,
            total_duration: t,
        })
    }

    /// One hour of 31 bpm breathing interleaved with 30/45/60 s apnea pauses.
    pub fn default_script() -> Self {
        Self::scheduled(3600.0, DEFAULT_RATE_BPM)
    }

    /// Alternate variable-length breathing intervals with the 30/45/60 s apnea cycle
    /// until `total_s` is filled. Apnea pauses are never truncated; the last breathing
    /// interval absorbs any remainder.
    pub fn scheduled(total_s: f64, rate_bpm: f64) -> Self {
        let mut segments = Vec::new();
        let mut remaining = total_s;
        let mut i = 0;
        let shortest_apnea = DEFAULT_APNEA_S[0];
        while remaining > 0.0 {
            let mut b = DEFAULT_BREATHING_S[i % DEFAULT_BREATHING_S.len()].min(remaining);
            if remaining - b < shortest_apnea {
                b = remaining;
            }
            segments.push(Segment::breathing(b, rate_bpm));
            remaining -= b;
            if remaining <= 0.0 {
                break;
            }
            let mut a = DEFAULT_APNEA_S[i % DEFAULT_APNEA_S.len()];
            if a > remaining {
                a = DEFAULT_APNEA_S
                    .iter()
                    .copied()
                    .filter(|&x| x <= remaining)
                    .fold(shortest_apnea, f64::max);
            }
            segments.push(Segment::apnea(a));
            remaining -= a;
            i += 1;
        }
        BreathScript::new(segments).expect("default schedule is valid")
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    /// Index and start time of the segment containing `t`, if `0 <= t < total`.
    pub fn locate(&self, t: f64) -> Option<(usize, f64)> {
        if !(t >= 0.0 && t < self.total_duration) {
            return None;
        }
        let idx = self.starts.partition_point(|&s| s <= t) - 1;
        Some((idx, self.starts[idx]))
    }

    /// Ground-truth label: 1 while breathing, 0 during apnea.
    pub fn ground_truth(&self, t: f64) -> Result<u8> {
        self.locate(t)
            .map(|(i, _)| self.segments[i].state.label())
            .ok_or_else(|| {
                Error::OutOfRange(format!(
                    "t = {t} outside script [0, {})",
                    self.total_duration
                ))
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["state", "duration_s", "rate_bpm"])?;
        for s in &self.segments {
            let state = match s.state {
                BreathState::Breathing => "breathing",
                BreathState::Apnea => "apnea",
            };
            w.write_record([state, &s.duration_s.to_string(), &s.rate_bpm.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["state", "duration_s", "rate_bpm"] {
            return Err(Error::schema(path, format!("unexpected header {header:?}")));
        }
        let mut segments = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(path, line, format!("bad number in column {i}")))
            };
            let seg = match rec.get(0).map(str::trim) {
                Some("breathing") => Segment::breathing(num(1)?, num(2)?),
                Some("apnea") => Segment::apnea(num(1)?),
                other => {
                    return Err(Error::parse(path, line, format!("unknown state {other:?}")));
                }
            };
            segments.push(seg);
        }
        BreathScript::new(segments)
    }

    /// Parse the compact `"breathe <seconds> <bpm>"` / `"apnea <seconds>"` form used in
    /// run configuration files.
    pub fn from_directives<S: AsRef<str>>(lines: &[S]) -> Result<Self> {
        let mut segments = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let parts: Vec<&str> = line.as_ref().split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("script directive {i}: bad number {s:?}"))
                })
            };
            let seg = match parts.as_slice() {
                ["breathe", d, r] => Segment::breathing(num(d)?, num(r)?),
                ["apnea", d] => Segment::apnea(num(d)?),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "script directive {i}: expected `breathe <s> <bpm>` or `apnea <s>`, got {:?}",
                        line.as_ref()
                    )))
                }
            };
            segments.push(seg);
        }
        BreathScript::new(segments)
    }
}

/// Interrogation channel and tag configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    /// Transmit power, watts.
    pub tx_power: f64,
    pub reader_gain: f64,
    /// Tag antenna gain at rest.
    pub tag_gain: f64,
    /// Reader-to-tag distance at rest, meters.
    pub distance: f64,
    pub return_loss: f64,
    pub channel_count: usize,
    pub channel_spacing: f64,
    pub band_center: f64,
    /// Successful interrogations per second for the tag.
    pub interrogation_rate: f64,
    /// Standard deviation of additive measurement noise: dB on RSSI and Hz on Doppler.
    pub noise_sigma: f64,
    /// Radial chest excursion amplitude while breathing, meters.
    pub breath_amplitude: f64,
    /// Relative tag-gain change at full excursion (antenna strain).
    pub gain_modulation: f64,
    /// Inject the reader's per-channel RSSI sawtooth (and remove it during featurization).
    pub sawtooth_residual: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            tx_power: 1.0,
            reader_gain: 4.0,
            tag_gain: 1.64,
            distance: 0.3048,
            return_loss: 0.5,
            channel_count: 50,
            channel_spacing: 0.5e6,
            band_center: 915e6,
            interrogation_rate: 28.0,
            noise_sigma: 0.05,
            breath_amplitude: 0.005,
            gain_modulation: 0.05,
            sawtooth_residual: true,
            seed: 42,
        }
    }
}

impl RfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tx_power", self.tx_power),
            ("reader_gain", self.reader_gain),
            ("tag_gain", self.tag_gain),
            ("distance", self.distance),
            ("return_loss", self.return_loss),
            ("band_center", self.band_center),
            ("interrogation_rate", self.interrogation_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.channel_count == 0 {
            return Err(Error::InvalidArgument("channel_count must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.breath_amplitude >= 0.0) || !(self.channel_spacing >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise_sigma, breath_amplitude and channel_spacing must be non-negative".into(),
            ));
        }
        if self.breath_amplitude >= self.distance {
            return Err(Error::InvalidArgument("breath amplitude exceeds tag distance".into()));
        }
        Ok(())
    }

    /// Carrier frequency of channel `index`, centered on `band_center`.
    pub fn channel_frequency(&self, index: usize) -> f64 {
        let offset = index as f64 - (self.channel_count as f64 - 1.0) / 2.0;
        self.band_center + offset * self.channel_spacing
    }

    /// Channel index whose carrier is closest to `freq`.
    pub fn channel_of(&self, freq: f64) -> Option<usize> {
        (0..self.channel_count).find(|&i| (self.channel_frequency(i) - freq).abs() < 1.0)
    }
}

pub fn wavelength(freq_hz: f64) -> f64 {
    SPEED_OF_LIGHT / freq_hz
}

pub fn watts_to_dbm(p: f64) -> f64 {
    10.0 * p.log10() + 30.0
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// RSSI sawtooth caused by reporting across hopped channels, in dB:
/// `-10 log10(f^4 / (f - 0.5 MHz)^4)`.
pub fn sawtooth_residual_db(freq_hz: f64) -> f64 {
    -10.0 * (freq_hz.powi(4) / (freq_hz - SAWTOOTH_OFFSET_HZ).powi(4)).log10()
}

/// Instantaneous physical state of the tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagState {
    pub distance: f64,
    pub tag_gain: f64,
    pub return_loss: f64,
    /// Radial velocity, m/s (positive moving away from the reader).
    pub velocity: f64,
}

impl TagState {
    /// The wearer-dependent radar cross-section group `G_tag^-2 r^4 R^-1`.
    pub fn zeta(&self) -> f64 {
        self.distance.powi(4) / (self.tag_gain * self.tag_gain * self.return_loss)
    }
}

/// Tag state at time `t` under the chest-excursion model.
pub fn tag_state(script: &BreathScript, cfg: &RfConfig, t: f64) -> TagState {
    let (disp, vel) = match script.locate(t) {
        Some((i, start)) if script.segments[i].state == BreathState::Breathing => {
            let omega = 2.0 * PI * script.segments[i].rate_bpm / 60.0;
            let phase = omega * (t - start);
            (
                cfg.breath_amplitude * phase.sin(),
                cfg.breath_amplitude * omega * phase.cos(),
            )
        }
        _ => (0.0, 0.0),
    };
    let strain = if cfg.breath_amplitude > 0.0 {
        disp / cfg.breath_amplitude
    } else {
        0.0
    };
    TagState {
        distance: cfg.distance + disp,
        tag_gain: cfg.tag_gain * (1.0 + cfg.gain_modulation * strain),
        return_loss: cfg.return_loss,
        velocity: vel,
    }
}

/// Received power in watts from the radar cross-section forward model.
pub fn received_power(cfg: &RfConfig, tag: &TagState, freq_hz: f64) -> f64 {
    let lambda = wavelength(freq_hz);
    let path = lambda / (4.0 * PI * tag.distance);
    cfg.tx_power
        * cfg.reader_gain.powi(2)
        * tag.tag_gain.powi(2)
        * tag.return_loss
        * path.powi(4)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub timestamp: f64,
    pub rssi_dbm: f64,
    pub phase_rad: f64,
    pub doppler_hz: f64,
    pub channel: usize,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationStream {
    pub records: Vec<Observation>,
}

pub const STREAM_HEADER: [&str; 6] = [
    "timestamp",
    "rssi_dbm",
    "phase_rad",
    "doppler_hz",
    "channel",
    "freq_hz",
];

impl ObservationStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(STREAM_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.timestamp.to_string(),
                r.rssi_dbm.to_string(),
                r.phase_rad.to_string(),
                r.doppler_hz.to_string(),
                r.channel.to_string(),
                r.freq_hz.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<stream>", e))?;
        Ok(())
    }

    /// Read a stream CSV. Non-numeric fields are errors; `NaN` readings are kept and
    /// filtered later by windowing.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != STREAM_HEADER {
            return Err(Error::schema(path, format!("expected header {STREAM_HEADER:?}, got {header:?}")));
        }
        let mut records = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != STREAM_HEADER.len() {
                return Err(Error::parse(path, line, format!("expected 6 fields, got {}", rec.len())));
            }
            let f = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|_| {
                    Error::parse(path, line, format!("column {}: not a number: {:?}", STREAM_HEADER[i], &rec[i]))
                })
            };
            let channel = rec[4]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(path, line, format!("bad channel index {:?}", &rec[4])))?;
            let obs = Observation {
                timestamp: f(0)?,
                rssi_dbm: f(1)?,
                phase_rad: f(2)?,
                doppler_hz: f(3)?,
                channel,
                freq_hz: f(5)?,
            };
            if !(obs.timestamp > last_t) {
                return Err(Error::parse(path, line, "timestamps must be strictly increasing"));
            }
            last_t = obs.timestamp;
            records.push(obs);
        }
        Ok(ObservationStream { records })
    }
}

/// Interrogate the scripted mannequin.
///
/// Each record draws a uniform random channel and two standard normals (RSSI and Doppler
/// noise) from one seeded stream, so the hop schedule does not depend on `noise_sigma`.
pub fn synthesize(script: &BreathScript, cfg: &RfConfig) -> Result<ObservationStream> {
    cfg.validate()?;
    let count = (script.total_duration() * cfg.interrogation_rate).round() as usize;
    let mut rng = rng::stream(cfg.seed, &[0x5157_4e54]);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let t = i as f64 / cfg.interrogation_rate;
        let channel = rng.random_range(0..cfg.channel_count);
        let n_rssi: f64 = rng.sample(StandardNormal);
        let n_doppler: f64 = rng.sample(StandardNormal);
        let freq = cfg.channel_frequency(channel);
        let lambda = wavelength(freq);
        let tag = tag_state(script, cfg, t);
        let mut rssi = watts_to_dbm(received_power(cfg, &tag, freq));
        if cfg.sawtooth_residual {
            rssi += sawtooth_residual_db(freq);
        }
        rssi += cfg.noise_sigma * n_rssi;
        let doppler = 2.0 * tag.velocity / lambda + cfg.noise_sigma * n_doppler;
        let phase = (4.0 * PI * tag.distance / lambda).rem_euclid(2.0 * PI);
        records.push(Observation {
            timestamp: t,
            rssi_dbm: rssi,
            phase_rad: phase,
            doppler_hz: doppler,
            channel,
            freq_hz: freq,
        });
    }
    Ok(ObservationStream { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_script_is_one_hour_with_scheduled_pauses() {
        let s = BreathScript::default_script();
        assert!((s.total_duration() - 3600.0).abs() < 1e-9);
        let apneas: Vec<_> = s
            .segments()
            .iter()
            .filter(|x| x.state == BreathState::Apnea)
            .collect();
        assert!(!apneas.is_empty());
        for a in apneas {
            assert!(DEFAULT_APNEA_S.contains(&a.duration_s), "{a:?}");
        }
        for b in s.segments().iter().filter(|x| x.state == BreathState::Breathing) {
            assert_eq!(b.rate_bpm, 31.0);
        }
    }

    #[test]
    fn ground_truth_uses_closed_open_segments() {
        let s = BreathScript::new(vec![Segment::breathing(10.0, 31.0), Segment::apnea(5.0)]).unwrap();
        assert_eq!(s.ground_truth(0.0).unwrap(), 1);
        assert_eq!(s.ground_truth(9.999).unwrap(), 1);
        assert_eq!(s.ground_truth(10.0).unwrap(), 0);
        assert_eq!(s.ground_truth(14.9).unwrap(), 0);
        assert!(s.ground_truth(15.0).is_err());
        assert!(s.ground_truth(-0.1).is_err());
    }

    #[test]
    fn breathing_only_script_labels_everything_one() {
        let s = BreathScript::new(vec![Segment::breathing(20.0, 31.0)]).unwrap();
        for i in 0..200 {
            assert_eq!(s.ground_truth(i as f64 * 0.1).unwrap(), 1);
        }
    }

    #[test]
    fn invalid_segments_are_rejected() {
        assert!(BreathScript::new(vec![]).is_err());
        assert!(BreathScript::new(vec![Segment::apnea(0.0)]).is_err());
        assert!(BreathScript::new(vec![Segment::breathing(5.0, 0.0)]).is_err());
    }

    #[test]
    fn directives_parse() {
        let s = BreathScript::from_directives(&["breathe 12 31", "apnea 30"]).unwrap();
        assert_eq!(s.segments().len(), 2);
        assert_eq!(s.total_duration(), 42.0);
        assert!(BreathScript::from_directives(&["hold 3"]).is_err());
    }

    #[test]
    fn default_stream_has_expected_record_count() {
        let s = BreathScript::default_script();
        let stream = synthesize(&s, &RfConfig::default()).unwrap();
        let expected = 28.0 * 3600.0;
        assert!((stream.len() as f64 - expected).abs() <= 0.01 * expected);
        assert!(stream.records.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        let cfg = RfConfig::default();
        for r in stream.records.iter().take(500) {
            assert!(r.channel < cfg.channel_count);
            assert_eq!(r.freq_hz, cfg.channel_frequency(r.channel));
        }
    }

    #[test]
    fn apnea_without_noise_has_zero_doppler() {
        let s = BreathScript::new(vec![Segment::apnea(60.0)]).unwrap();
        let cfg = RfConfig {
            noise_sigma: 0.0,
            ..RfConfig::default()
        };
        let stream = synthesize(&s, &cfg).unwrap();
        assert!(stream.records.iter().all(|r| r.doppler_hz == 0.0));
    }

    #[test]
    fn noiseless_records_satisfy_forward_model() {
        let s = BreathScript::new(vec![Segment::breathing(30.0, 31.0), Segment::apnea(30.0)]).unwrap();
        let cfg = RfConfig {
            noise_sigma: 0.0,
            channel_count: 1,
            ..RfConfig::default()
        };
        let stream = synthesize(&s, &cfg).unwrap();
        for r in &stream.records {
            let lambda = wavelength(r.freq_hz);
            let p = dbm_to_watts(r.rssi_dbm - sawtooth_residual_db(r.freq_hz));
            let zeta = cfg.tx_power * cfg.reader_gain.powi(2) / p * (lambda / (4.0 * PI)).powi(4);
            let modeled = tag_state(&s, &cfg, r.timestamp).zeta();
            assert!(((zeta - modeled) / modeled).abs() < 1e-6);
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let s = BreathScript::scheduled(120.0, 31.0);
        let cfg = RfConfig::default();
        let mut a = Vec::new();
        let mut b = Vec::new();
        synthesize(&s, &cfg).unwrap().write_csv(&mut a).unwrap();
        synthesize(&s, &cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let other = RfConfig { seed: 7, ..cfg };
        let mut c = Vec::new();
        synthesize(&s, &other).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_rate() {
        let s = BreathScript::default_script();
        let cfg = RfConfig {
            interrogation_rate: 0.0,
            ..RfConfig::default()
        };
        assert!(synthesize(&s, &cfg).is_err());
    }

    #[test]
    fn sawtooth_residual_matches_reported_magnitude() {
        // About -0.0094 dB near the top of the 902-928 MHz band.
        let d = sawtooth_residual_db(923.25e6);
        assert!((d + 0.00941).abs() < 5e-5, "{d}");
    }

    #[test]
    fn channels_span_the_band() {
        let cfg = RfConfig::default();
        assert!((cfg.channel_frequency(0) - 902.75e6).abs() < 1.0);
        assert!((cfg.channel_frequency(49) - 927.25e6).abs() < 1.0);
        assert_eq!(cfg.channel_of(cfg.channel_frequency(17)), Some(17));
    }
}
