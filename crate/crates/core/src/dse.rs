//! Threshold / horizon / sample-size sweeps and accuracy-energy Pareto frontiers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::neuromap::{TileGrid, TileMapping};
use crate::sim::{classify_checkpoints, SimConfig};
use crate::snn::SnnNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub v_th: f64,
    pub timesteps: usize,
    pub sample_size: usize,
    pub accuracy: f64,
    /// Mean pJ per inference.
    pub energy_pj: f64,
    pub mean_spikes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub thresholds: Vec<f64>,
    pub timesteps: Vec<usize>,
    /// Number of leading test windows evaluated; empty means the whole set.
    pub sample_sizes: Vec<usize>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        SweepAxes {
            thresholds: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 8.0],
            timesteps: vec![4, 8, 16, 32],
            sample_sizes: Vec::new(),
        }
    }
}

/// Per-spike energy of each neuron: `e_spike + hop_cost * e_hop`.
pub fn neuron_costs(mapping: &TileMapping, grid: &TileGrid) -> Vec<f64> {
    mapping.hop_cost.iter().map(|&h| grid.e_spike + h as f64 * grid.e_hop).collect()
}

/// Full Cartesian sweep. Each threshold is simulated once at the longest horizon over
/// the largest sample; shorter horizons and smaller samples are read off as prefixes.
pub fn sweep(
    net: &SnnNetwork,
    windows: &[FeatureWindow],
    mapping: &TileMapping,
    grid: &TileGrid,
    axes: &SweepAxes,
    seed: u64,
) -> Result<Vec<ParetoPoint>> {
    if axes.thresholds.is_empty() || axes.timesteps.is_empty() {
        return Err(Error::InvalidArgument("sweep axes must be non-empty".into()));
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to sweep".into()));
    }
    let mut sizes: Vec<usize> = if axes.sample_sizes.is_empty() {
        vec![windows.len()]
    } else {
        axes.sample_sizes.iter().map(|&s| s.min(windows.len())).collect()
    };
    sizes.sort_unstable();
    sizes.dedup();
    if sizes[0] == 0 {
        return Err(Error::InvalidArgument("sample sizes must be >= 1".into()));
    }
    let mut ts = axes.timesteps.clone();
    ts.sort_unstable();
    ts.dedup();
    let mut ths = axes.thresholds.clone();
    ths.sort_by(f64::total_cmp);
    ths.dedup();
    let costs = neuron_costs(mapping, grid);
    let sample = &windows[..*sizes.last().unwrap()];
    let mut points = Vec::new();
    for &v in &ths {
        let cfg = SimConfig {
            timesteps: *ts.last().unwrap(),
            v_th: Some(v),
            seed,
            ..SimConfig::default()
        };
        let evals = classify_checkpoints(net, sample, &cfg, &ts, Some(&costs))?;
        for ev in &evals {
            for &s in &sizes {
                let head = &ev.windows[..s];
                let hits = head.iter().filter(|w| w.predicted == w.label).count();
                points.push(ParetoPoint {
                    v_th: v,
                    timesteps: ev.timesteps,
                    sample_size: s,
                    accuracy: hits as f64 / s as f64,
                    energy_pj: head.iter().map(|w| w.energy_pj).sum::<f64>() / s as f64,
                    mean_spikes: head.iter().map(|w| w.total_spikes as f64).sum::<f64>() / s as f64,
                });
            }
        }
        log::info!("sweep V_th={v}: done");
    }
    Ok(points)
}

fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.accuracy >= b.accuracy && a.energy_pj <= b.energy_pj && (a.accuracy > b.accuracy || a.energy_pj < b.energy_pj)
}

/// Points not dominated in (higher accuracy, lower energy), energy ascending. Of several
/// identical points only the first survives.
pub fn pareto(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<ParetoPoint> = points.to_vec();
    sorted.sort_by(|a, b| a.energy_pj.total_cmp(&b.energy_pj).then(b.accuracy.total_cmp(&a.accuracy)));
    let mut out: Vec<ParetoPoint> = Vec::new();
    for p in sorted {
        if out.last().is_none_or(|l| p.accuracy > l.accuracy) {
            out.push(p);
        }
    }
    out
}

/// O(n^2) reference used to cross-check [`pareto`].
pub fn pareto_brute_force(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut out: Vec<ParetoPoint> = Vec::new();
    for p in points {
        if points.iter().any(|q| dominates(q, p)) {
            continue;
        }
        if out.iter().any(|q| q.accuracy == p.accuracy && q.energy_pj == p.energy_pj) {
            continue;
        }
        out.push(*p);
    }
    out.sort_by(|a, b| a.energy_pj.total_cmp(&b.energy_pj));
    out
}

/// Most accurate point within `budget_pj`; ties go to lower energy, then fewer
/// timesteps, then the lower threshold.
pub fn select(points: &[ParetoPoint], budget_pj: f64) -> Option<ParetoPoint> {
    points
        .iter()
        .filter(|p| p.energy_pj <= budget_pj)
        .min_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then(a.energy_pj.total_cmp(&b.energy_pj))
                .then(a.timesteps.cmp(&b.timesteps))
                .then(a.v_th.total_cmp(&b.v_th))
        })
        .copied()
}

/// Cheapest point with accuracy at least `floor`; ties go to higher accuracy, then
/// fewer timesteps, then the lower threshold.
pub fn cheapest_within(points: &[ParetoPoint], floor: f64) -> Option<ParetoPoint> {
    points
        .iter()
        .filter(|p| p.accuracy >= floor)
        .min_by(|a, b| {
            a.energy_pj
                .total_cmp(&b.energy_pj)
                .then(b.accuracy.total_cmp(&a.accuracy))
                .then(a.timesteps.cmp(&b.timesteps))
                .then(a.v_th.total_cmp(&b.v_th))
        })
        .copied()
}

/// Points of the largest evaluated sample size.
pub fn full_sample(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let max = points.iter().map(|p| p.sample_size).max().unwrap_or(0);
    points.iter().filter(|p| p.sample_size == max).copied().collect()
}

pub const SWEEP_HEADER: [&str; 5] = ["v_th_mv", "timesteps", "sample_size", "accuracy", "energy_pj"];

pub fn write_sweep_csv<W: Write>(points: &[ParetoPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for p in points {
        w.write_record([
            p.v_th.to_string(),
            p.timesteps.to_string(),
            p.sample_size.to_string(),
            p.accuracy.to_string(),
            p.energy_pj.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<dse csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(accuracy: f64, energy_pj: f64) -> ParetoPoint {
        ParetoPoint { v_th: 1.0, timesteps: 8, sample_size: 10, accuracy, energy_pj, mean_spikes: 0.0 }
    }

    #[test]
    fn dominated_point_is_removed() {
        let f = pareto(&[pt(0.9, 10.0), pt(0.8, 20.0)]);
        assert_eq!(f, vec![pt(0.9, 10.0)]);
    }

    #[test]
    fn identical_points_leave_one() {
        assert_eq!(pareto(&[pt(0.5, 3.0); 5]).len(), 1);
        assert!(pareto(&[]).is_empty());
    }

    #[test]
    fn selection_respects_budget() {
        let pts = [pt(0.95, 100.0), pt(0.9, 10.0), pt(0.9, 8.0), pt(0.5, 1.0)];
        assert_eq!(select(&pts, 50.0), Some(pt(0.9, 8.0)));
        assert_eq!(select(&pts, 0.5), None);
        assert_eq!(cheapest_within(&pts, 0.9), Some(pt(0.9, 8.0)));
        assert_eq!(cheapest_within(&pts, 0.99), None);
    }

    proptest! {
        #[test]
        fn frontier_matches_brute_force(raw in prop::collection::vec((0u8..12, 0u8..12), 0..40)) {
            let pts: Vec<ParetoPoint> = raw.iter().map(|&(a, e)| pt(a as f64 / 11.0, e as f64)).collect();
            let fast = pareto(&pts);
            prop_assert_eq!(&fast, &pareto_brute_force(&pts));
            for (i, a) in fast.iter().enumerate() {
                for b in &fast[i + 1..] {
                    prop_assert!(!dominates(a, b) && !dominates(b, a));
                }
            }
        }
    }
}
