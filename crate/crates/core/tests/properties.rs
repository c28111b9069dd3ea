use std::path::Path;

use proptest::prelude::*;
use respira::convert::{self, ConvertOptions};
use respira::dse::{self, ParetoPoint};
use respira::features::{self, FeatureWindow};
use respira::metrics;
use respira::neuromap::{self, TileGrid};
use respira::nn::{Architecture, CnnModel};
use respira::quant;
use respira::sim::{self, SimConfig};
use respira::snn::SnnNetwork;

fn tiny_arch() -> Architecture {
    Architecture { timesteps: 6, filters: 4, kernel: 2, hidden1: 8, hidden2: 5, ..Architecture::default() }
}

fn window(vals: &[f64], label: u8) -> FeatureWindow {
    FeatureWindow { samples: vals.chunks(2).map(|c| [c[0], c[1]]).collect(), label, window_start: 0.0 }
}

fn tiny_net(seed: u64) -> SnnNetwork {
    let model = CnnModel::respiratory(&tiny_arch(), seed);
    convert::convert(&model, ConvertOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantizer_is_idempotent_monotone_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, k in 1u32..=16) {
        let qa = quant::quantize_value(a, k).unwrap();
        let n = (1u64 << k) as f64 - 1.0;
        prop_assert_eq!(quant::quantize_value(qa, k).unwrap(), qa);
        prop_assert!((qa - a).abs() <= 0.5 / n + 1e-15);
        prop_assert!(((qa * n).round() - qa * n).abs() < 1e-9);
        let qb = quant::quantize_value(b, k).unwrap();
        if a <= b {
            prop_assert!(qa <= qb);
        }
    }

    #[test]
    fn quantized_weights_use_at_most_two_to_the_k_levels(w in prop::collection::vec(-3.0f64..3.0, 2..40), k in 1u32..=6) {
        prop_assume!(w.iter().any(|v| v.abs() > 1e-6));
        let t = quant::quantize_weights(&w, k).unwrap();
        let mut levels: Vec<u64> = t.q.iter().map(|v| v.to_bits()).collect();
        levels.sort_unstable();
        levels.dedup();
        prop_assert!(levels.len() <= 1 << k);
        prop_assert!(t.q.iter().all(|v| (0.0..=1.0).contains(v)));
        let max = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for back in t.dequantize() {
            prop_assert!(back.is_finite() && back.abs() <= max + 1e-9);
        }
    }

    #[test]
    fn size_is_params_times_bits(params in 0u64..10_000_000, k in 1u32..=64) {
        prop_assert_eq!(quant::model_size_bits(params, k), params * k as u64);
    }

    #[test]
    fn ratio_metrics_are_bounded_and_auc_flips(
        raw in prop::collection::vec((0usize..2, 0usize..2, 0u8..6), 1..30)
    ) {
        let labels: Vec<usize> = raw.iter().map(|r| r.0).collect();
        let preds: Vec<usize> = raw.iter().map(|r| r.1).collect();
        let scores: Vec<f64> = raw.iter().map(|r| r.2 as f64).collect();
        let cm = metrics::confusion(&preds, &labels).unwrap();
        prop_assert_eq!(cm.total(), raw.len() as u64);
        let m = metrics::summarize(&cm, &scores, &labels).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.specificity, m.auc] {
            prop_assert!(v.is_nan() || (0.0..=1.0).contains(&v));
        }
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        match (metrics::roc_auc(&scores, &labels).unwrap(), metrics::roc_auc(&neg, &labels).unwrap()) {
            (Some(a), Some(b)) => prop_assert!((a + b - 1.0).abs() < 1e-12),
            (None, None) => {}
            _ => prop_assert!(false, "AUC defined for one orientation only"),
        }
    }

    #[test]
    fn bland_altman_limits_bracket_the_mean(a in prop::collection::vec(0.0f64..1.0, 1..30), shift in -0.2f64..0.2) {
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let ba = metrics::bland_altman(&a, &b).unwrap();
        prop_assert!((ba.mean_difference + shift).abs() < 1e-9);
        prop_assert!(ba.lower_limit <= ba.mean_difference + 1e-12 && ba.mean_difference <= ba.upper_limit + 1e-12);
        prop_assert!(ba.min_difference <= ba.mean_difference + 1e-12 && ba.mean_difference <= ba.max_difference + 1e-12);
    }

    #[test]
    fn frontier_is_a_sorted_antichain(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1e4), 0..50)) {
        let pts: Vec<ParetoPoint> = raw
            .iter()
            .map(|&(accuracy, energy_pj)| ParetoPoint { v_th: 1.0, timesteps: 4, sample_size: 1, accuracy, energy_pj, mean_spikes: 0.0 })
            .collect();
        let f = dse::pareto(&pts);
        for w in f.windows(2) {
            prop_assert!(w[0].energy_pj <= w[1].energy_pj && w[0].accuracy < w[1].accuracy);
        }
        for p in &pts {
            // Every input point is matched or beaten by some frontier point.
            prop_assert!(f.iter().any(|q| q.accuracy >= p.accuracy && q.energy_pj <= p.energy_pj));
        }
        if let Some(best) = dse::select(&pts, f64::INFINITY) {
            let top = pts.iter().map(|p| p.accuracy).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(best.accuracy, top);
        }
    }

    #[test]
    fn simulation_counts_are_consistent(vals in prop::collection::vec(-2.0f64..2.0, 12), seed in 0u64..1000, t in 1usize..40) {
        let net = tiny_net(3);
        let w = window(&vals, 1);
        let trains = sim::encode(&net, &w, t, seed).unwrap();
        let cfg = SimConfig { timesteps: t, seed, ..SimConfig::default() };
        let a = sim::run(&net, &trains, &cfg).unwrap();
        prop_assert_eq!(&a, &sim::run(&net, &trains, &cfg).unwrap());
        prop_assert_eq!(a.counts.iter().map(|&c| c as u64).sum::<u64>(), a.total);
        prop_assert!(a.counts.iter().all(|&c| c as usize <= t));
    }

    #[test]
    fn doubling_the_threshold_never_adds_spikes(vals in prop::collection::vec(-2.0f64..2.0, 12), seed in 0u64..1000, v in 0.25f64..4.0) {
        let net = tiny_net(7);
        let trains = sim::encode(&net, &window(&vals, 0), 64, seed).unwrap();
        let at = |v_th: f64| sim::run(&net, &trains, &SimConfig { timesteps: 64, v_th: Some(v_th), seed, ..SimConfig::default() }).unwrap().total;
        prop_assert!(at(2.0 * v) <= at(v));
    }

    #[test]
    fn energy_is_spikes_and_hops_priced(counts in prop::collection::vec(0u64..50, 1..2)) {
        let net = tiny_net(5);
        let grid = TileGrid { rows: 2, cols: 2, max_neurons: 16, ..TileGrid::default() };
        let m = neuromap::map(&net, &grid, None).unwrap();
        let c: Vec<u64> = (0..net.neurons.len()).map(|i| counts[0] + i as u64 % 3).collect();
        let e = neuromap::energy(&c, &m, &grid).unwrap();
        prop_assert_eq!(e.spikes, c.iter().sum::<u64>() as f64);
        prop_assert!((e.total_pj - (23.6 * e.spikes + 3.0 * e.hops)).abs() < 1e-6 * e.total_pj.max(1.0));
        let costs = dse::neuron_costs(&m, &grid);
        let direct: f64 = c.iter().zip(&costs).map(|(&n, &k)| n as f64 * k).sum();
        prop_assert!((direct - e.total_pj).abs() < 1e-6 * e.total_pj.max(1.0));
    }
}

#[test]
fn converted_network_survives_the_text_format() {
    let net = tiny_net(9);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("net.txt");
    net.save(&p).unwrap();
    assert_eq!(SnnNetwork::load(&p).unwrap(), net);
    assert!(SnnNetwork::from_text("respira-snn 99\n", Path::new("x")).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let model = CnnModel::respiratory(&tiny_arch(), 4);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    model.save_json(&p).unwrap();
    let back = CnnModel::load_json(&p).unwrap();
    let w = window(&[0.1, -0.3, 0.7, 0.2, -1.0, 0.5, 0.0, 0.4, 1.2, -0.8, 0.3, 0.3], 0);
    assert_eq!(model.predict_proba(&[w.clone()]).unwrap(), back.predict_proba(&[w]).unwrap());
}

#[test]
fn features_round_trip_through_csv() {
    let ws: Vec<FeatureWindow> = (0..5)
        .map(|i| FeatureWindow { window_start: i as f64 * 10.0, ..window(&[0.25 * i as f64; 12], (i % 2) as u8) })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let (f, l) = features::default_paths(dir.path());
    features::export_csv(&ws, &f, &l).unwrap();
    assert_eq!(features::import_csv(&f, &l).unwrap().windows, ws);
}
