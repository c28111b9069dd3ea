//! The pipeline stages. Each reads the artifacts of earlier stages from disk, so any
//! stage can be re-run on its own.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use respira::convert::{self, ConvertOptions};
use respira::dse::{self, ParetoPoint};
use respira::features::{self, Dataset, FeatureWindow};
use respira::metrics::{self, MetricsReport, ReportTable};
use respira::neuromap::{self, SnnEnergy, TileMapping};
use respira::nn::CnnModel;
use respira::plot::{Chart, Series, Style};
use respira::quant::{self, EnergyModel, QuantConfig, SweepRow};
use respira::sim::{self, Engine, SimConfig};
use respira::simbaby::{self, ObservationStream};
use respira::snn::SnnNetwork;
use respira::trainer;

use crate::config::{RunConfig, TrafficSource};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Resolved configuration plus the output root.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Self {
        let hash = cfg.sha256();
        Ctx { cfg, out: out.into(), hash }
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    /// First line of every emitted report.
    pub fn stamp(&self) -> String {
        format!("seed={} config_sha256={}", self.cfg.seed, self.hash)
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.out.join(&self.cfg.paths.data).join(name)
    }

    pub fn models(&self, name: &str) -> PathBuf {
        self.out.join(&self.cfg.paths.models).join(name)
    }

    pub fn reports(&self, name: &str) -> PathBuf {
        self.out.join(&self.cfg.paths.reports).join(name)
    }

    fn ensure_parent(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        Ok(())
    }

    fn create(&self, path: &Path) -> Result<BufWriter<File>> {
        self.ensure_parent(path)?;
        Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
    }

    /// Write a CSV report preceded by the `# seed=… config_sha256=…` line.
    pub fn write_csv<F>(&self, path: &Path, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> respira::Result<()>,
    {
        let mut buf = format!("# {}\n", self.stamp()).into_bytes();
        body(&mut buf)?;
        self.write_bytes(path, &buf)
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        self.write_bytes(path, format!("# {}\n{text}", self.stamp()).as_bytes())
    }

    pub fn write_svg(&self, path: &Path, chart: &Chart) -> Result<()> {
        let svg = chart.to_svg();
        let body = format!("<!-- {} -->\n{svg}", self.stamp());
        self.write_bytes(path, body.as_bytes())
    }

    fn write_bytes(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let mut f = self.create(path)?;
        f.write_all(bytes).and_then(|_| f.flush()).map_err(|e| CliError::io(path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput { path: path.to_path_buf(), stage: Some(stage) })
    }
}

/// Rows of a CSV written by this tool, checking the header. `#` lines are skipped.
pub fn read_table(path: &Path, header: &[&str], stage: &'static str) -> Result<Vec<Vec<String>>> {
    require(path, stage)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let got: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header {
        return Err(CliError::Schema(format!("{}: expected header {header:?}, got {got:?}", path.display())));
    }
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn num<T: std::str::FromStr>(row: &[String], i: usize, path: &Path) -> Result<T> {
    row.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CliError::Schema(format!("{}: bad value in column {i} of {row:?}", path.display())))
}

fn load_dataset(ctx: &Ctx) -> Result<Dataset> {
    require(&ctx.data("scaler.csv"), "featurize")?;
    Ok(Dataset::import_dir(&ctx.out.join(&ctx.cfg.paths.data))?)
}

fn load_cnn(ctx: &Ctx) -> Result<CnnModel> {
    let p = ctx.models("cnn.json");
    require(&p, "train")?;
    Ok(CnnModel::load_json(&p)?)
}

fn load_snn(ctx: &Ctx) -> Result<SnnNetwork> {
    let p = ctx.models("snn.txt");
    require(&p, "convert")?;
    Ok(SnnNetwork::load(&p)?)
}

fn sim_config(ctx: &Ctx, timesteps: usize, v_th: Option<f64>) -> SimConfig {
    SimConfig {
        timesteps,
        v_th,
        leak: None,
        seed: ctx.cfg.seed,
        record_events: false,
    }
}

fn cnn_metrics(model: &CnnModel, windows: &[FeatureWindow]) -> Result<MetricsReport> {
    let proba = model.predict_proba(windows)?;
    let preds: Vec<usize> = proba.iter().map(|p| trainer::argmax(p)).collect();
    let scores: Vec<f64> = proba.iter().map(|p| p.get(1).copied().unwrap_or(0.0)).collect();
    let labels = trainer::labels_of(windows);
    let cm = metrics::confusion(&preds, &labels)?;
    Ok(metrics::summarize(&cm, &scores, &labels)?)
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let script = ctx.cfg.synth.breath_script()?;
    let stream = simbaby::synthesize(&script, &ctx.cfg.rf)?;
    log::info!("synthesized {} records over {} s", stream.len(), script.total_duration());
    let sp = ctx.data("script.csv");
    ctx.ensure_parent(&sp)?;
    script.write_csv(&sp)?;
    ctx.write_csv(&ctx.data("stream.csv"), |w| stream.write_csv(w))
}

pub fn featurize(ctx: &Ctx) -> Result<()> {
    let (sp, op) = (ctx.data("script.csv"), ctx.data("stream.csv"));
    require(&sp, "synth")?;
    require(&op, "synth")?;
    let script = simbaby::BreathScript::read_csv(&sp)?;
    let stream = ObservationStream::read_csv(&op)?;
    let windows = features::windowize(&stream, &script, &ctx.cfg.rf, &ctx.cfg.window)?;
    let ds = Dataset::from_windows(&windows, ctx.cfg.seed)?;
    log::info!("{} windows: {} train / {} test", windows.len(), ds.train.len(), ds.test.len());
    ds.export_dir(&ctx.out.join(&ctx.cfg.paths.data))?;
    Ok(())
}

pub fn train(ctx: &Ctx) -> Result<f64> {
    let ds = load_dataset(ctx)?;
    let init = CnnModel::respiratory(&ctx.cfg.model, ctx.cfg.seed);
    log::info!("training {} parameters on {} windows", init.param_count(), ds.train.len());
    let out = trainer::train_observed(&init, &ds.train, &ctx.cfg.train, ctx.cfg.seed, |e, _| {
        log::debug!("epoch {e} done");
        Ok(())
    })?;
    let acc = trainer::accuracy(&out.model, &ds.test)?;
    log::info!("best epoch {} of {}, test accuracy {acc:.4}", out.best_epoch, out.history.len());
    let mp = ctx.models("cnn.json");
    ctx.ensure_parent(&mp)?;
    out.model.save_json(&mp)?;
    ctx.write_csv(&ctx.reports("train_history.csv"), |w| trainer::write_history_csv(&out.history, w))?;
    Ok(acc)
}

pub fn tune(ctx: &Ctx) -> Result<()> {
    let ds = load_dataset(ctx)?;
    let init = CnnModel::respiratory(&ctx.cfg.model, ctx.cfg.seed);
    let t = &ctx.cfg.tune;
    let grid = trainer::grid_search(&init, &ds.train, &t.space, &ctx.cfg.train, ctx.cfg.seed)?;
    log::info!("grid best: {:?}", grid.best);
    ctx.write_csv(&ctx.reports("grid.csv"), |w| trainer::write_grid_csv(&grid, w))?;
    let mut hyper = ctx.cfg.train;
    hyper.learning_rate = grid.best.learning_rate;
    hyper.max_epochs = grid.best.epochs;
    let cv = trainer::kfold_validate(&init, &ds.train, &hyper, t.folds, t.repeats, ctx.cfg.seed)?;
    log::info!("cross-validation mean {:.4} sigma_error {:.4}", cv.mean, cv.sigma_error);
    ctx.write_csv(&ctx.reports("cv.csv"), |w| trainer::write_cv_csv(&cv, w))
}

/// Accuracy, energy and size for every configured bit width.
pub fn quantize(ctx: &Ctx) -> Result<Vec<SweepRow>> {
    let ds = load_dataset(ctx)?;
    let model = load_cnn(ctx)?;
    let q = &ctx.cfg.quant;
    let em = EnergyModel::calibrate(&model, quant::REFERENCE_LOW, quant::REFERENCE_HIGH, q.knee, q.mem_ratio)?;
    let labels = trainer::labels_of(&ds.test);
    let mut rows = Vec::with_capacity(q.bits.len());
    for &k in &q.bits {
        let qc = QuantConfig { k, b: q.mantissa_bits.min(k.saturating_sub(1)), apply_to: q.apply_to };
        let qm = quant::quantize_model(&model, qc, &ds.train)?;
        let proba = qm.predict_proba(&ds.test)?;
        let hits = proba.iter().zip(&labels).filter(|(p, &y)| trainer::argmax(p) == y).count();
        let energy = quant::cnn_energy(&model, k, &em)?;
        rows.push(SweepRow {
            k,
            accuracy: hits as f64 / labels.len() as f64,
            energy_pj: energy.total_pj,
            model_size_bits: energy.model_size_bits,
        });
        log::info!("k={k}: accuracy {:.4}", hits as f64 / labels.len() as f64);
    }
    ctx.write_csv(&ctx.reports("quantization.csv"), |w| quant::write_sweep_csv(&rows, w))?;
    Ok(rows)
}

pub fn convert_stage(ctx: &Ctx) -> Result<SnnNetwork> {
    let ds = load_dataset(ctx)?;
    let model = load_cnn(ctx)?;
    let c = &ctx.cfg.convert;
    let raw = convert::convert(&model, ConvertOptions { v_th: c.v_th, leak: c.leak })?;
    let net = convert::normalize_weights(&raw, &convert::calibration_inputs(&ds.train), c.percentile)?;
    log::info!("converted: {} neurons, {} synapses", net.neurons.len(), net.synapses.len());
    let p = ctx.models("snn.txt");
    ctx.ensure_parent(&p)?;
    net.save(&p)?;
    Ok(net)
}

pub fn simulate(ctx: &Ctx) -> Result<MetricsReport> {
    let ds = load_dataset(ctx)?;
    let net = load_snn(ctx)?;
    let s = &ctx.cfg.sim;
    let cfg = sim_config(ctx, s.timesteps, s.v_th);
    let eval = sim::classify(&net, &ds.test, &cfg)?;
    log::info!("SNN accuracy {:.4}, {:.1} spikes per inference", eval.accuracy(), eval.mean_spikes);
    ctx.write_csv(&ctx.reports("snn_summary.csv"), |w| sim::write_summary_csv(&eval, w))?;
    ctx.write_csv(&ctx.reports("snn_metrics.csv"), |w| {
        metrics::write_report_csv(&[("snn".to_string(), eval.report.clone())], w)
    })?;
    ctx.write_csv(&ctx.reports("snn_neuron_counts.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["neuron_id", "spikes"])?;
        for (i, n) in eval.neuron_counts.iter().enumerate() {
            c.write_record([i.to_string(), n.to_string()])?;
        }
        c.flush().map_err(|e| respira::Error::InvalidArgument(e.to_string()))?;
        Ok(())
    })?;
    let mut engine = Engine::new(&net, &cfg)?;
    for (i, w) in ds.test.iter().take(s.trace_windows).enumerate() {
        let seed = sim::window_seed(cfg.seed, i);
        let trains = sim::encode(&net, w, cfg.timesteps, seed)?;
        let trace = engine.run(&trains, seed, true)?;
        ctx.write_csv(&ctx.reports(&format!("snn_trace_{i}.csv")), |out| sim::write_trace_csv(&trace, out))?;
    }
    Ok(eval.report)
}

fn read_counts(ctx: &Ctx, n: usize) -> Result<Vec<u64>> {
    let p = ctx.reports("snn_neuron_counts.csv");
    let rows = read_table(&p, &["neuron_id", "spikes"], "simulate")?;
    if rows.len() != n {
        return Err(CliError::Schema(format!("{}: {} rows for {n} neurons", p.display(), rows.len())));
    }
    rows.iter().map(|r| num(r, 1, &p)).collect()
}

fn load_mapping(ctx: &Ctx, net: &SnnNetwork) -> Result<TileMapping> {
    let p = ctx.reports("mapping.csv");
    require(&p, "map")?;
    let counts = match ctx.cfg.map.traffic {
        TrafficSource::Simulated => Some(read_counts(ctx, net.neurons.len())?),
        TrafficSource::Structural => None,
    };
    Ok(neuromap::read_mapping_csv(&p, net, &ctx.cfg.map.grid, counts.as_deref())?)
}

pub fn map(ctx: &Ctx) -> Result<TileMapping> {
    let net = load_snn(ctx)?;
    let grid = ctx.cfg.map.grid;
    let counts = match ctx.cfg.map.traffic {
        TrafficSource::Simulated => Some(read_counts(ctx, net.neurons.len())?),
        TrafficSource::Structural => None,
    };
    let m = neuromap::map(&net, &grid, counts.as_deref())?;
    log::info!("{} clusters; placement cost {} -> {}", m.clusters.len(), m.initial_cost, m.final_cost);
    ctx.write_csv(&ctx.reports("mapping.csv"), |w| neuromap::write_mapping_csv(&m, &grid, w))?;
    ctx.write_csv(&ctx.reports("placement.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["clusters", "initial_cost", "final_cost"])?;
        c.write_record([m.clusters.len().to_string(), m.initial_cost.to_string(), m.final_cost.to_string()])?;
        c.flush().map_err(|e| respira::Error::InvalidArgument(e.to_string()))?;
        Ok(())
    })?;
    Ok(m)
}

pub const OPERATING_HEADER: [&str; 8] = ["point", "v_th_mv", "timesteps", "sample_size", "accuracy", "spikes", "hops", "energy_pj"];
pub const PAIRED_HEADER: [&str; 5] = ["v_th_mv", "timesteps", "sample_size", "cnn_accuracy", "snn_accuracy"];

/// Outcome of [`explore`].
#[derive(Debug, Clone)]
pub struct Exploration {
    pub points: Vec<ParetoPoint>,
    pub cnn_accuracy: f64,
    /// Most accurate full-sample point (ties: lower energy).
    pub best: ParetoPoint,
    /// Cheapest full-sample point within the configured gap of the CNN.
    pub efficient: Option<ParetoPoint>,
}

fn snn_energy_of(p: &ParetoPoint, grid: &neuromap::TileGrid) -> SnnEnergy {
    SnnEnergy {
        spikes: p.mean_spikes,
        hops: ((p.energy_pj - p.mean_spikes * grid.e_spike) / grid.e_hop).max(0.0),
        total_pj: p.energy_pj,
    }
}

pub fn explore(ctx: &Ctx) -> Result<Exploration> {
    let ds = load_dataset(ctx)?;
    let net = load_snn(ctx)?;
    let model = load_cnn(ctx)?;
    let mapping = load_mapping(ctx, &net)?;
    let grid = ctx.cfg.map.grid;
    let ex = &ctx.cfg.explore;
    let points = dse::sweep(&net, &ds.test, &mapping, &grid, &ex.axes, ctx.cfg.seed)?;

    let cnn_preds = trainer::predict(&model, &ds.test)?;
    let cnn_hits: Vec<bool> = cnn_preds.iter().zip(&ds.test).map(|(&p, w)| p == w.label as usize).collect();
    let cnn_acc_at = |n: usize| cnn_hits[..n].iter().filter(|h| **h).count() as f64 / n as f64;
    let cnn_accuracy = cnn_acc_at(ds.test.len());

    let full = dse::full_sample(&points);
    let best = dse::select(&full, f64::INFINITY).expect("sweep is non-empty");
    let efficient = dse::cheapest_within(&full, cnn_accuracy - ex.accuracy_gap);
    log::info!("best point {best:?}; efficient point {efficient:?}");

    ctx.write_csv(&ctx.reports("sweep.csv"), |w| dse::write_sweep_csv(&points, w))?;
    let mut sizes: Vec<usize> = points.iter().map(|p| p.sample_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut frontier = Vec::new();
    for &s in &sizes {
        let group: Vec<ParetoPoint> = points.iter().filter(|p| p.sample_size == s).copied().collect();
        frontier.extend(dse::pareto(&group));
    }
    ctx.write_csv(&ctx.reports("pareto.csv"), |w| dse::write_sweep_csv(&frontier, w))?;
    ctx.write_csv(&ctx.reports("paired_accuracy.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(PAIRED_HEADER)?;
        for p in &points {
            c.write_record([
                p.v_th.to_string(),
                p.timesteps.to_string(),
                p.sample_size.to_string(),
                cnn_acc_at(p.sample_size).to_string(),
                p.accuracy.to_string(),
            ])?;
        }
        c.flush().map_err(|e| respira::Error::InvalidArgument(e.to_string()))?;
        Ok(())
    })?;
    ctx.write_csv(&ctx.reports("operating_points.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(OPERATING_HEADER)?;
        for (name, p) in [("best", Some(best)), ("efficient", efficient)] {
            if let Some(p) = p {
                let e = snn_energy_of(&p, &grid);
                c.write_record([
                    name.to_string(),
                    p.v_th.to_string(),
                    p.timesteps.to_string(),
                    p.sample_size.to_string(),
                    p.accuracy.to_string(),
                    e.spikes.to_string(),
                    e.hops.to_string(),
                    e.total_pj.to_string(),
                ])?;
            }
        }
        c.flush().map_err(|e| respira::Error::InvalidArgument(e.to_string()))?;
        Ok(())
    })?;
    Ok(Exploration { points, cnn_accuracy, best, efficient })
}

fn parse_metrics_row(row: &[String], path: &Path) -> Result<(String, MetricsReport)> {
    let v = |i: usize| num::<f64>(row, i, path);
    let mut r = MetricsReport {
        accuracy: v(1)?,
        precision: v(2)?,
        recall: v(3)?,
        f1: v(4)?,
        auc: v(5)?,
        sensitivity: v(6)?,
        specificity: v(7)?,
        undefined: Vec::new(),
    };
    let vals = [r.accuracy, r.precision, r.recall, r.f1, r.auc, r.sensitivity, r.specificity];
    r.undefined = metrics::REPORT_HEADER[1..]
        .iter()
        .zip(vals)
        .filter(|(_, v)| v.is_nan())
        .map(|(n, _)| n.to_string())
        .collect();
    Ok((row[0].clone(), r))
}

/// What [`report`] produced and what it had to skip.
#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub cnn: MetricsReport,
    pub missing: Vec<String>,
}

/// Collate tables and figures from whatever stages have run. Only the dataset and
/// the trained CNN are mandatory.
pub fn report(ctx: &Ctx) -> Result<ReportSummary> {
    let ds = load_dataset(ctx)?;
    let model = load_cnn(ctx)?;
    let mut missing = Vec::new();
    let mut text = String::new();

    let cnn = cnn_metrics(&model, &ds.test)?;
    let mut rows = vec![("cnn".to_string(), cnn.clone())];
    let mp = ctx.reports("snn_metrics.csv");
    if mp.exists() {
        for row in read_table(&mp, &metrics::REPORT_HEADER, "simulate")? {
            rows.push(parse_metrics_row(&row, &mp)?);
        }
    } else {
        missing.push("snn metrics (simulate)".to_string());
    }
    ctx.write_csv(&ctx.reports("table2_metrics.csv"), |w| metrics::write_report_csv(&rows, w))?;
    text.push_str("Classification metrics (%), test set\n");
    text.push_str(&ReportTable(&rows).to_string());

    let qp = ctx.reports("quantization.csv");
    let mut quant_rows = Vec::new();
    if qp.exists() {
        for row in read_table(&qp, &quant::SWEEP_HEADER, "quantize")? {
            quant_rows.push(SweepRow {
                k: num(&row, 0, &qp)?,
                accuracy: num(&row, 1, &qp)?,
                energy_pj: num(&row, 2, &qp)?,
                model_size_bits: num(&row, 3, &qp)?,
            });
        }
        ctx.write_csv(&ctx.reports("table3_quantization.csv"), |w| quant::write_sweep_csv(&quant_rows, w))?;
        text.push_str("\nQuantization\n     k  accuracy%   energy_pj   size_bits\n");
        for r in &quant_rows {
            text.push_str(&format!("{:>6}  {:>9.2}  {:>10.0}  {:>10}\n", r.k, 100.0 * r.accuracy, r.energy_pj, r.model_size_bits));
        }
    } else {
        missing.push("quantization table (quantize)".to_string());
    }

    let op = ctx.reports("operating_points.csv");
    let mut energy_rows: Vec<(String, f64, Option<SnnEnergy>, f64)> = Vec::new();
    for r in &quant_rows {
        let name = if r.k == quant::MAX_BITS { "cnn_64bit".to_string() } else { format!("cnn_{}bit", r.k) };
        if r.k == quant::MAX_BITS || r.k == 2 || r.k == 8 {
            energy_rows.push((name, r.accuracy, None, r.energy_pj));
        }
    }
    if op.exists() {
        for row in read_table(&op, &OPERATING_HEADER, "explore")? {
            let e = SnnEnergy { spikes: num(&row, 5, &op)?, hops: num(&row, 6, &op)?, total_pj: num(&row, 7, &op)? };
            let name = format!("snn_{}_vth{}_t{}", row[0], row[1], row[2]);
            energy_rows.push((name, num(&row, 4, &op)?, Some(e), e.total_pj));
        }
    } else {
        missing.push("SNN operating points (explore)".to_string());
    }
    if !energy_rows.is_empty() {
        ctx.write_csv(&ctx.reports("table5_energy.csv"), |w| neuromap::write_energy_csv(&energy_rows, w))?;
        text.push_str("\nAccuracy and energy per inference\n");
        for (name, acc, e, pj) in &energy_rows {
            let detail = e.map_or(String::new(), |e| format!("  (S={:.1}, H={:.1})", e.spikes, e.hops));
            text.push_str(&format!("{name:<28} {:>7.2}%  {pj:>10.0} pJ{detail}\n", 100.0 * acc));
        }
    }

    let gp = ctx.reports("grid.csv");
    if gp.exists() {
        let g = read_table(&gp, &trainer::GRID_HEADER, "tune")?;
        let mut chart = Chart::new("Grid search", "epochs", "validation accuracy");
        let mut seen: Vec<String> = Vec::new();
        for lr in g.iter().map(|r| r[1].clone()) {
            if seen.contains(&lr) {
                continue;
            }
            let pts: Vec<(f64, f64)> = g
                .iter()
                .filter(|r| r[1] == lr)
                .map(|r| Ok((num(r, 0, &gp)?, num(r, 2, &gp)?)))
                .collect::<Result<_>>()?;
            chart = chart.with_series(Series::new(format!("lr={lr}"), pts, Style::LineMarkers));
            seen.push(lr);
        }
        let copy: Vec<[String; 3]> = g.iter().map(|r| [r[0].clone(), r[1].clone(), r[2].clone()]).collect();
        ctx.write_csv(&ctx.reports("fig5_grid.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(trainer::GRID_HEADER)?;
            for r in &copy {
                c.write_record(r)?;
            }
            c.flush().map_err(|e| respira::Error::InvalidArgument(e.to_string()))?;
            Ok(())
        })?;
        ctx.write_svg(&ctx.reports("fig5_grid.svg"), &chart)?;
    } else {
        missing.push("grid search (tune)".to_string());
    }

    let pp = ctx.reports("paired_accuracy.csv");
    if pp.exists() {
        let rows = read_table(&pp, &PAIRED_HEADER, "explore")?;
        let a: Vec<f64> = rows.iter().map(|r| num(r, 3, &pp)).collect::<Result<_>>()?;
        let b: Vec<f64> = rows.iter().map(|r| num(r, 4, &pp)).collect::<Result<_>>()?;
        let ba = metrics::bland_altman(&a, &b)?;
        ctx.write_csv(&ctx.reports("fig9_bland_altman.csv"), |w| metrics::write_bland_altman_csv(&ba, w))?;
        let (x0, x1) = ba.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
        let hline = |label: &str, y: f64| Series::new(label, vec![(x0, y), (x1, y)], Style::Line);
        let chart = Chart::new("CNN vs SNN accuracy agreement", "mean accuracy", "CNN - SNN accuracy")
            .with_series(Series::new("configurations", ba.points.clone(), Style::Markers))
            .with_series(hline("mean", ba.mean_difference))
            .with_series(hline("-1.96 sd", ba.lower_limit))
            .with_series(hline("+1.96 sd", ba.upper_limit));
        ctx.write_svg(&ctx.reports("fig9_bland_altman.svg"), &chart)?;
        text.push_str(&format!(
            "\nCNN - SNN accuracy: mean {:.2}, min {:.2}, max {:.2} points\n",
            100.0 * ba.mean_difference,
            100.0 * ba.min_difference,
            100.0 * ba.max_difference
        ));
    } else {
        missing.push("paired accuracies (explore)".to_string());
    }

    let sp = ctx.reports("sweep.csv");
    if sp.exists() {
        let rows = read_table(&sp, &dse::SWEEP_HEADER, "explore")?;
        let mut points = Vec::with_capacity(rows.len());
        for r in &rows {
            points.push(ParetoPoint {
                v_th: num(r, 0, &sp)?,
                timesteps: num(r, 1, &sp)?,
                sample_size: num(r, 2, &sp)?,
                accuracy: num(r, 3, &sp)?,
                energy_pj: num(r, 4, &sp)?,
                mean_spikes: 0.0,
            });
        }
        let mut sizes: Vec<usize> = points.iter().map(|p| p.sample_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let mut chart = Chart::new("Design space: accuracy vs energy", "energy per inference (pJ)", "accuracy").log_x(true);
        for &s in &sizes {
            let pts = points.iter().filter(|p| p.sample_size == s).map(|p| (p.energy_pj, p.accuracy)).collect();
            chart = chart.with_series(Series::new(format!("{s} samples"), pts, Style::Markers));
        }
        let full: Vec<ParetoPoint> = dse::full_sample(&points);
        let front = dse::pareto(&full);
        chart = chart.with_series(Series::new("frontier", front.iter().map(|p| (p.energy_pj, p.accuracy)).collect(), Style::Line));
        ctx.write_csv(&ctx.reports("fig11_sweep.csv"), |w| dse::write_sweep_csv(&points, w))?;
        ctx.write_svg(&ctx.reports("fig11_sweep.svg"), &chart)?;
        let mut by_vth: Vec<(f64, f64)> = Vec::new();
        for p in &full {
            match by_vth.iter_mut().find(|(v, _)| *v == p.v_th) {
                Some(e) => e.1 = e.1.max(p.accuracy),
                None => by_vth.push((p.v_th, p.accuracy)),
            }
        }
        text.push_str("\nBest SNN accuracy per threshold (largest sample)\n");
        for (v, a) in by_vth {
            text.push_str(&format!("  V_th {v:>4} mV  {:>6.2}%\n", 100.0 * a));
        }
    } else {
        missing.push("design-space sweep (explore)".to_string());
    }

    if !missing.is_empty() {
        text.push_str("\nNot available (stage not run):\n");
        for m in &missing {
            text.push_str(&format!("  {m}\n"));
        }
    }
    ctx.write_text(&ctx.reports("summary.txt"), &text)?;
    Ok(ReportSummary { cnn, missing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Featurize,
    Train,
    Tune,
    Quantize,
    Convert,
    Simulate,
    Map,
    Explore,
    Report,
}

impl Stage {
    /// Default full pipeline. Tuning retrains once per grid point and is opt-in.
    pub const PIPELINE: [Stage; 9] = [
        Stage::Synth,
        Stage::Featurize,
        Stage::Train,
        Stage::Quantize,
        Stage::Convert,
        Stage::Simulate,
        Stage::Map,
        Stage::Explore,
        Stage::Report,
    ];

    pub fn run(self, ctx: &Ctx) -> Result<()> {
        match self {
            Stage::Synth => synth(ctx),
            Stage::Featurize => featurize(ctx),
            Stage::Train => train(ctx).map(|_| ()),
            Stage::Tune => tune(ctx),
            Stage::Quantize => quantize(ctx).map(|_| ()),
            Stage::Convert => convert_stage(ctx).map(|_| ()),
            Stage::Simulate => simulate(ctx).map(|_| ()),
            Stage::Map => map(ctx).map(|_| ()),
            Stage::Explore => explore(ctx).map(|_| ()),
            Stage::Report => report(ctx).map(|_| ()),
        }
    }
}
