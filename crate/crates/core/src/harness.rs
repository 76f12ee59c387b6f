//! Experiment driver: one run is truth, measurements, forward filter,
//! fixed-lag smoother, estimation and metrics; a batch repeats that over
//! seeds and aggregates per-scan statistics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::estimation::{estimate_cardinality, extract_states, TrackEstimate};
use crate::forward::{birth_intensity, predict, resample, update, ParticleIntensity};
use crate::metrics::{per_class_ospa, ClassOspa};
use crate::scenario::{generate_measurements, generate_truth, stream_rng, GroundTruth, Scenario, ScenarioConfig, Stream};
use crate::smoother::{resample_smoothed, SmootherWindow};

/// Command-line style overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub lag: Option<usize>,
    /// Particles per target and per birth component.
    pub particles: Option<usize>,
    pub clutter_rate: Option<f64>,
    /// Infinite radius switches gating off.
    pub gate_radius: Option<f64>,
    pub no_smoother: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(lag) = self.lag {
            cfg.smoother.lag = lag;
        }
        if let Some(n) = self.particles {
            cfg.filter.particles_per_target = n;
            cfg.filter.particles_per_birth = n;
        }
        if let Some(rate) = self.clutter_rate {
            cfg.clutter.rate = rate;
        }
        if let Some(r) = self.gate_radius {
            cfg.smoother.gate_enabled = r.is_finite();
            cfg.smoother.gate_radius = r;
        }
        if self.no_smoother {
            cfg.smoother.enabled = false;
        }
    }
}

/// Loads a scenario file and applies overrides.
pub fn load_scenario(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Scenario> {
    let mut cfg = ScenarioConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.build()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanMetrics {
    /// Scan the estimates refer to.
    pub scan: usize,
    pub ospa: ClassOspa,
    pub true_counts: Vec<usize>,
    /// Rounded per-class masses.
    pub counts: Vec<usize>,
    pub masses: Vec<f64>,
    pub estimates: Vec<TrackEstimate>,
}

impl ScanMetrics {
    /// Mean over classes of `|estimated count - true count|`.
    pub fn cardinality_error(&self) -> f64 {
        let n = self.counts.len().max(1) as f64;
        self.counts.iter().zip(&self.true_counts).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / n
    }
}

/// Wall-clock seconds spent per stage in one scan.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTiming {
    pub predict: f64,
    pub update: f64,
    pub resample: f64,
    pub estimate: f64,
    pub smooth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub dt: f64,
    /// Lag, or `None` when smoothing is off.
    pub lag: Option<usize>,
    pub num_classes: usize,
    /// Filter metrics indexed by scan.
    pub filter: Vec<ScanMetrics>,
    /// Smoother metrics indexed by the scan they refer to; the last `lag` are absent.
    pub smoother: Vec<Option<ScanMetrics>>,
    pub timing: Vec<StageTiming>,
}

/// Options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Writes each scan's resampled filter particles here.
    pub dump_particles: Option<PathBuf>,
}

fn scan_metrics(scan: usize, pi: &ParticleIntensity, estimates: Vec<TrackEstimate>, truth: &GroundTruth, scenario: &Scenario) -> ScanMetrics {
    let nc = scenario.models.num_classes();
    let card = estimate_cardinality(pi);
    ScanMetrics {
        scan,
        ospa: per_class_ospa(&estimates, &truth.points(scan), nc, &scenario.ospa),
        true_counts: truth.counts(scan, nc),
        counts: card.counts,
        masses: card.masses,
        estimates,
    }
}

/// Runs the whole pipeline once with the given seed.
pub fn run_once(scenario: &Scenario, seed: u64, options: &RunOptions) -> Result<RunReport> {
    let cfg = &scenario.config;
    let models = &scenario.models;
    let truth = generate_truth(cfg);
    let scans = generate_measurements(&truth, scenario, seed)?;
    let lag = cfg.smoother.enabled.then_some(cfg.smoother.lag);
    let mut window = SmootherWindow::new(lag.unwrap_or(0), scenario.gate)?;
    if let Some(dir) = &options.dump_particles {
        fs::create_dir_all(dir)?;
    }

    let n = truth.num_scans();
    let mut filter = Vec::with_capacity(n);
    let mut smoother: Vec<Option<ScanMetrics>> = vec![None; n];
    let mut timing = Vec::with_capacity(n);
    let mut post: Option<ParticleIntensity> = None;
    for (k, scan) in scans.iter().enumerate() {
        let mut time = StageTiming::default();
        let mut rng = stream_rng(seed, Stream::Filter, k as u64);

        let t0 = Instant::now();
        let pred = match &post {
            None => birth_intensity(k, models, &scenario.filter, &mut rng),
            Some(prev) => predict(prev, models, &scenario.filter, &mut rng),
        };
        time.predict = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let updated = update(&pred, scan, &scenario.sensors, models, &scenario.filter)?;
        time.update = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let resampled = resample(&updated, &scenario.filter, &mut rng);
        time.resample = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let est = extract_states(&resampled, &scenario.estimation, &mut stream_rng(seed, Stream::Estimation, 2 * k as u64));
        filter.push(scan_metrics(k, &resampled, est.estimates, &truth, scenario));
        time.estimate = t0.elapsed().as_secs_f64();

        if let Some(dir) = &options.dump_particles {
            dump_particles(&dir.join(format!("filter_{seed}_{k:04}.csv")), &resampled)?;
        }

        if let Some(lag) = lag {
            let t0 = Instant::now();
            if lag == 0 {
                smoother[k] = Some(filter[k].clone());
            } else {
                window.push(resampled.clone(), models)?;
                if window.is_full() {
                    let s = k - lag;
                    let sm = window.smooth()?;
                    let rs = resample_smoothed(&sm, &scenario.filter, &mut stream_rng(seed, Stream::Smoother, s as u64));
                    let est = extract_states(&rs, &scenario.estimation, &mut stream_rng(seed, Stream::Estimation, 2 * s as u64 + 1));
                    smoother[s] = Some(scan_metrics(s, &rs, est.estimates, &truth, scenario));
                }
            }
            time.smooth = t0.elapsed().as_secs_f64();
        }
        timing.push(time);
        post = Some(resampled);
    }
    Ok(RunReport { seed, dt: cfg.timing.dt, lag, num_classes: models.num_classes(), filter, smoother, timing })
}

fn dump_particles(path: &Path, pi: &ParticleIntensity) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "mode", "weight", "x", "vx", "y", "vy", "omega"])?;
    for p in pi.iter() {
        let k = p.state.kin;
        let mode = match p.state.mode {
            crate::state_space::MotionMode::Cv => "cv",
            crate::state_space::MotionMode::Ct => "ct",
        };
        w.write_record([
            p.state.class.number().to_string(),
            mode.to_string(),
            p.weight.to_string(),
            k.x.to_string(),
            k.vx.to_string(),
            k.y.to_string(),
            k.vy.to_string(),
            k.omega.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric table: header plus rows of optional cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

const CSV_NOTES: &[&str] = &[
    "# time_s in seconds; OSPA columns in metres; counts in targets; masses are expected target counts",
    "# row k holds filter output for scan k and smoother output for scan smoother_scan = k - lag",
];

fn class_columns(prefix: &str, nc: usize) -> impl Iterator<Item = String> + '_ {
    (1..=nc).map(move |c| format!("{prefix}_c{c}"))
}

impl RunReport {
    pub fn num_scans(&self) -> usize {
        self.filter.len()
    }

    /// Smoother metrics produced while processing scan `k`.
    pub fn smoother_row(&self, k: usize) -> Option<&ScanMetrics> {
        let lag = self.lag?;
        k.checked_sub(lag).and_then(|s| self.smoother[s].as_ref())
    }

    pub fn table(&self) -> Table {
        let nc = self.num_classes;
        let mut header: Vec<String> = vec!["scan_index".into(), "time_s".into()];
        header.extend(class_columns("filter_ospa", nc));
        header.push("filter_ospa_all".into());
        header.push("smoother_scan".into());
        header.extend(class_columns("smoother_ospa", nc));
        header.push("smoother_ospa_all".into());
        header.extend(class_columns("true_count", nc));
        header.extend(class_columns("filter_count", nc));
        header.extend(class_columns("filter_mass", nc));
        header.extend(class_columns("smoother_true_count", nc));
        header.extend(class_columns("smoother_count", nc));
        header.extend(class_columns("smoother_mass", nc));

        let rows = (0..self.num_scans())
            .map(|k| {
                let f = &self.filter[k];
                let s = self.smoother_row(k);
                let mut row: Vec<Option<f64>> = vec![Some(k as f64), Some(k as f64 * self.dt)];
                row.extend(f.ospa.per_class.iter().map(|&v| Some(v)));
                row.push(Some(f.ospa.combined));
                row.push(s.map(|m| m.scan as f64));
                for c in 0..nc {
                    row.push(s.map(|m| m.ospa.per_class[c]));
                }
                row.push(s.map(|m| m.ospa.combined));
                row.extend(f.true_counts.iter().map(|&v| Some(v as f64)));
                row.extend(f.counts.iter().map(|&v| Some(v as f64)));
                row.extend(f.masses.iter().map(|&v| Some(v)));
                for c in 0..nc {
                    row.push(s.map(|m| m.true_counts[c] as f64));
                }
                for c in 0..nc {
                    row.push(s.map(|m| m.counts[c] as f64));
                }
                for c in 0..nc {
                    row.push(s.map(|m| m.masses[c]));
                }
                row
            })
            .collect();
        Table { header, rows }
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        write_table(&self.table(), out)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| config_err(e.to_string()))
    }

    pub fn write_timing_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scan_index", "predict_s", "update_s", "resample_s", "estimate_s", "smooth_s"])?;
        for (k, t) in self.timing.iter().enumerate() {
            w.write_record([k.to_string(), t.predict.to_string(), t.update.to_string(), t.resample.to_string(), t.estimate.to_string(), t.smooth.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn write_table(table: &Table, mut out: impl Write) -> Result<()> {
    for line in CSV_NOTES {
        writeln!(out, "{line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-scan mean and standard deviation of every column across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub header: Vec<String>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub std: Vec<Vec<Option<f64>>>,
}

impl Aggregate {
    pub fn from_tables(tables: &[Table]) -> Result<Self> {
        let first = tables.first().ok_or_else(|| config_err("no runs to aggregate"))?;
        let (nr, ncol) = (first.rows.len(), first.header.len());
        let mut mean = vec![vec![None; ncol]; nr];
        let mut std = vec![vec![None; ncol]; nr];
        for r in 0..nr {
            for c in 0..ncol {
                let vals: Vec<f64> = tables.iter().filter_map(|t| t.rows[r][c]).collect();
                if vals.is_empty() {
                    continue;
                }
                let n = vals.len() as f64;
                let m = vals.iter().sum::<f64>() / n;
                let var = if vals.len() > 1 { vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                mean[r][c] = Some(m);
                std[r][c] = Some(var.sqrt());
            }
        }
        Ok(Self { header: first.header.clone(), mean, std })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut header = Vec::with_capacity(2 * self.header.len());
        for h in &self.header {
            header.push(format!("{h}_mean"));
            header.push(format!("{h}_std"));
        }
        let rows = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m.iter().zip(s).flat_map(|(a, b)| [*a, *b]).collect())
            .collect();
        write_table(&Table { header, rows }, out)
    }
}

/// Headline numbers from a batch, all aligned by the scan the estimates refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub window: [usize; 2],
    pub filter_ospa: f64,
    pub smoother_ospa: f64,
    /// `1 - smoother / filter` of the window means.
    pub reduction: f64,
    /// Largest per-scan reduction of run-averaged OSPA inside the window, and its scan.
    pub max_scan_reduction: f64,
    pub max_scan: usize,
    /// Reduction over every scan that has a smoothed estimate.
    pub overall_reduction: f64,
    pub filter_class_ospa: Vec<f64>,
    pub smoother_class_ospa: Vec<f64>,
    pub filter_cardinality_error: f64,
    pub smoother_cardinality_error: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl Summary {
    /// Returns `None` when smoothing was off or no scan in the window has a smoothed estimate.
    pub fn from_runs(runs: &[RunReport], window: [usize; 2]) -> Option<Self> {
        let first = runs.first()?;
        let nc = first.num_classes;
        let last = first.num_scans().saturating_sub(1);
        let scans_with = |lo: usize, hi: usize| -> Vec<usize> {
            (lo..=hi.min(last)).filter(|&s| runs.iter().all(|r| r.smoother[s].is_some())).collect()
        };
        let in_window = scans_with(window[0], window[1]);
        if in_window.is_empty() {
            return None;
        }
        let per_scan = |s: usize, pick: &dyn Fn(&ScanMetrics) -> f64| -> (f64, f64) {
            let f = mean(&runs.iter().map(|r| pick(&r.filter[s])).collect::<Vec<_>>());
            let m = mean(&runs.iter().map(|r| pick(r.smoother[s].as_ref().unwrap())).collect::<Vec<_>>());
            (f, m)
        };
        let avg = |scans: &[usize], pick: &dyn Fn(&ScanMetrics) -> f64| -> (f64, f64) {
            let pairs: Vec<(f64, f64)> = scans.iter().map(|&s| per_scan(s, pick)).collect();
            (mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()), mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()))
        };
        let combined = |m: &ScanMetrics| m.ospa.combined;
        let (filter_ospa, smoother_ospa) = avg(&in_window, &combined);
        let (mut max_scan_reduction, mut max_scan) = (f64::NEG_INFINITY, in_window[0]);
        for &s in &in_window {
            let (f, m) = per_scan(s, &combined);
            let r = if f > 0.0 { 1.0 - m / f } else { 0.0 };
            if r > max_scan_reduction {
                max_scan_reduction = r;
                max_scan = s;
            }
        }
        let all = scans_with(0, last);
        let (fa, sa) = avg(&all, &combined);
        let mut filter_class_ospa = Vec::with_capacity(nc);
        let mut smoother_class_ospa = Vec::with_capacity(nc);
        for c in 0..nc {
            let (f, m) = avg(&in_window, &|x: &ScanMetrics| x.ospa.per_class[c]);
            filter_class_ospa.push(f);
            smoother_class_ospa.push(m);
        }
        let (filter_cardinality_error, smoother_cardinality_error) = avg(&in_window, &ScanMetrics::cardinality_error);
        Some(Self {
            runs: runs.len(),
            window,
            filter_ospa,
            smoother_ospa,
            reduction: 1.0 - smoother_ospa / filter_ospa,
            max_scan_reduction,
            max_scan,
            overall_reduction: 1.0 - sa / fa,
            filter_class_ospa,
            smoother_class_ospa,
            filter_cardinality_error,
            smoother_cardinality_error,
        })
    }

    pub fn render(&self) -> String {
        let classes = |v: &[f64]| v.iter().enumerate().map(|(c, x)| format!("class {}: {x:.2}", c + 1)).collect::<Vec<_>>().join(", ");
        format!(
            "runs: {}\n\
             window: scans {}..={}\n\
             mean combined OSPA (m): filter {:.2}, smoother {:.2}\n\
             OSPA reduction in window: {:.2} %\n\
             largest per-scan reduction: {:.2} % at scan {}\n\
             OSPA reduction over all smoothed scans: {:.2} %\n\
             filter per-class OSPA (m): {}\n\
             smoother per-class OSPA (m): {}\n\
             mean per-class cardinality error: filter {:.4}, smoother {:.4}\n",
            self.runs,
            self.window[0],
            self.window[1],
            self.filter_ospa,
            self.smoother_ospa,
            100.0 * self.reduction,
            100.0 * self.max_scan_reduction,
            self.max_scan,
            100.0 * self.overall_reduction,
            classes(&self.filter_class_ospa),
            classes(&self.smoother_class_ospa),
            self.filter_cardinality_error,
            self.smoother_cardinality_error,
        )
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub runs: Vec<RunReport>,
    pub aggregate: Aggregate,
    pub summary: Option<Summary>,
}

/// Independent runs with seeds `base_seed + i`, executed in parallel and
/// collected in seed order.
pub fn run_monte_carlo(scenario: &Scenario, runs: usize, base_seed: u64) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(config_err("at least one run is required"));
    }
    let reports = (0..runs as u64)
        .into_par_iter()
        .map(|i| run_once(scenario, base_seed + i, &RunOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    let tables: Vec<Table> = reports.iter().map(RunReport::table).collect();
    let aggregate = Aggregate::from_tables(&tables)?;
    let summary = Summary::from_runs(&reports, scenario.config.evaluation.window);
    Ok(MonteCarloReport { runs: reports, aggregate, summary })
}

/// Writes the effective config, per-run CSVs, aggregate CSV and summary into `dir`.
pub fn write_outputs(dir: &Path, scenario: &Scenario, report: &MonteCarloReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("effective_config.toml"), scenario.config.to_toml())?;
    for run in &report.runs {
        run.write_csv(BufWriter::new(File::create(dir.join(format!("run_{}.csv", run.seed)))?))?;
        run.write_timing_csv(BufWriter::new(File::create(dir.join(format!("timing_{}.csv", run.seed)))?))?;
    }
    report.aggregate.write_csv(BufWriter::new(File::create(dir.join("aggregate.csv"))?))?;
    let summary = match &report.summary {
        Some(s) => s.render(),
        None => format!("runs: {}\nsmoother output unavailable\n", report.runs.len()),
    };
    fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}
