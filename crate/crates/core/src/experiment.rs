//! Monte Carlo driver, log replay and result files.
//!
//! Output directory layout:
//!
//! - `traj_<filter>_<rate>_run<NNN>.csv`: `timestamp,x,vx,y,vy,traj_error,true_x,true_y`
//!   (truth columns empty on replay)
//! - `log_run<NNN>.csv`: simulated measurement log, when requested
//! - `ecdf_<filter>_<rate>.csv`: pooled `error,F` points
//! - `comparison.csv`: one row per filter
//! - `manifest.txt`: TOML with the run summary under `[run]` and the fully
//!   explicit configuration under `[config]`
//!
//! `<rate>` is the effective UWB rate, e.g. `3Hz` or `0.5Hz`.
//!
//! Run `i` draws its noise from `run_seed(master, i)`, so any subset of runs
//! can be reproduced on its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point2;
use rayon::prelude::*;

use crate::config::{self, ExperimentConfig};
use crate::error::{Error, Result};
use crate::evaluation::{trajectory_error, ComparisonRow, ComparisonTable, Ecdf};
use crate::fusion::{assemble_epochs, run_track, FilterKind, TrackCounters};
use crate::log::{format_log, MeasurementRecord};
use crate::simulator::{sample_path, synthesize_stream, NoiseConfig, TruthSample};
use crate::types::StateVector;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub const SEED_SCHEME: &str =
    "run_seed(i) = splitmix64(master_seed + (i + 1) * 0x9E3779B97F4A7C15)";

pub const TRAJECTORY_HEADER: &str = "timestamp,x,vx,y,vy,traj_error,true_x,true_y";

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of Monte Carlo run `index` under master seed `master`.
pub fn run_seed(master: u64, index: u32) -> u64 {
    splitmix64(master.wrapping_add((u64::from(index) + 1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rate_label(rate: f64) -> String {
    format!("{rate}Hz")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub timestamp: f64,
    pub state: StateVector,
    pub error: f64,
    pub truth: Option<Point2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterRun {
    pub kind: FilterKind,
    pub rate: String,
    /// `None` when rebuilt from trajectory files.
    pub counters: Option<TrackCounters>,
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub index: u32,
    pub seed: u64,
    pub log: Option<Vec<MeasurementRecord>>,
    pub filters: Vec<FilterRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub command: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    /// Pooled per `(filter, rate)` in first-seen order.
    pub ecdfs: Vec<(FilterKind, String, Ecdf)>,
    pub table: ComparisonTable,
}

impl ExperimentOutput {
    pub fn ecdf(&self, kind: FilterKind) -> Option<&Ecdf> {
        self.ecdfs
            .iter()
            .find(|(k, _, _)| *k == kind)
            .map(|(_, _, e)| e)
    }

    /// Counters summed over runs, per filter; empty when rebuilt from files.
    pub fn counters(&self) -> BTreeMap<FilterKind, TrackCounters> {
        let mut out: BTreeMap<FilterKind, TrackCounters> = BTreeMap::new();
        for f in self.runs.iter().flat_map(|r| &r.filters) {
            if let Some(c) = &f.counters {
                out.entry(f.kind).or_default().merge(c);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WriteOptions {
    pub trajectories: bool,
    pub logs: bool,
}

fn track_all(
    cfg: &ExperimentConfig,
    records: &[MeasurementRecord],
    truth: Option<&[TruthSample]>,
) -> Result<Vec<FilterRun>> {
    let frames = assemble_epochs(records, &cfg.schedule)?;
    let models = cfg.models();
    let rate = rate_label(cfg.schedule.effective_uwb_rate());
    cfg.filters
        .iter()
        .map(|&kind| {
            let (track, points) = run_track(&frames, &models, &cfg.init, kind)?;
            let rows = points
                .iter()
                .map(|p| {
                    let position = p.state.position();
                    let truth = truth.and_then(|t| {
                        usize::try_from(cfg.schedule.epoch_index(p.timestamp))
                            .ok()
                            .and_then(|i| t.get(i))
                            .map(|s| s.position)
                    });
                    TrajectoryRow {
                        timestamp: p.timestamp,
                        state: p.state,
                        error: trajectory_error(&position, &cfg.path),
                        truth,
                    }
                })
                .collect();
            Ok(FilterRun {
                kind,
                rate: rate.clone(),
                counters: Some(track.counters),
                rows,
            })
        })
        .collect()
}

/// Simulates and tracks Monte Carlo run `index`.
pub fn simulate_run(cfg: &ExperimentConfig, index: u32) -> Result<RunResult> {
    let seed = run_seed(cfg.seed(), index);
    let truth = sample_path(&cfg.path, cfg.schedule.ble_rate)?;
    let noise = NoiseConfig { seed, ..cfg.noise };
    let records = synthesize_stream(&truth, &cfg.layout, &cfg.path_loss, &cfg.schedule, &noise)?;
    let filters = track_all(cfg, &records, Some(&truth))?;
    Ok(RunResult {
        index,
        seed,
        log: Some(records),
        filters,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
}

/// Runs `cfg.runs` simulations on `jobs` workers (0 picks the core count).
/// Results are merged in run order, so the output does not depend on `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    let runs = pool(jobs)?.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|i| simulate_run(cfg, i))
            .collect::<Result<Vec<_>>>()
    })?;
    summarize("simulate", cfg, runs)
}

/// Tracks a recorded log. UWB decimation comes from `cfg.schedule`.
pub fn replay(cfg: &ExperimentConfig, records: &[MeasurementRecord]) -> Result<ExperimentOutput> {
    let run = RunResult {
        index: 0,
        seed: cfg.seed(),
        log: None,
        filters: track_all(cfg, records, None)?,
    };
    summarize("replay", cfg, vec![run])
}

/// Pools every run into ECDFs and the comparison table.
pub fn summarize(
    command: &str,
    cfg: &ExperimentConfig,
    runs: Vec<RunResult>,
) -> Result<ExperimentOutput> {
    let mut groups: Vec<(FilterKind, String, Vec<f64>, f64, usize)> = Vec::new();
    for f in runs.iter().flat_map(|r| &r.filters) {
        let slot = match groups.iter().position(|g| g.0 == f.kind && g.1 == f.rate) {
            Some(i) => i,
            None => {
                groups.push((f.kind, f.rate.clone(), Vec::new(), 0.0, 0));
                groups.len() - 1
            }
        };
        let g = &mut groups[slot];
        for row in &f.rows {
            g.2.push(row.error);
            if let Some(t) = row.truth {
                g.3 += (row.state.position() - t).norm_squared();
                g.4 += 1;
            }
        }
    }
    let mut ecdfs = Vec::with_capacity(groups.len());
    let mut rows = Vec::with_capacity(groups.len());
    for (kind, rate, errors, sq, n) in groups {
        let ecdf = Ecdf::new(errors)?;
        let mut row = ComparisonRow::from_ecdf(format!("{kind}_{rate}"), &ecdf, &cfg.thresholds);
        row.position_rmse = (n > 0).then(|| (sq / n as f64).sqrt());
        rows.push(row);
        ecdfs.push((kind, rate, ecdf));
    }
    Ok(ExperimentOutput {
        command: command.to_string(),
        config: cfg.clone(),
        runs,
        ecdfs,
        table: ComparisonTable {
            thresholds: cfg.thresholds.clone(),
            rows,
        },
    })
}

fn trajectory_file(f: &FilterRun, run: u32) -> String {
    format!("traj_{}_{}_run{run:03}.csv", f.kind, f.rate)
}

pub fn format_trajectory(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(96 * (rows.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.state;
        let _ = write!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?}",
            r.timestamp,
            s.x(),
            s.vx(),
            s.y(),
            s.vy(),
            r.error
        );
        match r.truth {
            Some(t) => {
                let _ = writeln!(out, ",{:?},{:?}", t.x, t.y);
            }
            None => out.push_str(",,\n"),
        }
    }
    out
}

fn manifest(out: &ExperimentOutput) -> String {
    use toml::{Table, Value};
    let cfg = &out.config;
    let mut run = Table::new();
    run.insert("command".into(), Value::String(out.command.clone()));
    run.insert("master_seed".into(), Value::Integer(cfg.seed() as i64));
    run.insert("seed_scheme".into(), Value::String(SEED_SCHEME.into()));
    run.insert("runs".into(), Value::Integer(out.runs.len() as i64));
    run.insert(
        "effective_uwb_rate".into(),
        Value::Float(cfg.schedule.effective_uwb_rate()),
    );
    run.insert(
        "run_seeds".into(),
        Value::Array(
            out.runs
                .iter()
                .map(|r| Value::String(format!("{:#018x}", r.seed)))
                .collect(),
        ),
    );
    let mut counters = Table::new();
    for (kind, c) in out.counters() {
        let mut t = Table::new();
        for (k, v) in [
            ("updates", c.updates),
            ("skipped", c.skipped),
            ("psd_repairs", c.psd_repairs),
            ("sqrt_repairs", c.sqrt_repairs),
            ("unhealthy", c.unhealthy),
        ] {
            t.insert(k.into(), Value::Integer(v as i64));
        }
        counters.insert(kind.name().into(), Value::Table(t));
    }
    if !counters.is_empty() {
        run.insert("counters".into(), Value::Table(counters));
    }
    let mut doc = Table::new();
    doc.insert("run".into(), Value::Table(run));
    doc.insert("config".into(), cfg.to_toml_value());
    toml::to_string(&doc).expect("manifest serializes")
}

/// Reads the configuration echoed into a manifest.
pub fn manifest_config(text: &str) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
        line: 0,
        message: e.message().trim().to_string(),
    })?;
    let cfg = doc
        .remove("config")
        .ok_or_else(|| Error::Validation("manifest has no [config] table".into()))?;
    config::from_toml_value(cfg)
}

/// Writes result files into `dir`, creating it if needed.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path, opts: WriteOptions) -> Result<()> {
    fs::create_dir_all(dir)?;
    for run in &out.runs {
        if opts.trajectories {
            for f in &run.filters {
                fs::write(
                    dir.join(trajectory_file(f, run.index)),
                    format_trajectory(&f.rows),
                )?;
            }
        }
        if let (true, Some(log)) = (opts.logs, &run.log) {
            fs::write(
                dir.join(format!("log_run{:03}.csv", run.index)),
                format_log(log),
            )?;
        }
    }
    for (kind, rate, ecdf) in &out.ecdfs {
        fs::write(dir.join(format!("ecdf_{kind}_{rate}.csv")), ecdf.to_csv())?;
    }
    fs::write(dir.join("comparison.csv"), out.table.to_csv())?;
    fs::write(dir.join("manifest.txt"), manifest(out))?;
    Ok(())
}

/// `(timestamp, state, truth)` per CSV row.
type ParsedRow = (f64, StateVector, Option<Point2<f64>>);

fn parse_trajectory(text: &str, file: &str) -> Result<Vec<ParsedRow>> {
    let err = |line: usize, message: String| Error::Parse {
        line,
        message: format!("{file}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => return Err(err(1, format!("expected header `{TRAJECTORY_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(err(
                i + 1,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(i + 1, format!("`{s}` is not a finite number")))
        };
        let truth = match (fields[6].trim(), fields[7].trim()) {
            ("", "") => None,
            (x, y) => Some(Point2::new(num(x)?, num(y)?)),
        };
        rows.push((
            num(fields[0])?,
            StateVector::new(
                num(fields[1])?,
                num(fields[2])?,
                num(fields[3])?,
                num(fields[4])?,
            ),
            truth,
        ));
    }
    Ok(rows)
}

/// `traj_<filter>_<rate>_run<NNN>.csv` → `(filter, rate, run)`
fn parse_trajectory_name(name: &str) -> Option<(FilterKind, String, u32)> {
    let stem = name.strip_prefix("traj_")?.strip_suffix(".csv")?;
    let mut parts = stem.split('_');
    let kind = parts.next()?.parse().ok()?;
    let rate = parts.next()?.to_string();
    let run = parts.next()?.strip_prefix("run")?.parse().ok()?;
    parts.next().is_none().then_some((kind, rate, run))
}

/// Rebuilds results from the trajectory files in `dir`, rescoring every
/// estimate against `cfg.path`.
pub fn evaluate(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    let mut files: Vec<(u32, FilterKind, String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some((kind, rate, run)) = parse_trajectory_name(&name) {
            files.push((run, kind, rate, path));
        }
    }
    if files.is_empty() {
        return Err(Error::Validation(format!(
            "no trajectory files in {}",
            dir.display()
        )));
    }
    // Directory order is platform-dependent; fix it.
    files.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));

    let mut runs: Vec<RunResult> = Vec::new();
    for (index, kind, rate, path) in files {
        let text = fs::read_to_string(&path)?;
        let rows = parse_trajectory(&text, &path.display().to_string())?
            .into_iter()
            .map(|(timestamp, state, truth)| TrajectoryRow {
                timestamp,
                error: trajectory_error(&state.position(), &cfg.path),
                state,
                truth,
            })
            .collect();
        let run = FilterRun {
            kind,
            rate,
            counters: None,
            rows,
        };
        match runs.last_mut() {
            Some(r) if r.index == index => r.filters.push(run),
            _ => runs.push(RunResult {
                index,
                seed: run_seed(cfg.seed(), index),
                log: None,
                filters: vec![run],
            }),
        }
    }
    summarize("evaluate", cfg, runs)
}
