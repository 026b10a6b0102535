use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ExperimentConfig, SweepParameter, TopologyKind};
use crate::node::Mode;
use crate::sim::{self, compute_metrics, MetricsLedger, RunOutput, ScenarioError};

/// One (sweep value, repetition, mode) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub point: usize,
    pub x: Option<f64>,
    pub rep: u32,
    pub seed: u64,
    pub mode: Mode,
}

impl Cell {
    pub fn stem(&self) -> String {
        format!("p{:02}_r{:02}_{}", self.point, self.rep, self.mode.label())
    }
}

/// Cells in point, repetition, mode order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (point, x) in cfg.sweep.points().into_iter().enumerate() {
        for rep in 0..cfg.sweep.repetitions {
            for &mode in &cfg.sweep.modes {
                out.push(Cell {
                    index: out.len(),
                    point,
                    x,
                    rep,
                    seed: cfg.sweep.seed(rep),
                    mode,
                });
            }
        }
    }
    out
}

pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<RunOutput, ScenarioError> {
    sim::run(&cfg.scenario(cell.x, cell.seed, cell.mode)?)
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Per-cell time series CSV files.
    pub write_series: bool,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub ledger: MetricsLedger,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub results: Vec<CellResult>,
    pub summary: Summary,
}

/// Runs every cell on a worker pool and writes the artifacts into `out`.
/// Cells not yet started when `cancel` is raised are skipped; whatever
/// finished is still summarized.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    cancel: &AtomicBool,
    opts: &RunOptions,
) -> Result<ExperimentReport, ExperimentError> {
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(io_err(&cells_dir))?;
    write_text(&out.join("config.json"), &cfg.to_json())?;
    write_text(&out.join("seeds.json"), &seed_manifest(cfg))?;

    let all = cells(cfg);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let first_error: Mutex<Option<ExperimentError>> = Mutex::new(None);
    let mut results: Vec<CellResult> = pool.install(|| {
        all.par_iter()
            .filter_map(|cell| {
                if cancel.load(Ordering::SeqCst) || first_error.lock().unwrap().is_some() {
                    return None;
                }
                match run_and_write(cfg, cell, &cells_dir, opts) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        first_error.lock().unwrap().get_or_insert(e);
                        None
                    }
                }
            })
            .collect()
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    results.sort_by_key(|r| r.cell.index);
    let summary = summarize(cfg, &results, all.len());
    write_cells_csv(&out.join("cells.csv"), &results)?;
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    log::info!("{} of {} cells finished", results.len(), all.len());
    Ok(ExperimentReport { results, summary })
}

fn run_and_write(
    cfg: &ExperimentConfig,
    cell: &Cell,
    dir: &Path,
    opts: &RunOptions,
) -> Result<CellResult, ExperimentError> {
    let run = run_cell(cfg, cell)?;
    let stem = cell.stem();
    if opts.write_series {
        let path = dir.join(format!("{stem}.csv"));
        let f = File::create(&path).map_err(io_err(&path))?;
        run.ledger.write_series_csv(BufWriter::new(f))?;
    }
    if !run.trace.is_empty() {
        let path = dir.join(format!("{stem}.trace.jsonl"));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for line in &run.trace {
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    log::debug!("cell {} ({stem}) done", cell.index);
    Ok(CellResult {
        cell: *cell,
        ledger: run.ledger,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, format!("{text}\n")).map_err(io_err(path))
}

fn seed_manifest(cfg: &ExperimentConfig) -> String {
    let seeds: Vec<_> = cfg
        .sweep
        .seeds()
        .into_iter()
        .enumerate()
        .map(|(rep, seed)| serde_json::json!({ "repetition": rep, "seed": seed }))
        .collect();
    let doc = serde_json::json!({ "base_seed": cfg.sweep.base_seed, "seeds": seeds });
    serde_json::to_string_pretty(&doc).expect("manifest serializes")
}

fn write_cells_csv(path: &Path, results: &[CellResult]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "mode",
        "point",
        "x",
        "repetition",
        "generated",
        "delivered",
        "transmissions",
        "coded_transmissions",
        "dropped_retry",
        "dropped_overflow",
        "residual",
        "avg_queue",
        "loss_rate",
        "conserved",
    ])?;
    for r in results {
        let l = &r.ledger;
        w.write_record([
            r.cell.seed.to_string(),
            r.cell.mode.label().to_string(),
            r.cell.point.to_string(),
            r.cell.x.map(|x| x.to_string()).unwrap_or_default(),
            r.cell.rep.to_string(),
            l.generated.to_string(),
            l.delivered.to_string(),
            l.transmissions.to_string(),
            l.coded_transmissions.to_string(),
            l.dropped_retry.to_string(),
            l.dropped_overflow.to_string(),
            l.residual.to_string(),
            format!("{:.6}", l.avg_queue()),
            format!("{:.6}", l.loss_rate()),
            l.conserved().to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub x: Option<f64>,
    pub mode: Mode,
    pub runs: usize,
    /// Metrics with no defined sample are absent.
    pub metrics: BTreeMap<String, Stat>,
}

impl SummaryPoint {
    pub fn metric(&self, name: &str) -> Option<Stat> {
        self.metrics.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub parameter: Option<SweepParameter>,
    pub topology: TopologyKind,
    pub complete: bool,
    pub cells_total: usize,
    pub cells_done: usize,
    pub seeds: Vec<u64>,
    pub points: Vec<SummaryPoint>,
}

impl Summary {
    pub fn load(path: &Path) -> Result<Summary, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }

    pub fn point(&self, x: Option<f64>, mode: Mode) -> Option<&SummaryPoint> {
        self.points.iter().find(|p| p.x == x && p.mode == mode)
    }
}

/// Per-point aggregates. Gains pair each cell with the BASELINE cell of the
/// same point and repetition.
pub fn summarize(cfg: &ExperimentConfig, results: &[CellResult], cells_total: usize) -> Summary {
    let baseline: BTreeMap<(usize, u32), &MetricsLedger> = results
        .iter()
        .filter(|r| r.cell.mode == Mode::Baseline)
        .map(|r| ((r.cell.point, r.cell.rep), &r.ledger))
        .collect();
    let mut points = Vec::new();
    for (point, x) in cfg.sweep.points().into_iter().enumerate() {
        for &mode in &cfg.sweep.modes {
            let runs: Vec<&CellResult> = results
                .iter()
                .filter(|r| r.cell.point == point && r.cell.mode == mode)
                .collect();
            if runs.is_empty() {
                continue;
            }
            let mut samples: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in &runs {
                let l = &r.ledger;
                let mut put = |k, v: Option<f64>| {
                    let e = samples.entry(k).or_default();
                    if let Some(v) = v {
                        e.push(v);
                    }
                };
                put("generated", Some(l.generated as f64));
                put("delivered", Some(l.delivered as f64));
                put("transmissions", Some(l.transmissions as f64));
                put("avg_queue", Some(l.avg_queue()));
                put("loss_rate", Some(l.loss_rate()));
                put("tx_per_delivered", l.tx_per_delivered());
                let gains = baseline.get(&(point, r.cell.rep)).map(|b| compute_metrics(l, b));
                put("throughput_gain", gains.and_then(|g| g.throughput_gain));
                put("coding_gain", gains.and_then(|g| g.coding_gain));
            }
            points.push(SummaryPoint {
                x,
                mode,
                runs: runs.len(),
                metrics: samples
                    .into_iter()
                    .filter_map(|(k, v)| Stat::of(&v).map(|s| (k.to_string(), s)))
                    .collect(),
            });
        }
    }
    Summary {
        parameter: cfg.sweep.parameter,
        topology: cfg.topology.kind,
        complete: results.len() == cells_total,
        cells_total,
        cells_done: results.len(),
        seeds: cfg.sweep.seeds(),
        points,
    }
}
