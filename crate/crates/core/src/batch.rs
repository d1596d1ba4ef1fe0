//! Single runs, the MPR × PER batch and CSV emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{GridCell, ScenarioConfig};
use crate::error::SimError;
use crate::metrics::{edge_rci, EdgeRecord, RunSummary};
use crate::sim::engine::{mix64, World, WorldStats};
use crate::sim::trajectory::CsvTrajectory;

pub const EDGES_HEADER: &str = "edge_id,t0,t1,traversals,travel_rate_min_per_km,rci";
pub const SUMMARY_HEADER: &str = "mpr,per,travel_rate,rci,collisions,vehicles_completed";
pub const BATCH_HEADER: &str = "mpr,per,replication,seed,status,travel_rate,rci,collisions,vehicles_completed";
pub const CELL_HEADER: &str =
    "mpr,per,runs,failed,travel_rate_mean,travel_rate_sd,rci_mean,rci_sd,collisions_mean,vehicles_completed_mean";

/// Everything a finished run produced, before it is written out.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub summary: RunSummary,
    pub stats: WorldStats,
    /// Interval records followed by the whole-run record of every edge.
    pub edges: Vec<EdgeRecord>,
    pub edge_ids: Vec<String>,
    pub edge_rci: Vec<Option<f64>>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

/// Percentages are printed without the float noise of `fraction * 100`.
fn fmt_pct(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    r.to_string()
}

fn fmt_cell_per(cell: GridCell) -> String {
    if cell.mpr > 0.0 {
        fmt_pct(cell.per * 100.0)
    } else {
        "NA".into()
    }
}

impl RunOutputs {
    pub fn edges_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(EDGES_HEADER);
        out.push('\n');
        for (r, rci) in self.edges.iter().zip(&self.edge_rci) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.edge_ids[r.edge],
                r.t0,
                r.t1,
                r.traversals,
                fmt_opt(r.travel_rate()),
                fmt_opt(*rci)
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let s = &self.summary;
        format!(
            "{SUMMARY_HEADER}\n{},{},{},{},{},{}\n",
            fmt_pct(s.mpr),
            s.per.map(fmt_pct).unwrap_or_else(|| "NA".into()),
            s.travel_rate,
            s.rci,
            s.collisions,
            s.vehicles_completed
        )
    }
}

fn progress_line(label: &str, world: &World) {
    let st = world.stats();
    let queued: Vec<String> = world.entry_queues().iter().map(|(n, q)| format!("{n}:{q}")).collect();
    eprintln!(
        "{label}t={:.0}s vehicles={} queued={} completed={} collisions={}",
        world.time(),
        world.vehicles().len(),
        queued.join("/"),
        st.completed,
        st.collisions
    );
}

/// Runs a world to completion, reporting progress every simulated minute.
pub fn simulate(world: &mut World, progress: Option<&str>) -> Result<RunOutputs, SimError> {
    let every = (60.0 / world.config().dt).round().max(1.0) as u64;
    while !world.is_finished() {
        world.step()?;
        if let Some(label) = progress {
            if world.step_index().is_multiple_of(every) {
                progress_line(label, world);
            }
        }
    }
    world.finish()?;
    let summary = world.summary()?;
    let corridor = world.corridor();
    let mut edges: Vec<EdgeRecord> = world.metrics().records().cloned().collect();
    edges.extend(world.metrics().totals());
    let edge_rci = edges.iter().map(|r| edge_rci(r, corridor)).collect();
    Ok(RunOutputs {
        summary,
        stats: world.stats(),
        edges,
        edge_ids: corridor.edges().iter().map(|e| e.id.clone()).collect(),
        edge_rci,
    })
}

fn write(path: &Path, text: &str) -> Result<(), SimError> {
    fs::write(path, text).map_err(|e| SimError::io(path, e))
}

/// Runs one scenario and writes `edges.csv`, `summary.csv` and, if
/// enabled, `trajectories.csv` into the configured output directory.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutputs, SimError> {
    cfg.validate()?;
    let dir = &cfg.output.out_dir;
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let mut world = World::new(cfg.clone())?;
    if cfg.output.trajectories {
        let path = dir.join("trajectories.csv");
        let sink = CsvTrajectory::create(&path).map_err(|e| SimError::io(&path, e))?;
        world.set_trajectory_sink(Box::new(sink));
    }
    let out = simulate(&mut world, cfg.output.progress.then_some(""))?;
    write(&dir.join("edges.csv"), &out.edges_csv())?;
    write(&dir.join("summary.csv"), &out.summary_csv())?;
    Ok(out)
}

/// Seed of one batch run, a hash of the base seed, the cell and the
/// replication index. Masked to 63 bits so it stays representable in TOML.
pub fn derive_seed(base: u64, cell: GridCell, replication: u32) -> u64 {
    let mut h = mix64(base);
    h = mix64(h ^ cell.mpr.to_bits());
    h = mix64(h ^ cell.per.to_bits());
    h = mix64(h ^ u64::from(replication));
    h & (i64::MAX as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRun {
    pub cell: GridCell,
    pub replication: u32,
    pub seed: u64,
    pub result: Result<RunOutputs, String>,
    /// Wall-clock time of the run; not part of any output file.
    pub elapsed: std::time::Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub cell: GridCell,
    pub runs: usize,
    pub failed: usize,
    pub travel_rate: (f64, Option<f64>),
    pub rci: (f64, Option<f64>),
    pub collisions_mean: f64,
    pub completed_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Sorted by (mpr, per, replication).
    pub runs: Vec<BatchRun>,
    pub cells: Vec<CellStats>,
}

/// Mean and sample standard deviation (None for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sd)
}

impl BatchResult {
    pub fn failures(&self) -> impl Iterator<Item = &BatchRun> {
        self.runs.iter().filter(|r| r.result.is_err())
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(BATCH_HEADER);
        out.push('\n');
        for r in &self.runs {
            let head = format!("{},{},{},{}", fmt_pct(r.cell.mpr * 100.0), fmt_cell_per(r.cell), r.replication, r.seed);
            match &r.result {
                Ok(o) => {
                    let s = &o.summary;
                    let _ = writeln!(out, "{head},ok,{},{},{},{}", s.travel_rate, s.rci, s.collisions, s.vehicles_completed);
                }
                Err(e) => {
                    let msg: String = e.chars().map(|c| if matches!(c, ',' | '\n' | '\r') { ' ' } else { c }).collect();
                    let _ = writeln!(out, "{head},error: {msg},NA,NA,NA,NA");
                }
            }
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from(CELL_HEADER);
        out.push('\n');
        for c in &self.cells {
            let mean = |x: f64| if c.failed < c.runs { x.to_string() } else { "NA".into() };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_pct(c.cell.mpr * 100.0),
                fmt_cell_per(c.cell),
                c.runs,
                c.failed,
                mean(c.travel_rate.0),
                fmt_opt(c.travel_rate.1),
                mean(c.rci.0),
                fmt_opt(c.rci.1),
                mean(c.collisions_mean),
                mean(c.completed_mean)
            );
        }
        out
    }
}

fn cell_stats(cell: GridCell, runs: &[&BatchRun]) -> CellStats {
    let ok: Vec<&RunSummary> = runs.iter().filter_map(|r| r.result.as_ref().ok()).map(|o| &o.summary).collect();
    let pick = |f: fn(&RunSummary) -> f64| -> Vec<f64> { ok.iter().map(|s| f(s)).collect() };
    let (tr, rci, col, done) = (
        pick(|s| s.travel_rate),
        pick(|s| s.rci),
        pick(|s| s.collisions as f64),
        pick(|s| s.vehicles_completed as f64),
    );
    CellStats {
        cell,
        runs: runs.len(),
        failed: runs.len() - ok.len(),
        travel_rate: mean_sd(&tr),
        rci: mean_sd(&rci),
        collisions_mean: mean_sd(&col).0,
        completed_mean: mean_sd(&done).0,
    }
}

/// Runs every grid cell and replication of `base.batch` on a pool of at
/// most `parallelism` threads. Failed runs are reported in the result and
/// do not stop the others.
pub fn run_batch(base: &ScenarioConfig, parallelism: usize) -> Result<BatchResult, SimError> {
    use rayon::prelude::*;
    base.validate()?;
    let mut jobs = Vec::new();
    for &cell in &base.batch.grid {
        for rep in 0..base.batch.replications {
            jobs.push((cell, rep, derive_seed(base.seed, cell, rep)));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SimError::Config(format!("batch.parallelism: {e}")))?;
    let progress = base.output.progress;
    let mut runs: Vec<BatchRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, replication, seed)| {
                let mut cfg = base.with_cell(cell, seed);
                cfg.output.trajectories = false;
                let label = format!("[mpr={} per={} rep={replication}] ", cell.mpr, cell.per);
                let started = std::time::Instant::now();
                let result = World::new(cfg)
                    .and_then(|mut w| simulate(&mut w, progress.then_some(label.as_str())))
                    .map_err(|e| e.to_string());
                BatchRun { cell, replication, seed, result, elapsed: started.elapsed() }
            })
            .collect()
    });
    runs.sort_by(|a, b| {
        a.cell.mpr.total_cmp(&b.cell.mpr).then(a.cell.per.total_cmp(&b.cell.per)).then(a.replication.cmp(&b.replication))
    });
    let mut cells = Vec::new();
    let mut i = 0;
    while i < runs.len() {
        let cell = runs[i].cell;
        let group: Vec<&BatchRun> = runs[i..].iter().take_while(|r| r.cell == cell).collect();
        i += group.len();
        cells.push(cell_stats(cell, &group));
    }
    Ok(BatchResult { runs, cells })
}

/// Writes `summary.csv`, `summary_by_cell.csv` and one `edges.csv` per
/// successful run under `runs/`.
pub fn write_batch(result: &BatchResult, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    write(&dir.join("summary.csv"), &result.summary_csv())?;
    write(&dir.join("summary_by_cell.csv"), &result.cells_csv())?;
    for r in &result.runs {
        if let Ok(o) = &r.result {
            let sub = dir.join("runs").join(format!(
                "mpr{}_per{}_rep{}",
                fmt_pct(r.cell.mpr * 100.0),
                fmt_pct(r.cell.per * 100.0),
                r.replication
            ));
            fs::create_dir_all(&sub).map_err(|e| SimError::io(&sub, e))?;
            write(&sub.join("edges.csv"), &o.edges_csv())?;
        }
    }
    Ok(())
}
