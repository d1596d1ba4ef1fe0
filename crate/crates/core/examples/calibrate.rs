//! Demand sweep for the default corridor.
//!
//! `cargo run --release --example calibrate -- [config.toml] [mainline veh/h] [ramp veh/h] [reps]`
//! prints mean RCI and travel rate for every cell of the configured grid.

use cavsim::batch::run_batch;
use cavsim::sim::network::RampKind;
use cavsim::ScenarioConfig;

fn main() {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ScenarioConfig::default();
    if args.first().is_some_and(|a| a.ends_with(".toml")) {
        cfg = ScenarioConfig::load(args.remove(0).as_ref()).expect("config");
    }
    let get = |i: usize| args.get(i).and_then(|s| s.parse::<f64>().ok());
    if let Some(q) = get(0) {
        cfg.demand.inflow = q;
    }
    if let Some(q) = get(1) {
        for r in cfg.network.ramps.iter_mut().filter(|r| r.kind == RampKind::OnRamp) {
            r.inflow = q;
        }
    }
    if let Some(r) = get(2) {
        cfg.batch.replications = r as u32;
    }
    cfg.output.progress = false;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = run_batch(&cfg, threads).expect("valid config");
    for c in &result.cells {
        println!(
            "mpr={:.1} per={:.1} runs={} failed={} rci={:.4}±{:.4} tr={:.4} collisions={:.1} completed={:.0}",
            c.cell.mpr,
            c.cell.per,
            c.runs,
            c.failed,
            c.rci.0,
            c.rci.1.unwrap_or(0.0),
            c.travel_rate.0,
            c.collisions_mean,
            c.completed_mean
        );
    }
    for f in result.failures() {
        println!("failed: {:?} rep {}: {:?}", f.cell, f.replication, f.result.as_ref().err());
    }
}
