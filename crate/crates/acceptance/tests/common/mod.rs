//! Independent oracles shared by the acceptance checks.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use cavsim::sim::network::RoadNetwork;
use cavsim::sim::trajectory::{TrajectoryRow, TrajectorySink};

/// Writes one verdict line straight to the process stderr, bypassing the
/// test harness capture, then fails the test if the check did not hold.
pub fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = io::stderr().lock();
    let _ = writeln!(err, "{tag} [{id}] {name}: {detail}");
    let _ = err.flush();
    assert!(pass, "{name}: {detail}");
}

/// Two-sided `1 - alpha` acceptance interval of Binomial(n, p) from the
/// exact pmf: the smallest `lo` with `P(X < lo) <= alpha/2` removed from the
/// lower tail and likewise for the upper tail.
pub fn binomial_interval(n: u64, p: f64, alpha: f64) -> (u64, u64) {
    let nf = n as f64;
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    // log pmf by the ratio recursion, starting from k = 0.
    let mut logs = Vec::with_capacity(n as usize + 1);
    let mut l = nf * lq;
    logs.push(l);
    for k in 0..n {
        let kf = k as f64;
        l += ((nf - kf) / (kf + 1.0)).ln() + lp - lq;
        logs.push(l);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pmf: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = pmf.iter().sum();
    let half = alpha / 2.0 * total;
    let mut lo = 0;
    let mut acc = 0.0;
    while acc + pmf[lo] <= half {
        acc += pmf[lo];
        lo += 1;
    }
    let mut hi = n as usize;
    acc = 0.0;
    while acc + pmf[hi] <= half {
        acc += pmf[hi];
        hi -= 1;
    }
    (lo as u64, hi as u64)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Replay {
    pub time: f64,
    pub distance: f64,
    pub completed: u64,
    pub rows: u64,
}

impl Replay {
    /// Travel rate [min/km] of the replayed log.
    pub fn travel_rate(&self) -> f64 {
        (self.time / 60.0) / (self.distance / 1000.0)
    }
}

/// Trajectory sink that rebuilds the network totals from the row stream:
/// each pair of consecutive rows of a vehicle is one movement piece that
/// started at the earlier row's time.
pub struct ReplaySink {
    offsets: HashMap<String, f64>,
    exit_x: f64,
    warmup: f64,
    last: HashMap<u64, (f64, f64)>,
    pub out: Replay,
}

impl ReplaySink {
    pub fn new(network: &RoadNetwork, warmup: f64) -> Arc<Mutex<Self>> {
        let mut offsets = HashMap::new();
        let mut x = 0.0;
        for e in &network.edges {
            offsets.insert(e.id.clone(), x);
            x += e.length;
        }
        Arc::new(Mutex::new(Self { offsets, exit_x: x, warmup, last: HashMap::new(), out: Replay::default() }))
    }
}

impl TrajectorySink for ReplaySink {
    fn row(&mut self, row: &TrajectoryRow) -> io::Result<()> {
        self.out.rows += 1;
        let x = self.offsets[&row.edge] + row.s;
        if let Some((t0, x0)) = self.last.insert(row.id, (row.t, x)) {
            if t0 >= self.warmup - 1e-9 {
                self.out.time += row.t - t0;
                self.out.distance += x - x0;
            }
            if x >= self.exit_x - 1e-9 {
                self.last.remove(&row.id);
                if row.t >= self.warmup - 1e-9 {
                    self.out.completed += 1;
                }
            }
        }
        Ok(())
    }
}

#[test]
fn binomial_interval_small_case() {
    // Binomial(10, 0.5): P(X <= 1) = 11/1024 > 0.005 and P(X = 0) < 0.005.
    assert_eq!(binomial_interval(10, 0.5, 0.01), (1, 9));
}
