//! Edge-based traversal accounting and congestion indicators.
//!
//! Travel rate is time over distance in min/km. The relative congestion
//! index is the relative excess of travel rate over free flow,
//! `(tr − tr_ff) / tr_ff`, so 0 is free flow and values above 2 mean very
//! heavy congestion. Network figures aggregate vehicle-hours over
//! vehicle-kilometres (VHT/VKT).

use crate::error::MetricsError;
use crate::sim::network::{free_flow_rate, Corridor};

/// Accumulated traversal time and distance on one edge within `[t0, t1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub edge: usize,
    pub t0: f64,
    pub t1: f64,
    /// Full-edge completions.
    pub traversals: u64,
    pub total_time: f64,
    pub total_distance: f64,
}

impl EdgeRecord {
    pub fn new(edge: usize, t0: f64, t1: f64) -> Self {
        Self { edge, t0, t1, traversals: 0, total_time: 0.0, total_distance: 0.0 }
    }

    /// Adds a (possibly partial) traversal piece. `completed` marks the
    /// piece that finishes a full start-to-end crossing of the edge.
    pub fn record_traversal(&mut self, time_in_edge: f64, distance_in_edge: f64, completed: bool) -> Result<(), MetricsError> {
        if !(time_in_edge >= 0.0) {
            return Err(MetricsError::Negative("time"));
        }
        if !(distance_in_edge >= 0.0) {
            return Err(MetricsError::Negative("distance"));
        }
        self.total_time += time_in_edge;
        self.total_distance += distance_in_edge;
        if completed {
            self.traversals += 1;
        }
        Ok(())
    }

    /// Sums two records of the same edge; the interval becomes their hull.
    pub fn merge(&self, other: &EdgeRecord) -> EdgeRecord {
        debug_assert_eq!(self.edge, other.edge);
        EdgeRecord {
            edge: self.edge,
            t0: self.t0.min(other.t0),
            t1: self.t1.max(other.t1),
            traversals: self.traversals + other.traversals,
            total_time: self.total_time + other.total_time,
            total_distance: self.total_distance + other.total_distance,
        }
    }

    pub fn travel_rate(&self) -> Option<f64> {
        travel_rate(self.total_time, self.total_distance)
    }
}

/// `(time/60) / (distance/1000)`; absent for zero distance.
pub fn travel_rate(total_time: f64, total_distance: f64) -> Option<f64> {
    if total_distance > 0.0 {
        Some((total_time / 60.0) / (total_distance / 1000.0))
    } else {
        None
    }
}

pub fn rci(tr: f64, tr_ff: f64) -> f64 {
    (tr - tr_ff) / tr_ff
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Market penetration rate [%].
    pub mpr: f64,
    /// Packet error rate [%]; `None` when there are no CAVs.
    pub per: Option<f64>,
    pub travel_rate: f64,
    pub rci: f64,
    pub collisions: u64,
    pub vehicles_completed: u64,
}

/// Per-edge, per-interval accumulators owned by the engine during a run.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    warmup: f64,
    interval: f64,
    edges: usize,
    bins: Vec<Vec<EdgeRecord>>,
}

impl MetricsAccumulator {
    pub fn new(edges: usize, warmup: f64, interval: f64) -> Self {
        Self { warmup, interval, edges, bins: Vec::new() }
    }

    pub fn warmup(&self) -> f64 {
        self.warmup
    }

    fn bin_mut(&mut self, t: f64) -> &mut Vec<EdgeRecord> {
        let idx = ((t - self.warmup) / self.interval + 1e-9).floor().max(0.0) as usize;
        while self.bins.len() <= idx {
            let k = self.bins.len() as f64;
            let t0 = self.warmup + k * self.interval;
            let t1 = t0 + self.interval;
            self.bins.push((0..self.edges).map(|e| EdgeRecord::new(e, t0, t1)).collect());
        }
        &mut self.bins[idx]
    }

    /// Records a piece of movement that started at simulation time `t`.
    /// Pieces before the warm-up ends are dropped.
    pub fn record(&mut self, t: f64, edge: usize, time: f64, distance: f64, completed: bool) -> Result<(), MetricsError> {
        if t + 1e-9 < self.warmup {
            return Ok(());
        }
        self.bin_mut(t)[edge].record_traversal(time, distance, completed)
    }

    /// All interval records, ordered by interval then edge.
    pub fn records(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.bins.iter().flatten()
    }

    /// Whole-run record of every edge.
    pub fn totals(&self) -> Vec<EdgeRecord> {
        let mut out: Vec<EdgeRecord> = Vec::with_capacity(self.edges);
        for e in 0..self.edges {
            let mut it = self.bins.iter().map(|b| &b[e]);
            let first = it.next().cloned().unwrap_or_else(|| EdgeRecord::new(e, self.warmup, self.warmup));
            out.push(it.fold(first, |acc, r| acc.merge(r)));
        }
        out
    }
}

/// Network travel rate (ΣVHT / ΣVKT) and RCI against the length-weighted
/// free-flow rate.
pub fn network_summary<'a>(
    records: impl IntoIterator<Item = &'a EdgeRecord>,
    corridor: &Corridor,
    mpr: f64,
    per: f64,
    collisions: u64,
    vehicles_completed: u64,
) -> Result<RunSummary, MetricsError> {
    let (time, distance) = records
        .into_iter()
        .fold((0.0, 0.0), |(t, d), r| (t + r.total_time, d + r.total_distance));
    let tr = travel_rate(time, distance).ok_or(MetricsError::EmptyRun)?;
    Ok(RunSummary {
        mpr: mpr * 100.0,
        per: if mpr > 0.0 { Some(per * 100.0) } else { None },
        travel_rate: tr,
        rci: rci(tr, corridor.free_flow_rate()),
        collisions,
        vehicles_completed,
    })
}

/// Edge RCI against its own speed limit.
pub fn edge_rci(record: &EdgeRecord, corridor: &Corridor) -> Option<f64> {
    let ff = free_flow_rate(corridor.edge(record.edge).speed_limit);
    record.travel_rate().map(|tr| rci(tr, ff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::network::RoadNetwork;

    #[test]
    fn zero_piece_is_noop() {
        let mut r = EdgeRecord::new(0, 0.0, 60.0);
        r.record_traversal(0.0, 0.0, false).unwrap();
        assert_eq!(r, EdgeRecord::new(0, 0.0, 60.0));
        assert_eq!(r.travel_rate(), None);
    }

    #[test]
    fn unit_rates() {
        let mut r = EdgeRecord::new(0, 0.0, 60.0);
        r.record_traversal(60.0, 1000.0, true).unwrap();
        assert!((r.travel_rate().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.traversals, 1);

        let mut r = EdgeRecord::new(0, 0.0, 60.0);
        r.record_traversal(90.0, 1000.0, true).unwrap();
        r.record_traversal(30.0, 1000.0, true).unwrap();
        assert!((r.travel_rate().unwrap() - 1.0).abs() < 1e-12);

        assert!((travel_rate(91.248, 1000.0).unwrap() - 1.5208).abs() < 1e-12);
        assert!((travel_rate(36.0, 1000.0).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn negative_piece_rejected() {
        let mut r = EdgeRecord::new(0, 0.0, 60.0);
        assert_eq!(r.record_traversal(-1.0, 5.0, false), Err(MetricsError::Negative("time")));
        assert_eq!(r.record_traversal(1.0, -5.0, false), Err(MetricsError::Negative("distance")));
        assert!(r.record_traversal(f64::NAN, 5.0, false).is_err());
    }

    #[test]
    fn rci_anchors() {
        assert_eq!(rci(0.6, 0.6), 0.0);
        assert!((rci(1.8, 0.6) - 2.0).abs() < 1e-12);
        assert!((rci(1.2, 0.6) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_at_speed_limit_is_free_flow() {
        let c = Corridor::new(RoadNetwork::default_corridor());
        let limit = 100.0 / 3.6;
        let mut acc = MetricsAccumulator::new(c.edges().len(), 0.0, 60.0);
        for (e, edge) in c.edges().iter().enumerate() {
            acc.record(10.0, e, edge.length / limit, edge.length, true).unwrap();
        }
        let s = network_summary(acc.records(), &c, 0.4, 0.7, 0, 1).unwrap();
        assert!(s.rci.abs() < 1e-12);
        assert_eq!(s.per, Some(70.0));
        let s = network_summary(acc.records(), &c, 0.0, 0.7, 0, 1).unwrap();
        assert_eq!(s.per, None);
    }

    #[test]
    fn empty_run_is_error() {
        let c = Corridor::new(RoadNetwork::default_corridor());
        let acc = MetricsAccumulator::new(c.edges().len(), 0.0, 60.0);
        assert_eq!(network_summary(acc.records(), &c, 0.0, 0.0, 0, 0), Err(MetricsError::EmptyRun));
    }

    #[test]
    fn warmup_pieces_are_dropped_and_bins_split() {
        let mut acc = MetricsAccumulator::new(1, 300.0, 60.0);
        acc.record(299.9, 0, 0.1, 2.0, false).unwrap();
        acc.record(300.0, 0, 0.1, 2.0, false).unwrap();
        acc.record(359.9, 0, 0.1, 2.0, false).unwrap();
        acc.record(360.0, 0, 0.1, 2.0, true).unwrap();
        let recs: Vec<_> = acc.records().cloned().collect();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].t0, recs[0].t1), (300.0, 360.0));
        assert!((recs[0].total_distance - 4.0).abs() < 1e-12);
        assert_eq!(recs[1].traversals, 1);
        let tot = acc.totals();
        assert!((tot[0].total_distance - 6.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rci_strictly_increasing(ff in 0.1f64..5.0, a in 0.0f64..20.0, d in 1e-6f64..20.0) {
                prop_assert!(rci(a + d, ff) > rci(a, ff));
            }

            #[test]
            fn merge_then_rate_equals_union_rate(
                pieces in proptest::collection::vec((0.0f64..100.0, 0.0f64..1000.0), 1..40),
                split in 0usize..40,
            ) {
                let split = split.min(pieces.len());
                let mut left = EdgeRecord::new(0, 0.0, 60.0);
                let mut right = EdgeRecord::new(0, 60.0, 120.0);
                let mut union = EdgeRecord::new(0, 0.0, 120.0);
                for (i, &(t, d)) in pieces.iter().enumerate() {
                    if i < split { left.record_traversal(t, d, false).unwrap() } else { right.record_traversal(t, d, false).unwrap() }
                    union.record_traversal(t, d, false).unwrap();
                }
                let merged = left.merge(&right);
                match (merged.travel_rate(), union.travel_rate()) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12)),
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }
    }
}
