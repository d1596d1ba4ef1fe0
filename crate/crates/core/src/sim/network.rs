use serde::{Deserialize, Serialize};

/// One corridor edge. Lanes are numbered from the median side, so lane 0 is
/// the leftmost lane; a lane index that does not exist on the next edge
/// terminates at this edge's end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub id: String,
    pub length: f64,
    pub lanes: usize,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    /// Vehicles enter on the rightmost lane of the edge at `position`.
    OnRamp,
    /// Flagged vehicles leave from the rightmost lane at `position`.
    OffRamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub edge: String,
    pub position: f64,
    pub kind: RampKind,
    /// Demand of an on-ramp [veh/h].
    #[serde(default)]
    pub inflow: f64,
    /// Probability that a vehicle entering upstream leaves at an off-ramp.
    #[serde(default)]
    pub exit_fraction: f64,
    /// Speed cap for vehicles joining from an on-ramp [m/s]; none means the
    /// usual spawn speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_speed: Option<f64>,
}

/// Edges joined end-to-start in order, with ramp attachment points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadNetwork {
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub ramps: Vec<Ramp>,
}

impl RoadNetwork {
    /// Synthetic 7 km, 4-lane motorway stretch at 100 km/h with one on-ramp
    /// feeding a 300 m auxiliary lane half-way along.
    pub fn default_corridor() -> Self {
        let limit = 100.0 / 3.6;
        let mk = |id: &str, length: f64, lanes: usize| Edge { id: id.into(), length, lanes, speed_limit: limit };
        Self {
            edges: vec![
                mk("e0", 1000.0, 4),
                mk("e1", 1000.0, 4),
                mk("e2", 1000.0, 4),
                mk("e3", 1000.0, 4),
                mk("merge", 300.0, 5),
                mk("e5", 700.0, 4),
                mk("e6", 1000.0, 4),
                mk("e7", 1000.0, 4),
            ],
            ramps: vec![Ramp {
                edge: "merge".into(),
                position: 0.0,
                kind: RampKind::OnRamp,
                inflow: 1000.0,
                exit_fraction: 0.0,
                entry_speed: Some(60.0 / 3.6),
            }],
        }
    }

    /// Single-lane straight road, handy for platoon experiments.
    pub fn straight(length: f64, lanes: usize, speed_limit: f64) -> Self {
        Self {
            edges: vec![Edge { id: "road".into(), length, lanes, speed_limit }],
            ramps: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.edges.is_empty() {
            return Err("network.edges must not be empty".into());
        }
        for (i, e) in self.edges.iter().enumerate() {
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(format!("network.edges[{i}] ({}) length must be > 0", e.id));
            }
            if e.lanes == 0 {
                return Err(format!("network.edges[{i}] ({}) needs at least one lane", e.id));
            }
            if !(e.speed_limit.is_finite() && e.speed_limit > 0.0) {
                return Err(format!("network.edges[{i}] ({}) speed_limit must be > 0", e.id));
            }
            if self.edges[..i].iter().any(|o| o.id == e.id) {
                return Err(format!("network.edges[{i}] duplicates edge id {}", e.id));
            }
        }
        for (i, r) in self.ramps.iter().enumerate() {
            let Some(edge) = self.edges.iter().find(|e| e.id == r.edge) else {
                return Err(format!("network.ramps[{i}] references unknown edge {}", r.edge));
            };
            if !(0.0..=edge.length).contains(&r.position) {
                return Err(format!("network.ramps[{i}] position {} outside edge {}", r.position, edge.id));
            }
            if !(r.inflow.is_finite() && r.inflow >= 0.0) {
                return Err(format!("network.ramps[{i}] inflow must be >= 0"));
            }
            if !(0.0..=1.0).contains(&r.exit_fraction) {
                return Err(format!("network.ramps[{i}] exit_fraction must be in [0, 1]"));
            }
            if r.entry_speed.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                return Err(format!("network.ramps[{i}] entry_speed must be > 0"));
            }
        }
        Ok(())
    }
}

/// Precomputed geometry for fast coordinate lookups.
#[derive(Debug, Clone)]
pub struct Corridor {
    pub network: RoadNetwork,
    offsets: Vec<f64>,
    total_length: f64,
    max_lanes: usize,
    /// `lane_end[edge][lane]`: corridor coordinate where the lane stops, or
    /// `None` when it runs to the corridor exit.
    lane_end: Vec<Vec<Option<f64>>>,
    ramps: Vec<RampGeometry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampGeometry {
    pub index: usize,
    pub kind: RampKind,
    pub edge: usize,
    pub lane: usize,
    /// Corridor coordinate of the attachment point.
    pub x: f64,
    pub inflow: f64,
    pub exit_fraction: f64,
    pub entry_speed: Option<f64>,
}

impl Corridor {
    pub fn new(network: RoadNetwork) -> Self {
        let mut offsets = Vec::with_capacity(network.edges.len());
        let mut acc = 0.0;
        for e in &network.edges {
            offsets.push(acc);
            acc += e.length;
        }
        let n = network.edges.len();
        let max_lanes = network.edges.iter().map(|e| e.lanes).max().unwrap_or(0);
        let mut lane_end = vec![Vec::new(); n];
        for k in (0..n).rev() {
            let end_here = offsets[k] + network.edges[k].length;
            lane_end[k] = (0..network.edges[k].lanes)
                .map(|l| {
                    if k + 1 == n {
                        None
                    } else if l < network.edges[k + 1].lanes {
                        lane_end[k + 1][l]
                    } else {
                        Some(end_here)
                    }
                })
                .collect();
        }
        let ramps = network
            .ramps
            .iter()
            .enumerate()
            .map(|(index, r)| {
                let edge = network.edges.iter().position(|e| e.id == r.edge).expect("validated ramp edge");
                RampGeometry {
                    index,
                    kind: r.kind,
                    edge,
                    lane: network.edges[edge].lanes - 1,
                    x: offsets[edge] + r.position,
                    inflow: r.inflow,
                    exit_fraction: r.exit_fraction,
                    entry_speed: r.entry_speed,
                }
            })
            .collect();
        Self { network, offsets, total_length: acc, max_lanes, lane_end, ramps }
    }

    pub fn edges(&self) -> &[Edge] {
        &self.network.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.network.edges[i]
    }

    pub fn offset(&self, edge: usize) -> f64 {
        self.offsets[edge]
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn max_lanes(&self) -> usize {
        self.max_lanes
    }

    pub fn ramps(&self) -> &[RampGeometry] {
        &self.ramps
    }

    /// Corridor coordinate of position `s` on `edge`.
    pub fn x(&self, edge: usize, s: f64) -> f64 {
        self.offsets[edge] + s
    }

    /// Where `lane` stops when driven from `edge` onwards. `None` means it
    /// reaches the exit; a lane absent on `edge` ends immediately.
    pub fn lane_end(&self, edge: usize, lane: usize) -> Option<f64> {
        match self.lane_end[edge].get(lane) {
            Some(end) => *end,
            None => Some(self.offsets[edge]),
        }
    }

    pub fn has_lane(&self, edge: usize, lane: usize) -> bool {
        lane < self.network.edges[edge].lanes
    }

    /// Free-flow travel rate of the corridor weighted by edge length [min/km].
    pub fn free_flow_rate(&self) -> f64 {
        let weighted: f64 = self.network.edges.iter().map(|e| e.length * free_flow_rate(e.speed_limit)).sum();
        weighted / self.total_length
    }
}

/// Travel rate at constant `speed` [min/km].
pub fn free_flow_rate(speed: f64) -> f64 {
    (1000.0 / speed) / 60.0
}
