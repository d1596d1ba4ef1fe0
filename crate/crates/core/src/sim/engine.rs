//! The time-stepped world.
//!
//! Each call to [`World::step`] runs, in this order: spawn, beacon emission,
//! channel delivery and link updates, predecessor resolution, mode
//! selection, controller evaluation, actuator dynamics, kinematics, lane
//! changes, metrics accumulation and despawn. Everything random draws from
//! per-run ChaCha streams, so a seed fixes the whole trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comms::{beacon_due, channel_deliver, link_alive, link_on_rx, BeaconAccel, BeaconMsg, LinkState};
use crate::config::ScenarioConfig;
use crate::control::{
    acc_accel, actuator_step, cacc_step, cruise_accel, headway_blend, idm_accel, safety_bound, select_mode,
    CaccState, ControlMode, LeaderObservation, ModeKind, VehicleClass,
};
use crate::error::SimError;
use crate::metrics::{network_summary, MetricsAccumulator, RunSummary};
use crate::sim::demand::{sample_arrivals, sample_vehicle, Entry, EntryKind, PendingVehicle};
use crate::sim::lanechange::{lane_change_decide, Ahead, Behind, Driver, LaneChangeInputs, TargetLane};
use crate::sim::network::{Corridor, RampKind};
use crate::sim::trajectory::{TrajectoryRow, TrajectorySink};
use crate::sim::vehicle::{EdgeEntry, Leader, VehicleId, VehicleState};

/// Counters kept alongside the metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorldStats {
    pub spawned: u64,
    pub despawned: u64,
    /// Vehicles that left the network after the warm-up.
    pub completed: u64,
    pub collisions: u64,
    /// Controller outputs that hit the gap ≤ 0 emergency branch.
    pub emergency_brakes: u64,
    pub lane_changes: u64,
}

/// One piece of movement on a single edge during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub edge: usize,
    pub time: f64,
    pub distance: f64,
    pub completed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MoveOutcome {
    OnRoad,
    /// Left the network `time` seconds into the step at corridor position `x`.
    Exited { time: f64, x: f64 },
}

/// Result of [`kinematics_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Movement {
    pub outcome: MoveOutcome,
    /// Vehicle was stopped dead at the end of its lane.
    pub overrun: bool,
}

/// Ballistic update `v' = max(0, v + a·dt)`, `Δs = dt·(v + v')/2`, capped
/// at `v_max`. Returns `(v', Δs)`.
pub fn ballistic_step(v: f64, a: f64, dt: f64, v_max: f64) -> (f64, f64) {
    let v_next = (v + a * dt).max(0.0).min(v_max.max(v));
    (v_next, dt * (v + v_next) / 2.0)
}

/// Advances one vehicle along the corridor, rolling over edge boundaries.
/// Movement pieces per edge are appended to `pieces`; time inside a step
/// is pro-rated by distance.
pub fn kinematics_update(vs: &mut VehicleState, corridor: &Corridor, t: f64, dt: f64, pieces: &mut Vec<Piece>) -> Movement {
    let limit = corridor.edge(vs.edge).speed_limit;
    let (mut v_next, mut ds) = ballistic_step(vs.v, vs.a, dt, limit);
    let x_old = corridor.x(vs.edge, vs.s);
    let mut overrun = false;
    if let Some(end) = corridor.lane_end(vs.edge, vs.lane) {
        if x_old + ds > end {
            ds = (end - x_old).max(0.0);
            v_next = 0.0;
            vs.a = 0.0;
            overrun = true;
        }
    }
    let mut stop_at = None;
    if let Some(r) = vs.exit_ramp {
        let ramp = corridor.ramps()[r];
        if x_old < ramp.x && x_old + ds >= ramp.x {
            if vs.lane == ramp.lane && vs.edge == ramp.edge {
                stop_at = Some(ramp.x);
            } else {
                vs.exit_ramp = None;
            }
        }
    }
    vs.v = v_next;
    if vs.v == 0.0 && vs.a < 0.0 {
        vs.a = 0.0;
    }

    let share = |d: f64| if ds > 0.0 { dt * d / ds } else { dt };
    let mut remaining = ds;
    let mut elapsed = 0.0;
    if let Some(x_exit) = stop_at {
        let d = x_exit - x_old;
        pieces.push(Piece { edge: vs.edge, time: share(d), distance: d, completed: false });
        vs.s += d;
        return Movement { outcome: MoveOutcome::Exited { time: share(d), x: x_exit }, overrun };
    }
    loop {
        let len = corridor.edge(vs.edge).length;
        let room = len - vs.s;
        if remaining <= room {
            let time = if ds > 0.0 { share(remaining) } else { dt - elapsed };
            pieces.push(Piece { edge: vs.edge, time, distance: remaining, completed: false });
            vs.s += remaining;
            return Movement { outcome: MoveOutcome::OnRoad, overrun };
        }
        let time = share(room);
        let full = vs.entry_log.last().is_some_and(|e| e.edge == vs.edge && e.full);
        pieces.push(Piece { edge: vs.edge, time, distance: room, completed: full });
        remaining -= room;
        elapsed += time;
        if vs.edge + 1 == corridor.edges().len() {
            vs.s = len;
            return Movement { outcome: MoveOutcome::Exited { time: elapsed, x: corridor.total_length() }, overrun };
        }
        vs.edge += 1;
        vs.s = 0.0;
        vs.v0 = vs.speed_factor * corridor.edge(vs.edge).speed_limit;
        vs.entry_log.push(EdgeEntry { edge: vs.edge, t: t + elapsed, full: true });
    }
}

/// Initial state for a vehicle placed directly into the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleInit {
    pub class: VehicleClass,
    pub edge: usize,
    pub lane: usize,
    pub s: f64,
    pub v: f64,
    pub a: f64,
    /// Desired speed as a fraction of the speed limit (≤ 1).
    pub speed_factor: f64,
    pub headway: f64,
}

pub struct World {
    cfg: ScenarioConfig,
    corridor: Corridor,
    vehicles: Vec<VehicleState>,
    lanes: Vec<Vec<usize>>,
    entries: Vec<Entry>,
    exits: Vec<(usize, f64)>,
    next_id: VehicleId,
    step_index: u64,
    lc_every: u64,
    rng_spawn: ChaCha8Rng,
    rng_channel: ChaCha8Rng,
    rng_lane: ChaCha8Rng,
    metrics: MetricsAccumulator,
    stats: WorldStats,
    beacons: Vec<Option<BeaconMsg>>,
    pieces: Vec<(usize, Piece)>,
    trajectory: Option<Box<dyn TrajectorySink>>,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let corridor = Corridor::new(cfg.network.clone());
        let mut entries = vec![Entry {
            name: "mainline".into(),
            kind: EntryKind::Mainline,
            inflow: cfg.demand.inflow,
            queue: Default::default(),
        }];
        let mut exits = Vec::new();
        for ramp in corridor.ramps() {
            match ramp.kind {
                RampKind::OnRamp => entries.push(Entry {
                    name: format!("ramp{}", ramp.index),
                    kind: EntryKind::Ramp(ramp.index),
                    inflow: ramp.inflow,
                    queue: Default::default(),
                }),
                RampKind::OffRamp => exits.push((ramp.index, ramp.exit_fraction)),
            }
        }
        let lc_every = ((cfg.lane_change.decision_interval / cfg.dt).round() as u64).max(1);
        let seed = cfg.seed;
        let metrics = MetricsAccumulator::new(corridor.edges().len(), cfg.warmup, cfg.metrics_interval);
        Ok(Self {
            lanes: vec![Vec::new(); corridor.max_lanes()],
            corridor,
            vehicles: Vec::new(),
            entries,
            exits,
            next_id: 0,
            step_index: 0,
            lc_every,
            rng_spawn: ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x5350_4157_4e00_0001)),
            rng_channel: ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x4348_414e_0000_0002)),
            rng_lane: ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x4c41_4e45_0000_0003)),
            metrics,
            stats: WorldStats::default(),
            beacons: Vec::new(),
            pieces: Vec::new(),
            trajectory: None,
            cfg,
        })
    }

    pub fn set_trajectory_sink(&mut self, sink: Box<dyn TrajectorySink>) {
        self.trajectory = Some(sink);
    }

    pub fn take_trajectory_sink(&mut self) -> Option<Box<dyn TrajectorySink>> {
        self.trajectory.take()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// Changes the channel loss rate from the next step on.
    pub fn set_packet_error_rate(&mut self, per: f64) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&per) {
            return Err(SimError::Config(format!("channel.per must be in [0, 1] (got {per})")));
        }
        self.cfg.channel.per = per;
        Ok(())
    }

    pub fn corridor(&self) -> &Corridor {
        &self.corridor
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.index_of(id).map(|i| &self.vehicles[i])
    }

    pub fn vehicle_mut(&mut self, id: VehicleId) -> Option<&mut VehicleState> {
        self.index_of(id).map(move |i| &mut self.vehicles[i])
    }

    pub fn stats(&self) -> WorldStats {
        self.stats
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    /// Simulation time at the start of the next step.
    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.cfg.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Waiting vehicles per entry point.
    pub fn entry_queues(&self) -> Vec<(&str, usize)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.queue.len())).collect()
    }

    pub fn queued(&self) -> usize {
        self.entries.iter().map(|e| e.queue.len()).sum()
    }

    pub fn is_finished(&self) -> bool {
        self.time() >= self.cfg.duration - 1e-9
    }

    pub fn summary(&self) -> Result<RunSummary, SimError> {
        Ok(network_summary(
            self.metrics.records(),
            &self.corridor,
            self.cfg.demand.mpr,
            self.cfg.channel.per,
            self.stats.collisions,
            self.stats.completed,
        )?)
    }

    fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id, |v| v.id).ok()
    }

    fn x_of(&self, i: usize) -> f64 {
        let v = &self.vehicles[i];
        self.corridor.x(v.edge, v.s)
    }

    /// Places a vehicle directly, bypassing demand. Call
    /// [`World::resolve_predecessors`] after the last insertion.
    pub fn insert_vehicle(&mut self, init: VehicleInit) -> VehicleId {
        let id = self.next_id;
        self.next_id += 1;
        let limit = self.corridor.edge(init.edge).speed_limit;
        let mode = match init.class {
            VehicleClass::Hdv => ControlMode { kind: ModeKind::Idm, target_headway: self.cfg.control.hdv.time_headway },
            VehicleClass::Cav => ControlMode { kind: ModeKind::Acc, target_headway: init.headway },
        };
        let t = self.time();
        self.vehicles.push(VehicleState {
            id,
            class: init.class,
            edge: init.edge,
            lane: init.lane,
            s: init.s,
            v: init.v,
            a: init.a,
            u: init.a,
            mode,
            cacc: CaccState { u: init.a, h_current: init.headway },
            link: LinkState::default(),
            v0: init.speed_factor * limit,
            speed_factor: init.speed_factor,
            length: self.cfg.control.vehicle_length,
            entry_log: vec![EdgeEntry { edge: init.edge, t, full: init.s == 0.0 }],
            leader: None,
            last_beacon_emit: None,
            exit_ramp: None,
            spawn_time: t,
            command_override: None,
            in_collision: false,
            yield_to: None,
            yield_leader: None,
        });
        self.stats.spawned += 1;
        self.rebuild_lanes();
        id
    }

    /// Recomputes leaders and retargets links without stepping time.
    pub fn resolve_predecessors(&mut self) {
        self.resolve_leaders(self.time());
    }

    fn rebuild_lanes(&mut self) {
        for lane in &mut self.lanes {
            lane.clear();
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            self.lanes[v.lane].push(i);
        }
        let vehicles = &self.vehicles;
        let corridor = &self.corridor;
        for lane in &mut self.lanes {
            lane.sort_by(|&a, &b| {
                let (va, vb) = (&vehicles[a], &vehicles[b]);
                corridor.x(va.edge, va.s).total_cmp(&corridor.x(vb.edge, vb.s)).then(va.id.cmp(&vb.id))
            });
        }
    }

    /// Advances the world by one step of `dt`.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        let dt = self.cfg.dt;
        self.spawn(t)?;
        self.emit_beacons(t);
        self.deliver_beacons(t);
        self.resolve_leaders(t);
        if self.cfg.output.abort_on_collision {
            if let Some(v) = self.vehicles.iter().find(|v| v.in_collision) {
                let leader = v.leader.and_then(|l| l.id).unwrap_or(v.id);
                return Err(SimError::Collision { t, follower: v.id, leader });
            }
        }
        self.control(t, dt)?;
        let exited = self.advance(t, dt);
        self.change_lanes();
        for (_, p) in self.pieces.drain(..) {
            self.metrics.record(t, p.edge, p.time, p.distance, p.completed)?;
        }
        self.despawn_and_log(t, dt, exited)?;
        self.step_index += 1;
        Ok(())
    }

    /// Steps until the configured duration is reached.
    pub fn run(&mut self) -> Result<RunSummary, SimError> {
        while !self.is_finished() {
            self.step()?;
        }
        self.finish()?;
        self.summary()
    }

    pub fn finish(&mut self) -> Result<(), SimError> {
        if let Some(sink) = self.trajectory.as_mut() {
            sink.finish().map_err(|e| SimError::io("trajectory", e))?;
        }
        Ok(())
    }

    // (1)
    fn spawn(&mut self, t: f64) -> Result<(), SimError> {
        let dt = self.cfg.dt;
        if t < self.cfg.demand.duration {
            for k in 0..self.entries.len() {
                let n = sample_arrivals(self.entries[k].inflow, dt, &mut self.rng_spawn);
                for _ in 0..n {
                    let exits: Vec<(usize, f64)> = match self.entries[k].kind {
                        EntryKind::Mainline => self.exits.clone(),
                        EntryKind::Ramp(r) => {
                            let from = self.corridor.ramps()[r].x;
                            self.exits.iter().copied().filter(|&(e, _)| self.corridor.ramps()[e].x > from).collect()
                        }
                    };
                    let p = sample_vehicle(self.cfg.demand.mpr, &self.cfg.control, &exits, &mut self.rng_spawn);
                    self.entries[k].queue.push_back(p);
                }
                if self.entries[k].queue.len() > self.cfg.max_spawn_queue {
                    return Err(SimError::SpawnQueueOverflow {
                        entry: self.entries[k].name.clone(),
                        limit: self.cfg.max_spawn_queue,
                        t,
                    });
                }
            }
        }
        for k in 0..self.entries.len() {
            match self.entries[k].kind {
                EntryKind::Mainline => {
                    while let Some(&p) = self.entries[k].queue.front() {
                        if !self.insert_mainline(p, t) {
                            break;
                        }
                        self.entries[k].queue.pop_front();
                    }
                }
                EntryKind::Ramp(r) => {
                    if let Some(&p) = self.entries[k].queue.front() {
                        if self.insert_at_ramp(p, r, t) {
                            self.entries[k].queue.pop_front();
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn spawn_headway(&self, class: VehicleClass, leader_class: Option<VehicleClass>) -> f64 {
        select_mode(class, leader_class, true, &self.cfg.control).target_headway
    }

    /// Largest speed that can still be braked comfortably to the leader's
    /// speed within the gap, and the spacing it requires.
    fn spawn_speed(&self, p: &PendingVehicle, edge: usize, ahead: Option<(f64, f64, Option<VehicleClass>)>) -> (f64, f64, f64) {
        let v_des = p.speed_factor * self.corridor.edge(edge).speed_limit;
        let s0 = self.cfg.control.min_gap(p.class);
        match ahead {
            None => {
                let h = self.spawn_headway(p.class, None);
                (v_des, h, 0.0)
            }
            Some((gap, speed, class)) => {
                let b = self.cfg.control.hdv.comfort_decel;
                let v_safe = (speed * speed + 2.0 * b * (gap - s0).max(0.0)).sqrt();
                let v = v_des.min(v_safe);
                let h = self.spawn_headway(p.class, class);
                (v, h, s0 + h * v)
            }
        }
    }

    fn insert_mainline(&mut self, p: PendingVehicle, t: f64) -> bool {
        let edge = 0;
        let mut best: Option<(f64, usize, f64, f64, Option<VehicleId>)> = None;
        for lane in 0..self.corridor.edge(edge).lanes {
            if self.corridor.lane_end(edge, lane).is_some() && (0..self.corridor.edge(edge).lanes).any(|l| self.corridor.lane_end(edge, l).is_none()) {
                continue;
            }
            let rear = self.lanes[lane].first().copied();
            let ahead = rear.map(|i| {
                let l = &self.vehicles[i];
                (self.x_of(i) - l.length, l.v, Some(l.class), l.id)
            });
            let (v, h, need) = self.spawn_speed(&p, edge, ahead.map(|(g, s, c, _)| (g, s, c)));
            let gap = ahead.map_or(f64::INFINITY, |a| a.0);
            if gap >= need && best.is_none_or(|b| gap > b.0) {
                best = Some((gap, lane, v, h, ahead.map(|a| a.3)));
            }
        }
        let Some((_, lane, v, h, leader)) = best else { return false };
        self.place(p, edge, lane, 0.0, v, h, leader, t);
        true
    }

    fn insert_at_ramp(&mut self, p: PendingVehicle, ramp: usize, t: f64) -> bool {
        let geo = self.corridor.ramps()[ramp];
        let x = geo.x;
        let list = &self.lanes[geo.lane];
        let k = list.partition_point(|&i| self.x_of(i) <= x);
        let mut ahead = list.get(k).map(|&i| {
            let l = &self.vehicles[i];
            (self.x_of(i) - l.length - x, l.v, Some(l.class), Some(l.id))
        });
        if let Some(end) = self.corridor.lane_end(geo.edge, geo.lane) {
            let g = end - x;
            if ahead.is_none_or(|a| g < a.0) {
                ahead = Some((g, 0.0, None, None));
            }
        }
        if k > 0 {
            let f = &self.vehicles[list[k - 1]];
            let back_gap = x - self.cfg.control.vehicle_length - self.x_of(list[k - 1]);
            let h_f = f.cacc.h_current.max(match f.class {
                VehicleClass::Hdv => self.cfg.control.hdv.time_headway,
                VehicleClass::Cav => 0.0,
            });
            if back_gap < self.cfg.control.min_gap(f.class) + h_f * f.v {
                return false;
            }
        }
        let (v, h, need) = self.spawn_speed(&p, geo.edge, ahead.map(|(g, s, c, _)| (g, s, c)));
        if ahead.is_some_and(|a| a.0 < need) {
            return false;
        }
        let v = geo.entry_speed.map_or(v, |cap| v.min(cap));
        let pos = x - self.corridor.offset(geo.edge);
        self.place(p, geo.edge, geo.lane, pos, v, h, ahead.and_then(|a| a.3), t);
        true
    }

    #[allow(clippy::too_many_arguments)]
    fn place(&mut self, p: PendingVehicle, edge: usize, lane: usize, s: f64, v: f64, h: f64, leader: Option<VehicleId>, t: f64) {
        let id = self.next_id;
        self.next_id += 1;
        let mode = match p.class {
            VehicleClass::Hdv => ControlMode { kind: ModeKind::Idm, target_headway: h },
            VehicleClass::Cav => ControlMode { kind: ModeKind::Acc, target_headway: h },
        };
        let state = VehicleState {
            id,
            class: p.class,
            edge,
            lane,
            s,
            v,
            a: 0.0,
            u: 0.0,
            mode,
            cacc: CaccState { u: 0.0, h_current: h },
            link: LinkState::new(leader),
            v0: p.speed_factor * self.corridor.edge(edge).speed_limit,
            speed_factor: p.speed_factor,
            length: self.cfg.control.vehicle_length,
            entry_log: vec![EdgeEntry { edge, t, full: s == 0.0 }],
            leader: None,
            last_beacon_emit: None,
            exit_ramp: p.exit_ramp,
            spawn_time: t,
            command_override: None,
            in_collision: false,
            yield_to: None,
            yield_leader: None,
        };
        let idx = self.vehicles.len();
        let x = self.corridor.x(edge, s);
        let list = &self.lanes[lane];
        let k = list.partition_point(|&i| self.x_of(i) < x);
        self.vehicles.push(state);
        self.lanes[lane].insert(k, idx);
        self.stats.spawned += 1;
        if let Some(sink) = self.trajectory.as_mut() {
            let v = &self.vehicles[idx];
            let row = TrajectoryRow {
                t,
                id: v.id,
                class: v.class,
                mode: v.mode.kind,
                edge: self.corridor.edge(edge).id.clone(),
                lane,
                s,
                v: v.v,
                a: v.a,
                gap: None,
                link_alive: false,
            };
            // A failing sink surfaces on the next end-of-step write.
            let _ = sink.row(&row);
        }
    }

    // (2)
    fn emit_beacons(&mut self, t: f64) {
        self.beacons.clear();
        self.beacons.resize(self.vehicles.len(), None);
        let period = self.cfg.channel.beacon_period;
        let source = self.cfg.channel.beacon_accel;
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            if v.class != VehicleClass::Cav || !beacon_due(t, v.last_beacon_emit, period) {
                continue;
            }
            v.last_beacon_emit = Some(t);
            self.beacons[i] = Some(BeaconMsg {
                sender_id: v.id,
                t_sent: t,
                position: self.corridor.x(v.edge, v.s),
                lane: v.lane,
                speed: v.v,
                accel: match source {
                    BeaconAccel::Commanded => v.u,
                    BeaconAccel::Actual => v.a,
                },
            });
        }
    }

    // (3) Only the tracked predecessor's beacon can change a link, so only
    // that (message, receiver) pair is drawn.
    fn deliver_beacons(&mut self, t: f64) {
        for i in 0..self.vehicles.len() {
            if self.vehicles[i].class != VehicleClass::Cav {
                continue;
            }
            let Some(pred) = self.vehicles[i].link.pred_id else { continue };
            let Some(j) = self.index_of(pred) else { continue };
            let Some(msg) = self.beacons[j] else { continue };
            let rx = self.x_of(i);
            if channel_deliver(&msg, rx, &self.cfg.channel, &mut self.rng_channel) {
                let v = &mut self.vehicles[i];
                v.link = link_on_rx(v.link, &msg, t);
            }
        }
    }

    // (4)
    fn resolve_leaders(&mut self, _t: f64) {
        let range = self.cfg.sensing_range;
        for lane in 0..self.lanes.len() {
            let list = &self.lanes[lane];
            for k in 0..list.len() {
                let i = list[k];
                let x = self.x_of(i);
                let mut leader = list.get(k + 1).and_then(|&j| {
                    let p = &self.vehicles[j];
                    let gap = self.x_of(j) - p.length - x;
                    (gap <= range).then_some(Leader { id: Some(p.id), class: Some(p.class), gap, speed: p.v, accel: p.a })
                });
                let ego = &self.vehicles[i];
                if let Some(end) = self.corridor.lane_end(ego.edge, ego.lane) {
                    let gap = end - x;
                    if gap <= range && leader.is_none_or(|l| gap < l.gap) {
                        leader = Some(Leader { id: None, class: None, gap, speed: 0.0, accel: 0.0 });
                    }
                }
                let collided = leader.is_some_and(|l| l.id.is_some() && l.gap <= 0.0);
                let yield_leader = ego.yield_to.and_then(|m| self.index_of(m)).and_then(|j| {
                    let m = &self.vehicles[j];
                    let gap = self.x_of(j) - m.length - x;
                    let merging = m.lane == lane + 1 && self.corridor.lane_end(m.edge, m.lane).is_some();
                    (merging && gap > 0.0).then_some(Leader { id: Some(m.id), class: Some(m.class), gap, speed: m.v, accel: m.a })
                });
                let v = &mut self.vehicles[i];
                if yield_leader.is_none() {
                    v.yield_to = None;
                }
                v.yield_leader = yield_leader;
                if collided && !v.in_collision {
                    self.stats.collisions += 1;
                }
                v.in_collision = collided;
                v.leader = leader;
                v.link.retarget(leader.and_then(|l| l.id));
            }
        }
    }

    // (5)-(7)
    fn control(&mut self, t: f64, dt: f64) -> Result<(), SimError> {
        let cc = &self.cfg.control;
        let timeout = self.cfg.channel.timeout;
        for v in &mut self.vehicles {
            let limits = cc.limits(v.class);
            let obs = v.leader.map(|l| LeaderObservation::sensed(l.gap, l.speed));
            let mut out = match v.class {
                VehicleClass::Hdv => {
                    v.mode = ControlMode { kind: ModeKind::Idm, target_headway: cc.hdv.time_headway };
                    v.cacc.h_current = cc.hdv.time_headway;
                    idm_accel(v.v, v.v0, obs.as_ref(), &cc.hdv)?
                }
                VehicleClass::Cav => {
                    let alive = link_alive(&v.link, t, timeout);
                    let mode = select_mode(v.class, v.leader.and_then(|l| l.class), alive, cc);
                    if mode.kind == ModeKind::Cacc && v.mode.kind != ModeKind::Cacc {
                        v.cacc.u = v.a;
                    }
                    v.mode = mode;
                    v.cacc.h_current = headway_blend(v.cacc.h_current, mode.target_headway, cc.cav.headway_rate, dt);
                    let h = v.cacc.h_current;
                    let cruise = cruise_accel(v.v, v.v0, &cc.cav);
                    match (mode.kind, obs) {
                        (ModeKind::Cacc, Some(mut obs)) => {
                            obs.leader_accel_feedforward = v.link.last_beacon.map(|b| b.accel);
                            let (mut out, next) = cacc_step(v.cacc, v.v, v.a, &obs, h, dt, &cc.cav)?;
                            v.cacc = next;
                            out.accel = out.accel.min(cruise);
                            out
                        }
                        (_, Some(obs)) => {
                            let mut out = acc_accel(v.v, &obs, h, &cc.cav)?;
                            out.accel = out.accel.min(cruise);
                            out
                        }
                        (_, None) => crate::control::ControlOutput { accel: cruise, emergency: false },
                    }
                }
            };
            if let Some(y) = v.yield_leader {
                let obs = LeaderObservation::sensed(y.gap, y.speed);
                let alt = match v.class {
                    VehicleClass::Hdv => idm_accel(v.v, v.v0, Some(&obs), &cc.hdv)?.accel,
                    VehicleClass::Cav => acc_accel(v.v, &obs, v.cacc.h_current, &cc.cav)?.accel,
                };
                // A yield is a courtesy: it is abandoned rather than forced.
                if alt >= -self.cfg.lane_change.yield_decel {
                    out.accel = out.accel.min(alt);
                } else {
                    v.yield_to = None;
                    v.yield_leader = None;
                }
            }
            if out.emergency {
                self.stats.emergency_brakes += 1;
            }
            if let (Some(l), Some(obs)) = (v.leader, obs) {
                let lag = if v.class == VehicleClass::Cav { cc.cav.tau } else { 0.0 };
                let margin = 0.5 * cc.min_gap(v.class);
                if let Some(b) = safety_bound(v.v, &obs, l.accel, lag, margin, cc.safety_trigger_decel) {
                    out.accel = out.accel.min(b);
                }
            }
            if let Some(o) = v.command_override {
                out.accel = o;
            }
            v.u = limits.clamp_physical(out.accel);
            v.a = match v.class {
                VehicleClass::Cav => actuator_step(v.a, v.u, cc.cav.tau, dt, &limits),
                VehicleClass::Hdv => v.u,
            };
        }
        Ok(())
    }

    // (8)
    fn advance(&mut self, t: f64, dt: f64) -> Vec<(usize, f64, f64)> {
        let mut exited = Vec::new();
        let mut scratch = Vec::with_capacity(4);
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            scratch.clear();
            let m = kinematics_update(v, &self.corridor, t, dt, &mut scratch);
            if m.overrun && !v.in_collision {
                self.stats.collisions += 1;
                v.in_collision = true;
            }
            self.pieces.extend(scratch.iter().map(|p| (i, *p)));
            if let MoveOutcome::Exited { time, x } = m.outcome {
                exited.push((i, time, x));
            }
        }
        if !exited.is_empty() {
            for lane in &mut self.lanes {
                lane.retain(|i| exited.binary_search_by_key(i, |e| e.0).is_err());
            }
        }
        let vehicles = &self.vehicles;
        let corridor = &self.corridor;
        for lane in &mut self.lanes {
            lane.sort_by(|&a, &b| {
                let (va, vb) = (&vehicles[a], &vehicles[b]);
                corridor.x(va.edge, va.s).total_cmp(&corridor.x(vb.edge, vb.s)).then(va.id.cmp(&vb.id))
            });
        }
        exited
    }

    fn neighbours(&self, lane: usize, x: f64) -> (Option<usize>, Option<usize>) {
        let list = &self.lanes[lane];
        let k = list.partition_point(|&i| self.x_of(i) <= x);
        (list.get(k).copied(), k.checked_sub(1).map(|j| list[j]))
    }

    fn driver(&self, i: usize) -> Driver {
        let v = &self.vehicles[i];
        let headway = match v.class {
            VehicleClass::Hdv => self.cfg.control.hdv.time_headway,
            VehicleClass::Cav => v.cacc.h_current,
        };
        Driver { class: v.class, v: v.v, v0: v.v0, headway }
    }

    fn ahead_in(&self, lane: usize, edge: usize, x: f64, exclude: usize) -> Option<Ahead> {
        let list = &self.lanes[lane];
        let k = list.partition_point(|&i| self.x_of(i) <= x);
        let mut ahead = list[k..].iter().find(|&&j| j != exclude).map(|&j| Ahead {
            gap: self.x_of(j) - self.vehicles[j].length - x,
            speed: self.vehicles[j].v,
        });
        if let Some(end) = self.corridor.lane_end(edge, lane) {
            let gap = end - x;
            if gap <= self.cfg.sensing_range && ahead.is_none_or(|a| gap < a.gap) {
                ahead = Some(Ahead { gap, speed: 0.0 });
            }
        }
        ahead
    }

    fn lane_change_inputs(&self, i: usize) -> Option<LaneChangeInputs> {
        let v = &self.vehicles[i];
        let x = self.x_of(i);
        let lanes_here = self.corridor.edge(v.edge).lanes;
        let end_here = self.corridor.lane_end(v.edge, v.lane).unwrap_or(f64::INFINITY);
        let horizon = self.cfg.lane_change.mandatory_horizon * self.cfg.lane_change.lc_strategic;
        let wanted_lane = v.exit_ramp.map(|r| self.corridor.ramps()[r]).filter(|r| r.x > x && r.x - x < horizon).map(|r| r.lane);
        let must_leave = end_here - x < horizon;
        let merging_on_right = v.lane + 1 < lanes_here
            && self.corridor.lane_end(v.edge, v.lane + 1).is_some_and(|e| e < end_here)
            && self.lanes[v.lane + 1].iter().any(|&j| (self.x_of(j) - x).abs() <= self.cfg.lane_change.cooperative_range);

        let target = |lane: usize, left: bool| -> Option<TargetLane> {
            if lane >= lanes_here {
                return None;
            }
            let end_there = self.corridor.lane_end(v.edge, lane).unwrap_or(f64::INFINITY);
            if end_there < end_here {
                return None;
            }
            let (ahead, behind) = self.neighbours(lane, x);
            let leader = ahead.map(|j| Ahead { gap: self.x_of(j) - self.vehicles[j].length - x, speed: self.vehicles[j].v });
            let leader = match (leader, self.corridor.lane_end(v.edge, lane)) {
                (l, Some(end)) if end - x <= self.cfg.sensing_range && l.is_none_or(|l| end - x < l.gap) => {
                    Some(Ahead { gap: end - x, speed: 0.0 })
                }
                (l, _) => l,
            };
            let follower = behind.map(|j| Behind { gap: x - v.length - self.x_of(j), driver: self.driver(j) });
            let mandatory = (must_leave && end_there > end_here)
                || wanted_lane.is_some_and(|w| if left { w < v.lane } else { w > v.lane });
            Some(TargetLane { lane, leader, follower, mandatory, yields_to_merger: left && merging_on_right })
        };
        let left = v.lane.checked_sub(1).and_then(|l| target(l, true));
        let right = target(v.lane + 1, false);
        if left.is_none() && right.is_none() {
            return None;
        }
        Some(LaneChangeInputs {
            ego: self.driver(i),
            current_leader: self.ahead_in(v.lane, v.edge, x, i),
            left,
            right,
        })
    }

    /// Picks the nearest merging vehicle just ahead in a terminating lane on
    /// the right and, with probability `lc_cooperative`, lets it in.
    fn yield_decision(&mut self, i: usize) -> Option<VehicleId> {
        let v = &self.vehicles[i];
        let right = v.lane + 1;
        if right >= self.corridor.edge(v.edge).lanes {
            return None;
        }
        let end = self.corridor.lane_end(v.edge, right)?;
        let x = self.x_of(i);
        let lc = &self.cfg.lane_change;
        let horizon = lc.mandatory_horizon * lc.lc_strategic;
        let list = &self.lanes[right];
        let k = list.partition_point(|&j| self.x_of(j) <= x);
        let m = list[k..].iter().copied().find(|&j| self.x_of(j) - x <= lc.cooperative_range && end - self.x_of(j) < horizon)?;
        let id = self.vehicles[m].id;
        (self.rng_lane.random::<f64>() < lc.lc_cooperative).then_some(id)
    }

    // (9)
    fn change_lanes(&mut self) {
        let exited: Vec<bool> = {
            let mut flags = vec![true; self.vehicles.len()];
            for lane in &self.lanes {
                for &i in lane {
                    flags[i] = false;
                }
            }
            flags
        };
        for i in 0..self.vehicles.len() {
            if exited[i] || !(self.step_index + self.vehicles[i].id).is_multiple_of(self.lc_every) {
                continue;
            }
            self.vehicles[i].yield_to = self.yield_decision(i);
            let Some(inputs) = self.lane_change_inputs(i) else { continue };
            let choice = lane_change_decide(&inputs, &self.cfg.control, &self.cfg.lane_change, &mut self.rng_lane);
            if let Some(lane) = choice {
                let x = self.x_of(i);
                let from = self.vehicles[i].lane;
                self.lanes[from].retain(|&j| j != i);
                let k = self.lanes[lane].partition_point(|&j| self.x_of(j) <= x);
                self.lanes[lane].insert(k, i);
                self.vehicles[i].lane = lane;
                self.vehicles[i].yield_to = None;
                self.stats.lane_changes += 1;
            }
        }
    }

    // (11)
    fn despawn_and_log(&mut self, t: f64, dt: f64, exited: Vec<(usize, f64, f64)>) -> Result<(), SimError> {
        if let Some(sink) = self.trajectory.as_mut() {
            let t_end = t + dt;
            let timeout = self.cfg.channel.timeout;
            let mut ex = exited.iter().peekable();
            for (i, v) in self.vehicles.iter().enumerate() {
                let (row_t, s) = match ex.peek() {
                    Some(&&(j, time, x)) if j == i => {
                        ex.next();
                        (t + time, x - self.corridor.offset(v.edge))
                    }
                    _ => (t_end, v.s),
                };
                let row = TrajectoryRow {
                    t: row_t,
                    id: v.id,
                    class: v.class,
                    mode: v.mode.kind,
                    edge: self.corridor.edge(v.edge).id.clone(),
                    lane: v.lane,
                    s,
                    v: v.v,
                    a: v.a,
                    gap: v.leader.map(|l| l.gap),
                    link_alive: v.class == VehicleClass::Cav && link_alive(&v.link, t, timeout),
                };
                sink.row(&row).map_err(|e| SimError::io("trajectory", e))?;
            }
        }
        if exited.is_empty() {
            return Ok(());
        }
        for &(_, time, _) in &exited {
            self.stats.despawned += 1;
            if t + time >= self.cfg.warmup - 1e-9 {
                self.stats.completed += 1;
            }
        }
        let mut k = 0;
        let mut idx = 0;
        self.vehicles.retain(|_| {
            let keep = !(k < exited.len() && exited[k].0 == idx);
            if !keep {
                k += 1;
            }
            idx += 1;
            keep
        });
        self.rebuild_lanes();
        Ok(())
    }
}
