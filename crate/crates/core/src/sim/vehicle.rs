use crate::comms::LinkState;
use crate::control::{CaccState, ControlMode, VehicleClass};

pub type VehicleId = u64;

/// What a vehicle currently has directly ahead in its lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// `None` for the virtual obstacle at the end of a terminating lane.
    pub id: Option<VehicleId>,
    pub class: Option<VehicleClass>,
    pub gap: f64,
    pub speed: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEntry {
    pub edge: usize,
    pub t: f64,
    /// Entered at the edge start, so leaving it counts as a full traversal.
    pub full: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub edge: usize,
    pub lane: usize,
    /// Front bumper position along the current edge [m].
    pub s: f64,
    pub v: f64,
    /// Actual acceleration.
    pub a: f64,
    /// Commanded acceleration.
    pub u: f64,
    pub mode: ControlMode,
    pub cacc: CaccState,
    pub link: LinkState,
    /// Desired speed on the current edge.
    pub v0: f64,
    /// Desired speed as a fraction of the speed limit, at most 1.
    pub speed_factor: f64,
    pub length: f64,
    pub entry_log: Vec<EdgeEntry>,
    pub leader: Option<Leader>,
    pub last_beacon_emit: Option<f64>,
    /// Off-ramp this vehicle intends to take.
    pub exit_ramp: Option<usize>,
    pub spawn_time: f64,
    /// Externally scripted command, used by test harnesses to drive leaders.
    pub command_override: Option<f64>,
    /// Currently overlapping its leader (counted once per contact).
    pub in_collision: bool,
    /// Merging vehicle in the terminating lane alongside that this vehicle
    /// has decided to let in.
    pub yield_to: Option<VehicleId>,
    /// That merger as seen from here, refreshed every step.
    pub yield_leader: Option<Leader>,
}

impl VehicleState {
    pub fn is_cav(&self) -> bool {
        self.class == VehicleClass::Cav
    }

    pub fn link_alive_at(&self, t: f64, timeout: f64) -> bool {
        crate::comms::link_alive(&self.link, t, timeout)
    }
}
