//! Simplified incentive/safety lane-change rule.
//!
//! A change is considered only if it is safe for both the changer and the
//! new follower (required deceleration within `safe_decel`, gaps above the
//! standstill gap). Among safe targets the vehicle moves when the weighted
//! anticipated speed gain, a mandatory lane-leave, or a cooperative yield to
//! a merging vehicle beats the threshold. Ties stay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{idm_accel, ControlConfig, HdvParams, LeaderObservation, VehicleClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChangeConfig {
    /// Weight on speed-gain and mandatory changes (1.0 = default eagerness).
    pub lc_strategic: f64,
    /// Probability weight of yielding to a merging vehicle.
    pub lc_cooperative: f64,
    /// Time between two decisions of the same vehicle [s].
    pub decision_interval: f64,
    /// Incentive threshold [m/s].
    pub speed_gain_threshold: f64,
    /// Distance over which leaders shape the anticipated lane speed [m].
    pub lookahead: f64,
    /// A terminating lane or a pending exit becomes mandatory within
    /// `mandatory_horizon · lc_strategic` metres [m].
    pub mandatory_horizon: f64,
    /// Incentive credited to a cooperative yield [m/s].
    pub cooperative_gain: f64,
    /// Longitudinal window in which a merging vehicle triggers yielding [m].
    pub cooperative_range: f64,
    /// Largest deceleration a change may impose on the changer or the new
    /// follower [m/s²].
    pub safe_decel: f64,
    /// Largest deceleration a vehicle accepts while yielding to a merger
    /// before it gives up the yield [m/s²].
    pub yield_decel: f64,
}

impl Default for LaneChangeConfig {
    fn default() -> Self {
        Self {
            lc_strategic: 0.5,
            lc_cooperative: 0.5,
            decision_interval: 1.0,
            speed_gain_threshold: 1.0,
            lookahead: 100.0,
            mandatory_horizon: 1000.0,
            cooperative_gain: 2.0,
            cooperative_range: 50.0,
            safe_decel: 4.0,
            yield_decel: 6.0,
        }
    }
}

impl LaneChangeConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lane_change.lc_strategic", self.lc_strategic),
            ("lane_change.decision_interval", self.decision_interval),
            ("lane_change.speed_gain_threshold", self.speed_gain_threshold),
            ("lane_change.lookahead", self.lookahead),
            ("lane_change.mandatory_horizon", self.mandatory_horizon),
            ("lane_change.cooperative_range", self.cooperative_range),
            ("lane_change.safe_decel", self.safe_decel),
            ("lane_change.yield_decel", self.yield_decel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be finite and > 0 (got {v})"));
            }
        }
        if !(0.0..=1.0).contains(&self.lc_cooperative) {
            return Err("lane_change.lc_cooperative must be in [0, 1]".into());
        }
        if !(self.cooperative_gain.is_finite() && self.cooperative_gain >= 0.0) {
            return Err("lane_change.cooperative_gain must be >= 0".into());
        }
        Ok(())
    }
}

/// A vehicle as seen by a lane-change decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Driver {
    pub class: VehicleClass,
    pub v: f64,
    pub v0: f64,
    /// Active headway used for the ACC safety estimate of a CAV.
    pub headway: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ahead {
    pub gap: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Behind {
    pub gap: f64,
    pub driver: Driver,
}

/// Neighbourhood of the ego in one candidate lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLane {
    pub lane: usize,
    pub leader: Option<Ahead>,
    pub follower: Option<Behind>,
    /// The ego must leave its lane towards this side.
    pub mandatory: bool,
    /// Moving here makes room for a merging vehicle.
    pub yields_to_merger: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeInputs {
    pub ego: Driver,
    pub current_leader: Option<Ahead>,
    pub left: Option<TargetLane>,
    pub right: Option<TargetLane>,
}

/// IDM estimate of the acceleration a driver would need behind `ahead`.
/// CAVs are evaluated with their own headway, standstill gap and
/// acceleration; the linear ACC law is too gentle at short gaps to judge a
/// cut-in.
fn accel_behind(driver: &Driver, ahead: &Ahead, cfg: &ControlConfig) -> f64 {
    let obs = LeaderObservation::sensed(ahead.gap, ahead.speed);
    let params = match driver.class {
        VehicleClass::Hdv => cfg.hdv.clone(),
        VehicleClass::Cav => HdvParams {
            time_headway: driver.headway,
            min_gap: cfg.cav.min_gap,
            max_accel: cfg.cav.max_accel,
            ..cfg.hdv.clone()
        },
    };
    match idm_accel(driver.v, driver.v0, Some(&obs), &params) {
        Ok(o) if !o.emergency => o.accel,
        _ => f64::NEG_INFINITY,
    }
}

/// Safety criterion for moving `ego` into `target`: both gaps above the
/// standstill gap and neither the ego nor the new follower needing more
/// than `lc.safe_decel`.
pub fn is_safe(ego: &Driver, target: &TargetLane, cfg: &ControlConfig, lc: &LaneChangeConfig) -> bool {
    if let Some(leader) = &target.leader {
        if leader.gap <= cfg.min_gap(ego.class) {
            return false;
        }
        if accel_behind(ego, leader, cfg) < -lc.safe_decel {
            return false;
        }
    }
    if let Some(f) = &target.follower {
        if f.gap <= cfg.min_gap(f.driver.class) {
            return false;
        }
        let ego_ahead = Ahead { gap: f.gap, speed: ego.v };
        if accel_behind(&f.driver, &ego_ahead, cfg) < -lc.safe_decel {
            return false;
        }
    }
    true
}

fn anticipated_speed(ego: &Driver, leader: Option<&Ahead>, lookahead: f64) -> f64 {
    match leader {
        Some(l) if l.gap < lookahead => l.speed.min(ego.v0),
        _ => ego.v0,
    }
}

/// Returns the lane to move to, or `None` to stay.
pub fn lane_change_decide<R: Rng + ?Sized>(
    inputs: &LaneChangeInputs,
    cfg: &ControlConfig,
    lc: &LaneChangeConfig,
    rng: &mut R,
) -> Option<usize> {
    let here = anticipated_speed(&inputs.ego, inputs.current_leader.as_ref(), lc.lookahead);
    let must_leave = [inputs.left, inputs.right].iter().flatten().any(|t| t.mandatory);
    let mut best: Option<(f64, usize)> = None;
    for target in [inputs.left, inputs.right].into_iter().flatten() {
        if must_leave && !target.mandatory {
            continue;
        }
        if !is_safe(&inputs.ego, &target, cfg, lc) {
            continue;
        }
        let there = anticipated_speed(&inputs.ego, target.leader.as_ref(), lc.lookahead);
        let mut incentive = lc.lc_strategic * (there - here);
        if target.mandatory {
            incentive = incentive.max(0.0) + lc.speed_gain_threshold + 1.0;
        }
        if target.yields_to_merger && rng.random::<f64>() < lc.lc_cooperative {
            incentive += lc.cooperative_gain;
        }
        if incentive > lc.speed_gain_threshold && best.is_none_or(|(b, _)| incentive > b) {
            best = Some((incentive, target.lane));
        }
    }
    best.map(|(_, lane)| lane)
}
