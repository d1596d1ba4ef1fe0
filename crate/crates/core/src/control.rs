//! Longitudinal control laws and the CAV mode manager.
//!
//! Human drivers follow the Intelligent Driver Model. Connected vehicles run
//! a linear sensor-only ACC law, or the Ploeg CACC law when a fresh beacon
//! from a connected predecessor is available. CAV commands pass through a
//! first-order actuator lag before they become actual acceleration.
//!
//! Every function here is pure; engine state lives in [`crate::sim`].

use serde::{Deserialize, Serialize};

use crate::error::ControlError;

/// Vehicle equipment class. Fixed for the lifetime of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Hdv,
    Cav,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Hdv => "HDV",
            VehicleClass::Cav => "CAV",
        }
    }
}

/// Active car-following law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeKind {
    Idm,
    Acc,
    Cacc,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Idm => "IDM",
            ModeKind::Acc => "ACC",
            ModeKind::Cacc => "CACC",
        }
    }
}

/// Active law plus the time headway the spacing policy should settle to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMode {
    pub kind: ModeKind,
    pub target_headway: f64,
}

/// Human driver (IDM) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdvParams {
    /// Mean desired speed as a multiple of the edge speed limit.
    pub v0_mean: f64,
    /// Standard deviation of the per-vehicle speed factor.
    pub speed_dev: f64,
    /// Desired time headway [s].
    pub time_headway: f64,
    /// Minimum standstill gap [m].
    pub min_gap: f64,
    pub max_accel: f64,
    /// Comfortable deceleration used inside the IDM interaction term.
    pub comfort_decel: f64,
    /// Nominal deceleration bound for controller output.
    pub decel_max: f64,
    pub emerg_decel: f64,
    /// IDM free-road exponent.
    pub delta: f64,
}

impl Default for HdvParams {
    fn default() -> Self {
        Self {
            v0_mean: 1.0,
            speed_dev: 0.1,
            time_headway: 1.5,
            min_gap: 2.5,
            max_accel: 1.5,
            comfort_decel: 1.5,
            decel_max: 7.5,
            emerg_decel: 9.0,
            delta: 4.0,
        }
    }
}

/// CAV controller and powertrain parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavParams {
    pub v0_mean: f64,
    pub speed_dev: f64,
    /// Headway in CACC mode [s].
    pub h_cacc: f64,
    /// Headway in ACC mode behind a human driver [s].
    pub h_acc: f64,
    /// Headway in ACC mode behind a CAV whose link is dead [s].
    pub h_acc_degraded: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub decel_max: f64,
    pub emerg_decel: f64,
    /// ACC spacing-error gain [1/s²].
    pub k1_acc: f64,
    /// ACC speed-error gain [1/s].
    pub k2_acc: f64,
    /// CACC distance gain [1/s²].
    pub kp: f64,
    /// CACC speed gain [1/s].
    pub kd: f64,
    /// Actuator lag time constant [s].
    pub tau: f64,
    /// CACC standstill spacing [m].
    pub r_standstill: f64,
    /// Speed-tracking gain used when no predecessor is sensed [1/s].
    pub k_cruise: f64,
    /// Relaxation rate of the active headway towards its target [1/s].
    pub headway_rate: f64,
}

impl Default for CavParams {
    fn default() -> Self {
        Self {
            v0_mean: 1.0,
            speed_dev: 0.05,
            h_cacc: 0.6,
            h_acc: 1.1,
            h_acc_degraded: 1.1,
            min_gap: 1.5,
            max_accel: 2.9,
            decel_max: 7.5,
            emerg_decel: 9.0,
            k1_acc: 0.23,
            k2_acc: 0.07,
            kp: 0.2,
            kd: 0.7,
            tau: 0.5,
            r_standstill: 1.5,
            k_cruise: 0.4,
            headway_rate: 1.0,
        }
    }
}

/// Per-class controller parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub hdv: HdvParams,
    pub cav: CavParams,
    pub vehicle_length: f64,
    /// Closing-rate deceleration above which the kinematic safety bound
    /// overrides the car-following law [m/s²].
    pub safety_trigger_decel: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            hdv: HdvParams::default(),
            cav: CavParams::default(),
            vehicle_length: 5.0,
            safety_trigger_decel: 3.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), String> {
        let h = &self.hdv;
        let c = &self.cav;
        let positive = [
            ("control.hdv.v0_mean", h.v0_mean),
            ("control.hdv.time_headway", h.time_headway),
            ("control.hdv.min_gap", h.min_gap),
            ("control.hdv.max_accel", h.max_accel),
            ("control.hdv.comfort_decel", h.comfort_decel),
            ("control.hdv.decel_max", h.decel_max),
            ("control.hdv.emerg_decel", h.emerg_decel),
            ("control.hdv.delta", h.delta),
            ("control.cav.v0_mean", c.v0_mean),
            ("control.cav.h_cacc", c.h_cacc),
            ("control.cav.h_acc", c.h_acc),
            ("control.cav.h_acc_degraded", c.h_acc_degraded),
            ("control.cav.min_gap", c.min_gap),
            ("control.cav.max_accel", c.max_accel),
            ("control.cav.decel_max", c.decel_max),
            ("control.cav.emerg_decel", c.emerg_decel),
            ("control.cav.k1_acc", c.k1_acc),
            ("control.cav.k2_acc", c.k2_acc),
            ("control.cav.kp", c.kp),
            ("control.cav.kd", c.kd),
            ("control.cav.tau", c.tau),
            ("control.cav.r_standstill", c.r_standstill),
            ("control.cav.k_cruise", c.k_cruise),
            ("control.cav.headway_rate", c.headway_rate),
            ("control.vehicle_length", self.vehicle_length),
            ("control.safety_trigger_decel", self.safety_trigger_decel),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("{name} must be finite and > 0 (got {value})"));
            }
        }
        for (name, value) in [("control.hdv.speed_dev", h.speed_dev), ("control.cav.speed_dev", c.speed_dev)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(format!("{name} must be finite and >= 0 (got {value})"));
            }
        }
        if h.emerg_decel < h.decel_max {
            return Err("control.hdv.emerg_decel must be >= control.hdv.decel_max".into());
        }
        if c.emerg_decel < c.decel_max {
            return Err("control.cav.emerg_decel must be >= control.cav.decel_max".into());
        }
        Ok(())
    }

    pub fn limits(&self, class: VehicleClass) -> AccelLimits {
        match class {
            VehicleClass::Hdv => AccelLimits {
                max_accel: self.hdv.max_accel,
                decel_max: self.hdv.decel_max,
                emerg_decel: self.hdv.emerg_decel,
            },
            VehicleClass::Cav => AccelLimits {
                max_accel: self.cav.max_accel,
                decel_max: self.cav.decel_max,
                emerg_decel: self.cav.emerg_decel,
            },
        }
    }

    pub fn min_gap(&self, class: VehicleClass) -> f64 {
        match class {
            VehicleClass::Hdv => self.hdv.min_gap,
            VehicleClass::Cav => self.cav.min_gap,
        }
    }
}

/// Acceleration bounds of one vehicle class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelLimits {
    pub max_accel: f64,
    /// Nominal controller output is never below `-decel_max`.
    pub decel_max: f64,
    /// Hard physical bound, reached only by emergency braking.
    pub emerg_decel: f64,
}

impl AccelLimits {
    pub fn clamp_nominal(&self, a: f64) -> f64 {
        a.clamp(-self.decel_max, self.max_accel)
    }

    pub fn clamp_physical(&self, a: f64) -> f64 {
        a.clamp(-self.emerg_decel, self.max_accel)
    }
}

/// What the ego vehicle knows about the object ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderObservation {
    /// Leader rear bumper minus ego front bumper [m].
    pub gap: f64,
    pub leader_speed: f64,
    /// Predecessor's broadcast acceleration, present only from a fresh beacon.
    pub leader_accel_feedforward: Option<f64>,
}

impl LeaderObservation {
    pub fn sensed(gap: f64, leader_speed: f64) -> Self {
        Self { gap, leader_speed, leader_accel_feedforward: None }
    }
}

/// Controller output. `emergency` marks a gap ≤ 0 collision-risk response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub accel: f64,
    pub emergency: bool,
}

impl ControlOutput {
    fn nominal(accel: f64) -> Self {
        Self { accel, emergency: false }
    }

    fn emergency(limits: &AccelLimits) -> Self {
        Self { accel: -limits.emerg_decel, emergency: true }
    }
}

/// Internal state of the Ploeg controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccState {
    /// Filtered desired acceleration [m/s²].
    pub u: f64,
    /// Smoothed active headway [s].
    pub h_current: f64,
}

fn check_finite(name: &'static str, value: f64) -> Result<(), ControlError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ControlError::NonFinite(name))
    }
}

fn check_obs(obs: &LeaderObservation) -> Result<(), ControlError> {
    check_finite("gap", obs.gap)?;
    check_finite("leader_speed", obs.leader_speed)?;
    if let Some(ff) = obs.leader_accel_feedforward {
        check_finite("leader_accel_feedforward", ff)?;
    }
    Ok(())
}

/// Intelligent Driver Model acceleration. `obs = None` is the free road.
pub fn idm_accel(
    v: f64,
    v0: f64,
    obs: Option<&LeaderObservation>,
    cfg: &HdvParams,
) -> Result<ControlOutput, ControlError> {
    check_finite("v", v)?;
    check_finite("v0", v0)?;
    if v0 <= 0.0 {
        return Err(ControlError::NonPositive("v0"));
    }
    let limits = AccelLimits {
        max_accel: cfg.max_accel,
        decel_max: cfg.decel_max,
        emerg_decel: cfg.emerg_decel,
    };
    let free = 1.0 - (v / v0).powf(cfg.delta);
    let interaction = match obs {
        None => 0.0,
        Some(obs) => {
            check_obs(obs)?;
            if obs.gap <= 0.0 {
                return Ok(ControlOutput::emergency(&limits));
            }
            let dv = v - obs.leader_speed;
            // The dynamic part of the desired gap is floored at zero so a much
            // faster leader cannot shrink s* below the standstill gap.
            let dynamic = v * cfg.time_headway
                + v * dv / (2.0 * (cfg.max_accel * cfg.comfort_decel).sqrt());
            let s_star = cfg.min_gap + dynamic.max(0.0);
            (s_star / obs.gap).powi(2)
        }
    };
    let a = cfg.max_accel * (free - interaction);
    Ok(ControlOutput::nominal(limits.clamp_nominal(a)))
}

/// Linear ACC law `k1·e + k2·ė` with constant-time-headway spacing error.
pub fn acc_accel(
    v: f64,
    obs: &LeaderObservation,
    h: f64,
    cfg: &CavParams,
) -> Result<ControlOutput, ControlError> {
    check_finite("v", v)?;
    check_finite("h", h)?;
    check_obs(obs)?;
    let limits = cav_limits(cfg);
    if obs.gap <= 0.0 {
        return Ok(ControlOutput::emergency(&limits));
    }
    let e = obs.gap - cfg.min_gap - h * v;
    let e_dot = obs.leader_speed - v;
    let a = cfg.k1_acc * e + cfg.k2_acc * e_dot;
    Ok(ControlOutput::nominal(limits.clamp_nominal(a)))
}

/// Proportional speed tracking for a CAV with nothing sensed ahead.
pub fn cruise_accel(v: f64, v0: f64, cfg: &CavParams) -> f64 {
    cav_limits(cfg).clamp_nominal(cfg.k_cruise * (v0 - v))
}

fn cav_limits(cfg: &CavParams) -> AccelLimits {
    AccelLimits {
        max_accel: cfg.max_accel,
        decel_max: cfg.decel_max,
        emerg_decel: cfg.emerg_decel,
    }
}

/// One explicit Euler step of the Ploeg CACC filter
/// `h·u̇ = −u + kp·e + kd·ė + u_ff`, with `e = gap − (r + h·v)` and
/// `ė = v_leader − v − h·a`.
///
/// `a` is the ego's actual acceleration. The feedforward must be present.
pub fn cacc_step(
    state: CaccState,
    v: f64,
    a: f64,
    obs: &LeaderObservation,
    h: f64,
    dt: f64,
    cfg: &CavParams,
) -> Result<(ControlOutput, CaccState), ControlError> {
    check_finite("v", v)?;
    check_finite("a", a)?;
    check_finite("u", state.u)?;
    check_obs(obs)?;
    if h <= 0.0 {
        return Err(ControlError::NonPositive("h"));
    }
    if dt <= 0.0 {
        return Err(ControlError::NonPositive("dt"));
    }
    let u_ff = obs.leader_accel_feedforward.ok_or(ControlError::MissingFeedforward)?;
    let limits = cav_limits(cfg);
    if obs.gap <= 0.0 {
        let out = ControlOutput::emergency(&limits);
        return Ok((out, CaccState { u: limits.clamp_nominal(state.u), ..state }));
    }
    let e = obs.gap - (cfg.r_standstill + h * v);
    let e_dot = obs.leader_speed - v - h * a;
    let u_dot = (-state.u + cfg.kp * e + cfg.kd * e_dot + u_ff) / h;
    let u = limits.clamp_nominal(state.u + dt * u_dot);
    Ok((ControlOutput::nominal(u), CaccState { u, ..state }))
}

/// First-order actuator lag `ȧ = (u_cmd − a)/τ`, one explicit Euler step.
pub fn actuator_step(a: f64, u_cmd: f64, tau: f64, dt: f64, limits: &AccelLimits) -> f64 {
    debug_assert!(tau > 0.0 && dt > 0.0);
    limits.clamp_physical(a + dt * (u_cmd - a) / tau)
}

/// Kinematic collision backstop applied on top of every car-following law.
///
/// Estimates the constant deceleration needed to avoid closing the gap below
/// `margin`, both against the current closing speed and against the leader
/// braking to a stop at its present rate. The gap is shortened by the
/// distance closed during the actuator lag. Returns a command only when the
/// requirement exceeds `trigger`, or full braking (`-∞`, to be clamped by
/// the caller) when the shortened gap is already used up while closing.
pub fn safety_bound(v: f64, leader: &LeaderObservation, leader_accel: f64, lag: f64, margin: f64, trigger: f64) -> Option<f64> {
    let closing = v - leader.leader_speed;
    let gap = leader.gap - margin - closing.max(0.0) * lag;
    if gap <= 0.0 && closing > 0.0 {
        return Some(f64::NEG_INFINITY);
    }
    let rel = if closing > 0.0 { closing * closing / (2.0 * gap.max(0.1)) } else { 0.0 };
    let stop = if leader_accel < -0.5 {
        let leader_stop = leader.leader_speed * leader.leader_speed / (2.0 * -leader_accel);
        v * v / (2.0 * (gap + leader_stop).max(0.1))
    } else {
        0.0
    };
    let need = rel.max(stop);
    (need > trigger).then_some(-need)
}

/// Maps ego class, predecessor class and link liveness to the active law.
///
/// `pred_class = None` means no vehicle is sensed ahead; the CAV then runs
/// ACC (free-road cruise when nothing at all is ahead).
pub fn select_mode(
    ego: VehicleClass,
    pred_class: Option<VehicleClass>,
    link_alive: bool,
    cfg: &ControlConfig,
) -> ControlMode {
    match (ego, pred_class) {
        (VehicleClass::Hdv, _) => ControlMode { kind: ModeKind::Idm, target_headway: cfg.hdv.time_headway },
        (VehicleClass::Cav, Some(VehicleClass::Cav)) if link_alive => {
            ControlMode { kind: ModeKind::Cacc, target_headway: cfg.cav.h_cacc }
        }
        (VehicleClass::Cav, Some(VehicleClass::Cav)) => {
            ControlMode { kind: ModeKind::Acc, target_headway: cfg.cav.h_acc_degraded }
        }
        (VehicleClass::Cav, _) => ControlMode { kind: ModeKind::Acc, target_headway: cfg.cav.h_acc },
    }
}

/// Relaxes the active headway towards its target by `rate·dt` of the
/// remaining difference, snapping once within 1e-6.
pub fn headway_blend(h_current: f64, h_target: f64, rate: f64, dt: f64) -> f64 {
    let step = (rate * dt).min(1.0);
    let next = h_current + step * (h_target - h_current);
    if (h_target - next).abs() < 1e-6 {
        h_target
    } else {
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hdv() -> HdvParams {
        HdvParams::default()
    }

    fn cav() -> CavParams {
        CavParams::default()
    }

    /// Independent root finder for the IDM equilibrium gap.
    fn bisect_equilibrium_gap(v: f64, v0: f64, p: &HdvParams) -> f64 {
        let s_star = p.min_gap + v * p.time_headway;
        let residual = |s: f64| 1.0 - (v / v0).powf(p.delta) - (s_star / s).powi(2);
        let (mut lo, mut hi) = (1e-3, 1e6);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn idm_standing_start_uses_max_accel() {
        let out = idm_accel(0.0, 27.0, None, &hdv()).unwrap();
        assert_eq!(out.accel, 1.5);
        assert!(!out.emergency);
    }

    #[test]
    fn idm_free_flow_equilibrium() {
        let out = idm_accel(27.0, 27.0, None, &hdv()).unwrap();
        assert!(out.accel.abs() < 1e-12);
    }

    #[test]
    fn idm_equilibrium_gap_matches_bisection() {
        let p = hdv();
        let v0 = 100.0 / 3.6;
        let s_eq = bisect_equilibrium_gap(20.0, v0, &p);
        let obs = LeaderObservation::sensed(s_eq, 20.0);
        let a = idm_accel(20.0, v0, Some(&obs), &p).unwrap().accel;
        assert!(a.abs() < 1e-9, "residual {a}");
    }

    #[test]
    fn idm_nonpositive_gap_brakes_hard() {
        let obs = LeaderObservation::sensed(0.0, 10.0);
        let out = idm_accel(10.0, 27.0, Some(&obs), &hdv()).unwrap();
        assert_eq!(out.accel, -9.0);
        assert!(out.emergency);
    }

    #[test]
    fn idm_rejects_nan() {
        assert!(matches!(idm_accel(f64::NAN, 27.0, None, &hdv()), Err(ControlError::NonFinite("v"))));
        let obs = LeaderObservation::sensed(f64::NAN, 10.0);
        assert!(idm_accel(10.0, 27.0, Some(&obs), &hdv()).is_err());
    }

    #[test]
    fn acc_equilibrium_is_zero() {
        let p = cav();
        let v = 22.0;
        let obs = LeaderObservation::sensed(p.min_gap + 1.1 * v, v);
        let a = acc_accel(v, &obs, 1.1, &p).unwrap().accel;
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn acc_unit_spacing_error() {
        let p = cav();
        let v = 20.0;
        let obs = LeaderObservation::sensed(p.min_gap + 1.1 * v + 1.0, v);
        let a = acc_accel(v, &obs, 1.1, &p).unwrap().accel;
        assert!((a - 0.23).abs() < 1e-12);
    }

    #[test]
    fn acc_large_gap_saturates() {
        let obs = LeaderObservation::sensed(500.0, 20.0);
        let a = acc_accel(20.0, &obs, 1.1, &cav()).unwrap().accel;
        assert_eq!(a, 2.9);
    }

    #[test]
    fn acc_negative_gap_is_emergency() {
        let obs = LeaderObservation::sensed(-0.5, 20.0);
        let out = acc_accel(20.0, &obs, 1.1, &cav()).unwrap();
        assert!(out.emergency);
        assert_eq!(out.accel, -9.0);
    }

    fn cacc_obs(p: &CavParams, v: f64, h: f64, extra_gap: f64, ff: f64) -> LeaderObservation {
        LeaderObservation {
            gap: p.r_standstill + h * v + extra_gap,
            leader_speed: v,
            leader_accel_feedforward: Some(ff),
        }
    }

    #[test]
    fn cacc_equilibrium_is_stationary() {
        let p = cav();
        let state = CaccState { u: 0.0, h_current: 0.6 };
        let (out, next) = cacc_step(state, 25.0, 0.0, &cacc_obs(&p, 25.0, 0.6, 0.0, 0.0), 0.6, 0.1, &p).unwrap();
        assert!(out.accel.abs() < 1e-12);
        assert_eq!(next, state);
    }

    #[test]
    fn cacc_unit_error_single_step() {
        let p = cav();
        let state = CaccState { u: 0.0, h_current: 0.6 };
        let (out, next) = cacc_step(state, 25.0, 0.0, &cacc_obs(&p, 25.0, 0.6, 1.0, 0.0), 0.6, 0.1, &p).unwrap();
        assert!((out.accel - 0.2 / 0.6 * 0.1).abs() < 1e-12);
        assert!((next.u - 0.033333).abs() < 1e-5);
    }

    #[test]
    fn cacc_feedforward_fixed_point() {
        let p = cav();
        let state = CaccState { u: 1.0, h_current: 0.6 };
        // ė = 0 requires v_leader − v = h·a, with a = u = 1.
        let obs = LeaderObservation {
            gap: p.r_standstill + 0.6 * 25.0,
            leader_speed: 25.0 + 0.6,
            leader_accel_feedforward: Some(1.0),
        };
        let (out, next) = cacc_step(state, 25.0, 1.0, &obs, 0.6, 0.1, &p).unwrap();
        assert!((out.accel - 1.0).abs() < 1e-12);
        assert!((next.u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cacc_without_feedforward_is_contract_violation() {
        let p = cav();
        let obs = LeaderObservation::sensed(20.0, 20.0);
        let state = CaccState { u: 0.0, h_current: 0.6 };
        assert_eq!(cacc_step(state, 20.0, 0.0, &obs, 0.6, 0.1, &p), Err(ControlError::MissingFeedforward));
    }

    #[test]
    fn safety_bound_quiet_at_equilibrium() {
        let obs = LeaderObservation::sensed(16.5, 25.0);
        assert_eq!(safety_bound(25.0, &obs, 0.0, 0.5, 0.75, 3.0), None);
    }

    #[test]
    fn safety_bound_brakes_fully_when_creeping_into_margin() {
        let obs = LeaderObservation::sensed(0.5, 0.05);
        assert_eq!(safety_bound(0.3, &obs, 0.0, 0.5, 0.75, 3.0), Some(f64::NEG_INFINITY));
        // same gap, opening: no intervention
        assert_eq!(safety_bound(0.01, &obs, 0.0, 0.5, 0.75, 3.0), None);
    }

    #[test]
    fn safety_bound_brakes_for_stopped_obstacle() {
        let obs = LeaderObservation::sensed(40.0, 0.0);
        let b = safety_bound(25.0, &obs, 0.0, 0.0, 0.0, 3.0).unwrap();
        assert!((b + 625.0 / 80.0).abs() < 1e-12);
    }

    fn cav_limits_default() -> AccelLimits {
        ControlConfig::default().limits(VehicleClass::Cav)
    }

    #[test]
    fn actuator_fixed_point_and_single_step() {
        let l = cav_limits_default();
        assert_eq!(actuator_step(0.7, 0.7, 0.5, 0.1, &l), 0.7);
        assert!((actuator_step(0.0, 1.0, 0.5, 0.1, &l) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn actuator_fine_steps_match_exponential() {
        let l = cav_limits_default();
        let mut a = 0.0;
        for _ in 0..5000 {
            a = actuator_step(a, 1.0, 0.5, 1e-4, &l);
        }
        assert!((a - 0.632).abs() < 1e-3, "a(τ) = {a}");
    }

    #[test]
    fn actuator_clamps_to_class_bounds() {
        let l = cav_limits_default();
        assert_eq!(actuator_step(2.9, 50.0, 0.5, 0.1, &l), 2.9);
        assert_eq!(actuator_step(-9.0, -50.0, 0.5, 0.1, &l), -9.0);
    }

    #[test]
    fn mode_table() {
        let cfg = ControlConfig::default();
        let m = select_mode(VehicleClass::Cav, Some(VehicleClass::Cav), true, &cfg);
        assert_eq!(m, ControlMode { kind: ModeKind::Cacc, target_headway: 0.6 });
        let m = select_mode(VehicleClass::Cav, Some(VehicleClass::Cav), false, &cfg);
        assert_eq!(m, ControlMode { kind: ModeKind::Acc, target_headway: 1.1 });
        for alive in [false, true] {
            let m = select_mode(VehicleClass::Cav, Some(VehicleClass::Hdv), alive, &cfg);
            assert_eq!(m, ControlMode { kind: ModeKind::Acc, target_headway: 1.1 });
            let m = select_mode(VehicleClass::Cav, None, alive, &cfg);
            assert_eq!(m, ControlMode { kind: ModeKind::Acc, target_headway: 1.1 });
            for pred in [None, Some(VehicleClass::Hdv), Some(VehicleClass::Cav)] {
                let m = select_mode(VehicleClass::Hdv, pred, alive, &cfg);
                assert_eq!(m, ControlMode { kind: ModeKind::Idm, target_headway: 1.5 });
            }
        }
    }

    #[test]
    fn headway_blend_steps() {
        assert_eq!(headway_blend(1.1, 1.1, 1.0, 0.1), 1.1);
        assert!((headway_blend(0.6, 1.1, 1.0, 0.1) - 0.65).abs() < 1e-12);
        let mut h = 0.6;
        let mut prev = h;
        // 0.5 · 0.9^n drops below the 1e-6 snap after 125 steps
        for _ in 0..125 {
            h = headway_blend(h, 1.1, 1.0, 0.1);
            assert!(h >= prev);
            prev = h;
        }
        assert_eq!(h, 1.1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn outputs_stay_in_physical_bounds(
                v in 0.0f64..60.0,
                gap in -10.0f64..500.0,
                vl in 0.0f64..60.0,
                ff in -9.0f64..3.0,
                u in -9.0f64..3.0,
                a in -9.0f64..3.0,
            ) {
                let cfg = ControlConfig::default();
                let obs = LeaderObservation { gap, leader_speed: vl, leader_accel_feedforward: Some(ff) };
                let hdv = idm_accel(v, 30.0, Some(&obs), &cfg.hdv).unwrap().accel;
                prop_assert!((-9.0..=1.5).contains(&hdv));
                let acc = acc_accel(v, &obs, 1.1, &cfg.cav).unwrap().accel;
                prop_assert!((-9.0..=2.9).contains(&acc));
                let (out, st) = cacc_step(CaccState { u, h_current: 0.6 }, v, a, &obs, 0.6, 0.1, &cfg.cav).unwrap();
                prop_assert!((-9.0..=2.9).contains(&out.accel));
                prop_assert!(st.u.abs() <= 9.0);
                let act = actuator_step(a, out.accel, 0.5, 0.1, &cfg.limits(VehicleClass::Cav));
                prop_assert!((-9.0..=2.9).contains(&act));
            }

            #[test]
            fn idm_equilibrium_residual(v in 0.5f64..27.0) {
                let p = HdvParams::default();
                let v0 = 100.0 / 3.6;
                let s_eq = bisect_equilibrium_gap(v, v0, &p);
                let obs = LeaderObservation::sensed(s_eq, v);
                let a = idm_accel(v, v0, Some(&obs), &p).unwrap().accel;
                prop_assert!(a.abs() < 1e-9);
            }

            #[test]
            fn actuator_converges_monotonically(a0 in -5.0f64..2.5, u in -5.0f64..2.5) {
                let l = ControlConfig::default().limits(VehicleClass::Cav);
                let mut a = a0;
                let mut dist = (u - a).abs();
                for _ in 0..200 {
                    a = actuator_step(a, u, 0.5, 0.01, &l);
                    let d = (u - a).abs();
                    prop_assert!(d <= dist + 1e-15);
                    dist = d;
                }
            }

            #[test]
            fn cacc_only_with_live_cav_link(alive: bool, pred in 0u8..3) {
                let cfg = ControlConfig::default();
                let pred = match pred { 0 => None, 1 => Some(VehicleClass::Hdv), _ => Some(VehicleClass::Cav) };
                let m = select_mode(VehicleClass::Cav, pred, alive, &cfg);
                prop_assert_eq!(m.kind == ModeKind::Cacc, alive && pred == Some(VehicleClass::Cav));
            }
        }
    }
}
