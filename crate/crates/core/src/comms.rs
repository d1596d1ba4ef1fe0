//! Periodic V2V beaconing over an abstract lossy broadcast channel.
//!
//! Losses are i.i.d. Bernoulli per (message, receiver) pair with a hard range
//! cutoff standing in for the radio stack. Each CAV tracks the freshness of
//! the link to its current predecessor; a stale link triggers degradation
//! from CACC to ACC in the mode manager.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::VehicleId;

/// Which acceleration a beacon advertises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeaconAccel {
    /// Controller output `u`, the feedforward the Ploeg law expects.
    Commanded,
    /// Actuator-lagged acceleration `a`.
    Actual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Packet error rate in [0, 1].
    pub per: f64,
    pub range_m: f64,
    pub beacon_period: f64,
    /// Link is dead once no beacon arrived for longer than this [s].
    pub timeout: f64,
    pub beacon_accel: BeaconAccel,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            per: 0.0,
            range_m: 500.0,
            beacon_period: 0.1,
            timeout: 0.5,
            beacon_accel: BeaconAccel::Commanded,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.per) {
            return Err(format!("channel.per must be in [0, 1] (got {})", self.per));
        }
        for (name, v) in [
            ("channel.range_m", self.range_m),
            ("channel.beacon_period", self.beacon_period),
            ("channel.timeout", self.timeout),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be finite and > 0 (got {v})"));
            }
        }
        Ok(())
    }
}

/// Broadcast payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconMsg {
    pub sender_id: VehicleId,
    pub t_sent: f64,
    /// Longitudinal corridor coordinate of the front bumper [m].
    pub position: f64,
    pub lane: usize,
    pub speed: f64,
    pub accel: f64,
}

/// Freshness record of the link to the current predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkState {
    pub pred_id: Option<VehicleId>,
    pub t_last_rx: Option<f64>,
    pub last_beacon: Option<BeaconMsg>,
}

impl LinkState {
    /// A fresh link to `pred_id` with nothing received yet.
    pub fn new(pred_id: Option<VehicleId>) -> Self {
        Self { pred_id, t_last_rx: None, last_beacon: None }
    }

    /// Resets the record if the predecessor changed.
    pub fn retarget(&mut self, pred_id: Option<VehicleId>) {
        if self.pred_id != pred_id {
            *self = LinkState::new(pred_id);
        }
    }
}

pub fn beacon_due(t: f64, last_emit: Option<f64>, period: f64) -> bool {
    match last_emit {
        None => true,
        Some(last) => t - last >= period - 1e-9,
    }
}

/// Decides whether `msg` reaches a receiver at `rx_position`.
///
/// Out-of-range receivers consume no randomness; in-range receivers consume
/// exactly one uniform draw.
pub fn channel_deliver<R: Rng + ?Sized>(msg: &BeaconMsg, rx_position: f64, cfg: &ChannelConfig, rng: &mut R) -> bool {
    if (rx_position - msg.position).abs() > cfg.range_m {
        return false;
    }
    rng.random::<f64>() >= cfg.per
}

/// Records a received beacon. Beacons from anyone but the tracked
/// predecessor are ignored.
pub fn link_on_rx(link: LinkState, msg: &BeaconMsg, t: f64) -> LinkState {
    if link.pred_id != Some(msg.sender_id) {
        return link;
    }
    LinkState { pred_id: link.pred_id, t_last_rx: Some(t), last_beacon: Some(*msg) }
}

pub fn link_alive(link: &LinkState, t: f64, timeout: f64) -> bool {
    match link.t_last_rx {
        Some(rx) => t - rx <= timeout + 1e-9,
        None => false,
    }
}
