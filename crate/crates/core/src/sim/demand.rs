use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::control::{ControlConfig, VehicleClass};

/// Mainline traffic demand. On-ramp demand lives on each ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    /// Mainline arrivals [veh/h].
    pub inflow: f64,
    /// Fraction of vehicles that are CAVs.
    pub mpr: f64,
    /// Arrivals stop after this simulation time [s].
    pub duration: f64,
}

impl Default for DemandSpec {
    fn default() -> Self {
        Self { inflow: 0.0, mpr: 0.0, duration: f64::MAX }
    }
}

impl DemandSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.inflow.is_finite() && self.inflow >= 0.0) {
            return Err(format!("demand.inflow must be >= 0 (got {})", self.inflow));
        }
        if !(0.0..=1.0).contains(&self.mpr) {
            return Err(format!("demand.mpr must be in [0, 1] (got {})", self.mpr));
        }
        if !(self.duration >= 0.0) {
            return Err("demand.duration must be >= 0".into());
        }
        Ok(())
    }
}

/// A vehicle waiting at an entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingVehicle {
    pub class: VehicleClass,
    pub speed_factor: f64,
    pub exit_ramp: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Mainline,
    Ramp(usize),
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    /// [veh/h]
    pub inflow: f64,
    pub queue: VecDeque<PendingVehicle>,
}

/// Truncated-normal desired-speed factor, resampled into [0.8, 1.2].
/// Values above 1 are capped so that nobody exceeds the posted limit.
pub fn sample_speed_factor<R: Rng + ?Sized>(dev: f64, mean: f64, rng: &mut R) -> f64 {
    if dev <= 0.0 {
        return mean.clamp(0.8, 1.2).min(1.0);
    }
    let normal = Normal::new(mean, dev).expect("validated speed deviation");
    loop {
        let f = normal.sample(rng);
        if (0.8..=1.2).contains(&f) {
            return f.min(1.0);
        }
    }
}

/// Poisson arrival count for one step.
pub fn sample_arrivals<R: Rng + ?Sized>(inflow: f64, dt: f64, rng: &mut R) -> u64 {
    let lambda = inflow * dt / 3600.0;
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as u64
}

/// Draws class, desired speed and exit choice for one arrival.
pub fn sample_vehicle<R: Rng + ?Sized>(
    mpr: f64,
    control: &ControlConfig,
    exits: &[(usize, f64)],
    rng: &mut R,
) -> PendingVehicle {
    let class = if rng.random::<f64>() < mpr { VehicleClass::Cav } else { VehicleClass::Hdv };
    let speed_factor = match class {
        VehicleClass::Hdv => sample_speed_factor(control.hdv.speed_dev, control.hdv.v0_mean, rng),
        VehicleClass::Cav => sample_speed_factor(control.cav.speed_dev, control.cav.v0_mean, rng),
    };
    let mut exit_ramp = None;
    for &(ramp, fraction) in exits {
        if exit_ramp.is_none() && fraction > 0.0 && rng.random::<f64>() < fraction {
            exit_ramp = Some(ramp);
        }
    }
    PendingVehicle { class, speed_factor, exit_ramp }
}
