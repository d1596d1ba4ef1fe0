#![allow(dead_code)]

use std::collections::HashMap;
use std::io;
use std::sync::{Arc, Mutex};

use cavsim::sim::trajectory::{TrajectoryRow, TrajectorySink};
use cavsim::{ScenarioConfig, VehicleClass};

pub fn quiet(mut cfg: ScenarioConfig) -> ScenarioConfig {
    cfg.output.progress = false;
    cfg
}

/// Counts distinct vehicles per class from a trajectory stream.
#[derive(Default)]
pub struct ClassCounter {
    seen: HashMap<u64, VehicleClass>,
}

impl ClassCounter {
    pub fn shared() -> Arc<Mutex<Self>> {
        Arc::new(Mutex::new(Self::default()))
    }

    pub fn total(&self) -> usize {
        self.seen.len()
    }

    pub fn cavs(&self) -> usize {
        self.seen.values().filter(|c| **c == VehicleClass::Cav).count()
    }
}

impl TrajectorySink for ClassCounter {
    fn row(&mut self, row: &TrajectoryRow) -> io::Result<()> {
        self.seen.insert(row.id, row.class);
        Ok(())
    }
}
