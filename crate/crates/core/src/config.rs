//! Scenario and batch configuration, stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comms::ChannelConfig;
use crate::control::ControlConfig;
use crate::error::SimError;
use crate::sim::demand::DemandSpec;
use crate::sim::lanechange::LaneChangeConfig;
use crate::sim::network::RoadNetwork;

/// Mainline demand of the default corridor [veh/h]. Together with the
/// 1000 veh/h on-ramp it keeps the all-human merge in breakdown for the
/// whole measurement window (baseline RCI close to 1).
pub const DEFAULT_MAINLINE_INFLOW: f64 = 6900.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    pub out_dir: PathBuf,
    pub trajectories: bool,
    /// Abort the run at the first collision instead of counting it.
    pub abort_on_collision: bool,
    /// Progress line on stderr every simulated minute.
    pub progress: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), trajectories: false, abort_on_collision: false, progress: true }
    }
}

/// One (MPR, PER) cell of a batch, both as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub mpr: f64,
    pub per: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchOptions {
    pub grid: Vec<GridCell>,
    pub replications: u32,
    pub parallelism: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { grid: default_grid(), replications: 3, parallelism: 1 }
    }
}

/// Baseline plus {20, 40, 70}% penetration at 0 and 70% packet loss.
pub fn default_grid() -> Vec<GridCell> {
    let mut grid = vec![GridCell { mpr: 0.0, per: 0.0 }];
    for mpr in [0.2, 0.4, 0.7] {
        for per in [0.0, 0.7] {
            grid.push(GridCell { mpr, per });
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Step length [s].
    pub dt: f64,
    /// Total simulated time including warm-up [s].
    pub duration: f64,
    /// Initial interval excluded from metrics [s].
    pub warmup: f64,
    pub metrics_interval: f64,
    /// Radar range for predecessor detection [m].
    pub sensing_range: f64,
    pub max_spawn_queue: usize,
    pub network: RoadNetwork,
    pub demand: DemandSpec,
    pub control: ControlConfig,
    pub channel: ChannelConfig,
    pub lane_change: LaneChangeConfig,
    pub output: OutputOptions,
    #[serde(default)]
    pub batch: BatchOptions,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dt: 0.1,
            duration: 2100.0,
            warmup: 300.0,
            metrics_interval: 60.0,
            sensing_range: 300.0,
            max_spawn_queue: 1000,
            network: RoadNetwork::default_corridor(),
            demand: DemandSpec { inflow: DEFAULT_MAINLINE_INFLOW, mpr: 0.0, duration: 2100.0 },
            control: ControlConfig::default(),
            channel: ChannelConfig::default(),
            lane_change: LaneChangeConfig::default(),
            output: OutputOptions::default(),
            batch: BatchOptions::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.validate_inner().map_err(SimError::Config)
    }

    fn validate_inner(&self) -> Result<(), String> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(format!("dt must be > 0 (got {})", self.dt));
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return Err(format!("warmup must be >= 0 (got {})", self.warmup));
        }
        if !(self.duration.is_finite() && self.duration > self.warmup) {
            return Err(format!(
                "duration must exceed warmup (duration {}, warmup {})",
                self.duration, self.warmup
            ));
        }
        if !(self.metrics_interval.is_finite() && self.metrics_interval > 0.0) {
            return Err("metrics_interval must be > 0".into());
        }
        if !(self.sensing_range.is_finite() && self.sensing_range > 0.0) {
            return Err("sensing_range must be > 0".into());
        }
        if self.max_spawn_queue == 0 {
            return Err("max_spawn_queue must be >= 1".into());
        }
        self.network.validate()?;
        self.demand.validate()?;
        self.control.validate()?;
        self.channel.validate()?;
        self.lane_change.validate()?;
        if self.batch.grid.is_empty() {
            return Err("batch.grid must not be empty".into());
        }
        for (i, c) in self.batch.grid.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.mpr) || !(0.0..=1.0).contains(&c.per) {
                return Err(format!("batch.grid[{i}] mpr and per must be in [0, 1]"));
            }
        }
        if self.batch.replications == 0 {
            return Err("batch.replications must be >= 1".into());
        }
        if self.batch.parallelism == 0 {
            return Err("batch.parallelism must be >= 1".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Copy of this scenario at one grid cell.
    pub fn with_cell(&self, cell: GridCell, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.demand.mpr = cell.mpr;
        cfg.channel.per = cell.per;
        cfg.seed = seed;
        cfg
    }
}
