//! Mixed-traffic freeway simulation with connected automated vehicles.
//!
//! Human-driven vehicles follow IDM; CAVs run CACC while a beacon link to a
//! CAV predecessor is alive and fall back to ACC otherwise. A corridor run
//! reports per-edge travel rates and a relative congestion index.

pub mod batch;
pub mod comms;
pub mod config;
pub mod control;
pub mod error;
pub mod metrics;
pub mod sim;

pub use batch::{derive_seed, run_batch, run_scenario, BatchResult, RunOutputs};
pub use config::{GridCell, ScenarioConfig};
pub use control::{ControlMode, ModeKind, VehicleClass};
pub use error::{ControlError, MetricsError, SimError};
pub use metrics::{EdgeRecord, RunSummary};
pub use sim::{VehicleId, VehicleState, World};
