pub mod demand;
pub mod engine;
pub mod lanechange;
pub mod network;
pub mod trajectory;
pub mod vehicle;

pub use engine::{World, WorldStats};
pub use vehicle::{Leader, VehicleId, VehicleState};
