use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::control::{ModeKind, VehicleClass};
use crate::sim::VehicleId;

pub const TRAJECTORY_HEADER: &str = "t,id,class,mode,edge,lane,s,v,a,gap,link_alive";

/// One per-step vehicle sample. Spawns produce a row at the spawn time and
/// exits a row at the interpolated exit time and exit position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub id: VehicleId,
    pub class: VehicleClass,
    pub mode: ModeKind,
    pub edge: String,
    pub lane: usize,
    pub s: f64,
    pub v: f64,
    pub a: f64,
    pub gap: Option<f64>,
    pub link_alive: bool,
}

impl TrajectoryRow {
    /// CSV line without the trailing newline. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let gap = self.gap.map(|g| g.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.id,
            self.class.as_str(),
            self.mode.as_str(),
            self.edge,
            self.lane,
            self.s,
            self.v,
            self.a,
            gap,
            u8::from(self.link_alive)
        )
    }
}

pub trait TrajectorySink: Send {
    fn row(&mut self, row: &TrajectoryRow) -> io::Result<()>;
    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct CsvTrajectory {
    out: BufWriter<File>,
}

impl CsvTrajectory {
    pub fn create(path: &Path) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        Ok(Self { out })
    }
}

impl TrajectorySink for CsvTrajectory {
    fn row(&mut self, row: &TrajectoryRow) -> io::Result<()> {
        writeln!(self.out, "{}", row.to_csv())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Keeps rows in memory.
#[derive(Debug, Default)]
pub struct MemoryTrajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectorySink for MemoryTrajectory {
    fn row(&mut self, row: &TrajectoryRow) -> io::Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }
}

impl<T: TrajectorySink + ?Sized> TrajectorySink for std::sync::Arc<std::sync::Mutex<T>> {
    fn row(&mut self, row: &TrajectoryRow) -> io::Result<()> {
        self.lock().expect("trajectory sink poisoned").row(row)
    }

    fn finish(&mut self) -> io::Result<()> {
        self.lock().expect("trajectory sink poisoned").finish()
    }
}
