//! Python bindings: the control laws, metrics helpers, scenario
//! configuration and a steppable simulation.

use std::path::PathBuf;
use std::sync::Mutex;

use cavsim::batch::RunOutputs;
use cavsim::control::{self, AccelLimits, CaccState, LeaderObservation};
use cavsim::metrics;
use cavsim::{ControlError, RunSummary, SimError, VehicleClass};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn control_err(e: ControlError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Config(msg) => PyValueError::new_err(msg),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn class_of(name: &str) -> PyResult<VehicleClass> {
    match name.to_ascii_uppercase().as_str() {
        "HDV" => Ok(VehicleClass::Hdv),
        "CAV" => Ok(VehicleClass::Cav),
        _ => Err(PyValueError::new_err(format!("unknown vehicle class {name:?}; expected \"HDV\" or \"CAV\""))),
    }
}

fn observation(gap: Option<f64>, leader_speed: Option<f64>) -> PyResult<Option<LeaderObservation>> {
    match (gap, leader_speed) {
        (Some(g), Some(s)) => Ok(Some(LeaderObservation::sensed(g, s))),
        (None, None) => Ok(None),
        _ => Err(PyValueError::new_err("gap and leader_speed must be given together")),
    }
}

/// IDM acceleration with default human-driver parameters; free road when
/// no leader is given.
#[pyfunction]
#[pyo3(signature = (v, v0, gap=None, leader_speed=None))]
fn idm_accel(v: f64, v0: f64, gap: Option<f64>, leader_speed: Option<f64>) -> PyResult<f64> {
    let obs = observation(gap, leader_speed)?;
    let p = control::HdvParams::default();
    control::idm_accel(v, v0, obs.as_ref(), &p).map(|o| o.accel).map_err(control_err)
}

/// Linear ACC law with default CAV gains.
#[pyfunction]
#[pyo3(signature = (v, gap, leader_speed, h=1.1))]
fn acc_accel(v: f64, gap: f64, leader_speed: f64, h: f64) -> PyResult<f64> {
    let p = control::CavParams::default();
    control::acc_accel(v, &LeaderObservation::sensed(gap, leader_speed), h, &p).map(|o| o.accel).map_err(control_err)
}

/// One CACC step. Returns `(command, next_u)`.
#[pyfunction]
#[pyo3(signature = (u, v, a, gap, leader_speed, leader_accel, h=0.6, dt=0.1))]
#[allow(clippy::too_many_arguments)]
fn cacc_step(u: f64, v: f64, a: f64, gap: f64, leader_speed: f64, leader_accel: f64, h: f64, dt: f64) -> PyResult<(f64, f64)> {
    let p = control::CavParams::default();
    let obs = LeaderObservation { gap, leader_speed, leader_accel_feedforward: Some(leader_accel) };
    let (out, next) = control::cacc_step(CaccState { u, h_current: h }, v, a, &obs, h, dt, &p).map_err(control_err)?;
    Ok((out.accel, next.u))
}

/// First-order actuator lag step with CAV limits.
#[pyfunction]
#[pyo3(signature = (a, u_cmd, tau=0.5, dt=0.1))]
fn actuator_step(a: f64, u_cmd: f64, tau: f64, dt: f64) -> PyResult<f64> {
    if !(tau > 0.0 && dt > 0.0) {
        return Err(PyValueError::new_err("tau and dt must be > 0"));
    }
    let p = control::CavParams::default();
    let limits = AccelLimits { max_accel: p.max_accel, decel_max: p.decel_max, emerg_decel: p.emerg_decel };
    Ok(control::actuator_step(a, u_cmd, tau, dt, &limits))
}

/// Mode manager. Returns `(mode, target_headway)`, e.g. `("CACC", 0.6)`.
#[pyfunction]
#[pyo3(signature = (ego, predecessor=None, link_alive=false))]
fn select_mode(ego: &str, predecessor: Option<&str>, link_alive: bool) -> PyResult<(&'static str, f64)> {
    let pred = predecessor.map(class_of).transpose()?;
    let m = control::select_mode(class_of(ego)?, pred, link_alive, &control::ControlConfig::default());
    Ok((m.kind.as_str(), m.target_headway))
}

/// Travel rate [min/km] from seconds and metres; `None` for zero distance.
#[pyfunction]
fn travel_rate(total_time: f64, total_distance: f64) -> Option<f64> {
    metrics::travel_rate(total_time, total_distance)
}

#[pyfunction]
fn rci(tr: f64, tr_ff: f64) -> PyResult<f64> {
    if !(tr_ff > 0.0) {
        return Err(PyValueError::new_err("tr_ff must be > 0"));
    }
    Ok(metrics::rci(tr, tr_ff))
}

fn summary_dict<'py>(py: Python<'py>, s: &RunSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mpr", s.mpr)?;
    d.set_item("per", s.per)?;
    d.set_item("travel_rate", s.travel_rate)?;
    d.set_item("rci", s.rci)?;
    d.set_item("collisions", s.collisions)?;
    d.set_item("vehicles_completed", s.vehicles_completed)?;
    Ok(d)
}

/// Scenario configuration; defaults to the calibrated corridor.
#[pyclass(name = "ScenarioConfig", from_py_object)]
#[derive(Clone)]
struct PyScenarioConfig {
    inner: cavsim::ScenarioConfig,
}

#[pymethods]
impl PyScenarioConfig {
    #[new]
    fn new() -> Self {
        Self { inner: cavsim::ScenarioConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        cavsim::ScenarioConfig::from_toml(text).map(|inner| Self { inner }).map_err(sim_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        cavsim::ScenarioConfig::load(&path).map(|inner| Self { inner }).map_err(sim_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(sim_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn mpr(&self) -> f64 {
        self.inner.demand.mpr
    }
    #[setter]
    fn set_mpr(&mut self, v: f64) {
        self.inner.demand.mpr = v;
    }

    #[getter]
    fn per(&self) -> f64 {
        self.inner.channel.per
    }
    #[setter]
    fn set_per(&mut self, v: f64) {
        self.inner.channel.per = v;
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }
    #[setter]
    fn set_duration(&mut self, v: f64) {
        self.inner.duration = v;
        self.inner.demand.duration = v;
    }

    #[getter]
    fn warmup(&self) -> f64 {
        self.inner.warmup
    }
    #[setter]
    fn set_warmup(&mut self, v: f64) {
        self.inner.warmup = v;
    }

    /// Mainline demand [veh/h].
    #[getter]
    fn inflow(&self) -> f64 {
        self.inner.demand.inflow
    }
    #[setter]
    fn set_inflow(&mut self, v: f64) {
        self.inner.demand.inflow = v;
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.output.out_dir.clone()
    }
    #[setter]
    fn set_out_dir(&mut self, v: PathBuf) {
        self.inner.output.out_dir = v;
    }

    #[getter]
    fn trajectories(&self) -> bool {
        self.inner.output.trajectories
    }
    #[setter]
    fn set_trajectories(&mut self, v: bool) {
        self.inner.output.trajectories = v;
    }

    #[getter]
    fn progress(&self) -> bool {
        self.inner.output.progress
    }
    #[setter]
    fn set_progress(&mut self, v: bool) {
        self.inner.output.progress = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(seed={}, mpr={}, per={}, duration={}, inflow={})",
            self.inner.seed, self.inner.demand.mpr, self.inner.channel.per, self.inner.duration, self.inner.demand.inflow
        )
    }
}

/// Runs one scenario, writing its CSVs to `config.out_dir`, and returns the
/// summary row as a dict.
#[pyfunction]
fn run_scenario<'py>(py: Python<'py>, config: &PyScenarioConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let out: RunOutputs = py.detach(|| cavsim::run_scenario(&cfg)).map_err(sim_err)?;
    summary_dict(py, &out.summary)
}

/// A steppable world.
#[pyclass]
struct Simulation {
    world: Mutex<cavsim::World>,
}

impl Simulation {
    fn with<T>(&self, f: impl FnOnce(&mut cavsim::World) -> T) -> T {
        f(&mut self.world.lock().expect("simulation lock poisoned"))
    }
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&PyScenarioConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let world = cavsim::World::new(cfg).map_err(sim_err)?;
        Ok(Self { world: Mutex::new(world) })
    }

    /// Advances `n` steps (default 1), stopping early at the end of the run.
    #[pyo3(signature = (n=1))]
    fn step(&self, py: Python<'_>, n: u64) -> PyResult<()> {
        py.detach(|| {
            self.with(|w| {
                for _ in 0..n {
                    if w.is_finished() {
                        break;
                    }
                    w.step()?;
                }
                Ok::<_, SimError>(())
            })
        })
        .map_err(sim_err)
    }

    /// Steps to the configured duration and returns the summary.
    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = py.detach(|| self.with(|w| w.run())).map_err(sim_err)?;
        summary_dict(py, &s)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.with(|w| w.summary()).map_err(sim_err)?;
        summary_dict(py, &s)
    }

    #[getter]
    fn time(&self) -> f64 {
        self.with(|w| w.time())
    }

    #[getter]
    fn finished(&self) -> bool {
        self.with(|w| w.is_finished())
    }

    /// Counters: spawned, despawned, completed, collisions, emergency_brakes,
    /// lane_changes and the number of queued arrivals.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (s, queued) = self.with(|w| (w.stats(), w.queued()));
        let d = PyDict::new(py);
        d.set_item("spawned", s.spawned)?;
        d.set_item("despawned", s.despawned)?;
        d.set_item("completed", s.completed)?;
        d.set_item("collisions", s.collisions)?;
        d.set_item("emergency_brakes", s.emergency_brakes)?;
        d.set_item("lane_changes", s.lane_changes)?;
        d.set_item("queued", queued)?;
        Ok(d)
    }

    /// Snapshot of every vehicle on the road as a list of dicts.
    fn vehicles<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = self.with(|w| {
            w.vehicles()
                .iter()
                .map(|v| {
                    let x = w.corridor().x(v.edge, v.s);
                    let edge = w.corridor().edge(v.edge).id.clone();
                    (v.id, v.class.as_str(), v.mode.kind.as_str(), edge, v.lane, v.s, x, v.v, v.a, v.leader.map(|l| l.gap))
                })
                .collect::<Vec<_>>()
        });
        rows.into_iter()
            .map(|(id, class, mode, edge, lane, s, x, v, a, gap)| {
                let d = PyDict::new(py);
                d.set_item("id", id)?;
                d.set_item("class", class)?;
                d.set_item("mode", mode)?;
                d.set_item("edge", edge)?;
                d.set_item("lane", lane)?;
                d.set_item("s", s)?;
                d.set_item("x", x)?;
                d.set_item("v", v)?;
                d.set_item("a", a)?;
                d.set_item("gap", gap)?;
                Ok(d)
            })
            .collect()
    }
}

#[pymodule]
fn pycavsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(idm_accel, m)?)?;
    m.add_function(wrap_pyfunction!(acc_accel, m)?)?;
    m.add_function(wrap_pyfunction!(cacc_step, m)?)?;
    m.add_function(wrap_pyfunction!(actuator_step, m)?)?;
    m.add_function(wrap_pyfunction!(select_mode, m)?)?;
    m.add_function(wrap_pyfunction!(travel_rate, m)?)?;
    m.add_function(wrap_pyfunction!(rci, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_class::<PyScenarioConfig>()?;
    m.add_class::<Simulation>()?;
    Ok(())
}
