//! Python bindings: scenario configs, the closed-loop runner and the coupled
//! dynamics model. Vectors cross the boundary as plain lists of floats.

use nalgebra::{DMatrix, DVector, Vector4};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tdacm::dynamics::{self, ActuatorInput};
use tdacm::kinematics::{self, GeneralizedState};
use tdacm::scenario::{self, RunLog, RunSummary};

fn to_py(err: tdacm::Error) -> PyErr {
    match err {
        tdacm::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A validated scenario description.
#[pyclass(name = "ScenarioConfig", module = "tdacm_py", skip_from_py_object)]
#[derive(Clone)]
struct PyScenarioConfig {
    inner: scenario::ScenarioConfig,
}

#[pymethods]
impl PyScenarioConfig {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::load_config(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::ScenarioConfig::parse(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.simulation.horizon
    }

    #[setter]
    fn set_horizon(&mut self, value: f64) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.simulation.horizon = value;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn perturbation(&self) -> f64 {
        self.inner.perturbation.factor
    }

    #[setter]
    fn set_perturbation(&mut self, value: f64) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.perturbation.factor = value;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.perturbation.seed
    }

    #[setter]
    fn set_seed(&mut self, value: u64) {
        self.inner.perturbation.seed = value;
    }

    /// Initial generalized coordinates.
    fn initial_q(&self) -> Vec<f64> {
        self.inner.initial.state().q.iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(name={:?}, dt={}, horizon={}, perturbation={})",
            self.inner.name,
            self.inner.dt(),
            self.inner.simulation.horizon,
            self.inner.perturbation.factor
        )
    }
}

/// Output of one closed-loop run.
#[pyclass(name = "RunResult", module = "tdacm_py")]
struct PyRunResult {
    log: RunLog,
    summary: RunSummary,
    ns: usize,
    na: usize,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn reason(&self) -> String {
        self.summary.reason.to_string()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.summary.steps
    }

    #[getter]
    fn initial_rmse(&self) -> f64 {
        self.summary.initial_rmse
    }

    #[getter]
    fn final_rmse(&self) -> f64 {
        self.summary.final_rmse
    }

    #[getter]
    fn modes(&self) -> Vec<String> {
        self.summary.modes.iter().map(|m| m.to_string()).collect()
    }

    /// Per-step normalized RMSE (NaN while the marker is out of view).
    fn rmse(&self) -> Vec<f64> {
        self.log.records.iter().map(|r| r.rmse).collect()
    }

    fn times(&self) -> Vec<f64> {
        self.log.records.iter().map(|r| r.t).collect()
    }

    /// Generalized coordinates, one list per step.
    fn q(&self) -> Vec<Vec<f64>> {
        self.log.records.iter().map(|r| r.q.iter().copied().collect()).collect()
    }

    fn csv(&self) -> PyResult<String> {
        self.log.to_csv_string(self.ns, self.na).map_err(to_py)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("schema", &self.summary.schema)?;
        d.set_item("name", &self.summary.name)?;
        d.set_item("perturbation", self.summary.perturbation)?;
        d.set_item("seed", self.summary.seed)?;
        d.set_item("initial_rmse", self.summary.initial_rmse)?;
        d.set_item("final_rmse", self.summary.final_rmse)?;
        d.set_item("steps", self.summary.steps)?;
        d.set_item("reason", self.summary.reason.to_string())?;
        d.set_item("detail", self.summary.detail.clone())?;
        d.set_item("modes", self.modes())?;
        d.set_item("local_fov_reached", self.summary.local_fov_reached)?;
        Ok(d)
    }

    fn summary_json(&self) -> String {
        self.summary.to_json_line()
    }
}

/// Run a scenario to completion. The GIL is released while simulating.
#[pyfunction]
fn run(py: Python<'_>, config: PyRef<'_, PyScenarioConfig>) -> PyRunResult {
    let cfg = config.inner.clone();
    let (log, summary) = py.detach(|| scenario::run(&cfg));
    PyRunResult {
        log,
        summary,
        ns: cfg.rod_dof(),
        na: cfg.rod.tendon_count,
    }
}

/// Coupled UAV and rod dynamics built from a scenario's parameters.
#[pyclass(name = "Model", module = "tdacm_py")]
struct PyModel {
    inner: dynamics::Model,
    chain_len: f64,
}

impl PyModel {
    fn state(&self, q: Vec<f64>, qdot: Option<Vec<f64>>) -> PyResult<GeneralizedState> {
        let n = self.inner.dof();
        let qdot = qdot.unwrap_or_else(|| vec![0.0; n]);
        if q.len() != n || qdot.len() != n {
            return Err(PyValueError::new_err(format!(
                "expected {n} coordinates (got q {}, qdot {})",
                q.len(),
                qdot.len()
            )));
        }
        GeneralizedState::new(DVector::from_vec(q), DVector::from_vec(qdot)).map_err(to_py)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: PyRef<'_, PyScenarioConfig>) -> PyResult<Self> {
        let world = scenario::World::from_config(&config.inner).map_err(to_py)?;
        let chain_len = world.chain().length();
        Ok(Self {
            inner: world.model,
            chain_len,
        })
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    #[getter]
    fn tendon_count(&self) -> usize {
        self.inner.tendon_count()
    }

    #[getter]
    fn gravity(&self) -> f64 {
        self.inner.mixer.gravity
    }

    #[setter]
    fn set_gravity(&mut self, g: f64) {
        self.inner.mixer.gravity = g;
    }

    fn mass_matrix(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let s = self.state(q, None)?;
        Ok(rows(&dynamics::mass_matrix(&s, &self.inner).map_err(to_py)?))
    }

    fn coriolis_matrix(&self, q: Vec<f64>, qdot: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let s = self.state(q, Some(qdot))?;
        Ok(rows(&dynamics::coriolis_matrix(&s, &self.inner).map_err(to_py)?))
    }

    /// `(kinetic, elastic, gravitational)` energy in joules.
    fn energy(&self, q: Vec<f64>, qdot: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        let s = self.state(q, Some(qdot))?;
        let e = dynamics::energy(&s, &self.inner).map_err(to_py)?;
        Ok((e.kinetic, e.elastic, e.gravitational))
    }

    /// One RK4 step with rotor thrusts and tendon tensions held constant.
    fn step(
        &self,
        q: Vec<f64>,
        qdot: Vec<f64>,
        rotors: [f64; 4],
        tendons: Vec<f64>,
        dt: f64,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = self.state(q, Some(qdot))?;
        if tendons.len() != self.inner.tendon_count() {
            return Err(PyValueError::new_err(format!(
                "expected {} tendon tensions (got {})",
                self.inner.tendon_count(),
                tendons.len()
            )));
        }
        let input = ActuatorInput {
            rotors: Vector4::from(rotors),
            tendons: DVector::from_vec(tendons),
        };
        let next = dynamics::step(&s, &self.inner, &input, dt).map_err(to_py)?;
        Ok((next.q.iter().copied().collect(), next.qdot.iter().copied().collect()))
    }

    /// Inertial tip pose as a 4x4 homogeneous matrix.
    fn tip_pose(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let s = self.state(q, None)?;
        let g = kinematics::section_pose(&self.inner.chain, &s, self.chain_len).map_err(to_py)?;
        let m = g.to_matrix();
        Ok((0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect())
    }
}

#[pymodule]
fn tdacm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenarioConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
