//! Python bindings: meshes, operators, controls, run configurations and the
//! solver pipelines. Structured results are returned as plain Python
//! dictionaries and lists.

use std::path::PathBuf;

use obstacle_ldp::config::{load_config, parse_config_in, RunConfig as CoreConfig, DEFAULT_CONFIG};
use obstacle_ldp::ldp::{ldp_sweep, SweepOptions};
use obstacle_ldp::operators::{apply_operator, check_all};
use obstacle_ldp::rate::{brute_force_rate, minimize_rate, weak_continuity_probe, EventSpec};
use obstacle_ldp::skeleton::{check_complementarity, check_lewy_stampacchia, skeleton_map, solve_skeleton};
use obstacle_ldp::spde::{coupling_experiment, simulate_spde};
use obstacle_ldp::{mesh, noise, rng, Error, ProblemSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

/// Bad input maps to `ValueError`, numerical failure to `RuntimeError`.
fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Converts any serializable result into Python objects through `json.loads`.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Uniform grid on (0, 1) with homogeneous Dirichlet conditions.
#[pyclass(module = "obstacle_ldp", frozen, from_py_object)]
#[derive(Clone)]
struct Mesh {
    inner: mesh::Mesh,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(n_cells: usize) -> PyResult<Self> {
        Ok(Mesh {
            inner: mesh::Mesh::new(n_cells).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.inner.n_cells()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    /// Coordinates of the interior nodes.
    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes().collect()
    }

    fn norm_h(&self, values: Vec<f64>) -> PyResult<f64> {
        mesh::norm_h(&values, &self.inner).map_err(py_err)
    }

    fn norm_v(&self, values: Vec<f64>, p: f64) -> PyResult<f64> {
        mesh::norm_v(&values, p, &self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Mesh(n_cells={})", self.inner.n_cells())
    }
}

/// The p-Laplace operator with its certified structural constants.
#[pyclass(module = "obstacle_ldp", frozen)]
struct OperatorSpec {
    inner: obstacle_ldp::OperatorSpec,
}

#[pymethods]
impl OperatorSpec {
    #[new]
    fn new(p: f64) -> PyResult<Self> {
        Ok(OperatorSpec {
            inner: obstacle_ldp::OperatorSpec::p_laplace(p).map_err(py_err)?,
        })
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }

    #[getter]
    fn constants(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.constants)
    }

    /// Nodal load vector of `A(u)`.
    fn apply(&self, values: Vec<f64>, mesh: &Mesh) -> PyResult<Vec<f64>> {
        Ok(apply_operator(&self.inner, &values, &mesh.inner)
            .map_err(py_err)?
            .into_vec())
    }

    /// Randomized checks of every structural property; one report per property.
    #[pyo3(signature = (mesh, trials = 100, seed = 0))]
    fn check(&self, py: Python<'_>, mesh: &Mesh, trials: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let reports = py
            .detach(|| check_all(&self.inner, &mesh.inner, trials, seed))
            .map_err(py_err)?;
        to_py(py, &reports)
    }
}

/// Piecewise-constant control in noise-mode coordinates, one row per time step.
#[pyclass(module = "obstacle_ldp", frozen, from_py_object)]
#[derive(Clone)]
struct Control {
    inner: noise::Control,
}

#[pymethods]
impl Control {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Control {
            inner: noise::Control::from_rows(rows).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(n_steps: usize, modes: usize) -> Self {
        Control {
            inner: noise::Control::zeros(n_steps, modes),
        }
    }

    #[staticmethod]
    fn constant(n_steps: usize, modes: usize, mode: usize, value: f64) -> Self {
        Control {
            inner: noise::Control::constant(n_steps, modes, mode, value),
        }
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.coefficients.clone()
    }

    /// `∫‖φ‖²_{H₀}` for time step `dt`.
    fn energy(&self, dt: f64) -> f64 {
        noise::h0_norm_sq(&self.inner, dt)
    }

    fn __repr__(&self) -> String {
        format!(
            "Control(n_steps={}, modes={})",
            self.inner.n_steps(),
            self.inner.modes()
        )
    }
}

/// A validated run configuration.
#[pyclass(module = "obstacle_ldp", from_py_object)]
#[derive(Clone)]
struct RunConfig {
    inner: CoreConfig,
    /// Directory that relative grid files are resolved against.
    base: PathBuf,
}

#[pymethods]
impl RunConfig {
    /// The built-in default configuration.
    #[staticmethod]
    fn default() -> PyResult<Self> {
        Self::from_toml(DEFAULT_CONFIG, None)
    }

    #[staticmethod]
    #[pyo3(signature = (text, base = None))]
    fn from_toml(text: &str, base: Option<PathBuf>) -> PyResult<Self> {
        let base = base.unwrap_or_else(|| PathBuf::from("."));
        Ok(RunConfig {
            inner: parse_config_in(text, &base).map_err(py_err)?,
            base,
        })
    }

    /// Loads a file; the seed environment override applies.
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let inner = load_config(&path).map_err(py_err)?;
        let base = path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        Ok(RunConfig { inner, base })
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    #[setter]
    fn set_master_seed(&mut self, seed: u64) {
        self.inner.master_seed = seed;
    }

    /// The `[task]` section as a dictionary.
    #[getter]
    fn task(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.task)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    /// `sha256` of the canonical serialization.
    fn digest(&self) -> PyResult<String> {
        self.inner.digest().map_err(py_err)
    }

    fn problem(&self) -> PyResult<Problem> {
        Problem::new(self)
    }
}

/// A discretized obstacle problem together with its run configuration.
#[pyclass(module = "obstacle_ldp", frozen)]
struct Problem {
    cfg: CoreConfig,
    spec: ProblemSpec,
}

impl Problem {
    fn event(&self) -> obstacle_ldp::Result<EventSpec> {
        let free = skeleton_map(
            &self.spec,
            &noise::Control::zeros(self.spec.n_steps, self.spec.modes()),
            &self.cfg.penalty(),
        )?;
        self.cfg.task.event.build(&self.spec, free.terminal())
    }

    fn control_or_default(&self, control: Option<&Control>) -> PyResult<noise::Control> {
        match control {
            Some(c) => Ok(c.inner.clone()),
            None => self.cfg.control(&self.spec).map_err(py_err),
        }
    }
}

#[pymethods]
impl Problem {
    #[new]
    fn new(config: &RunConfig) -> PyResult<Self> {
        Ok(Problem {
            spec: config.inner.problem_spec(&config.base).map_err(py_err)?,
            cfg: config.inner.clone(),
        })
    }

    #[getter]
    fn p(&self) -> f64 {
        self.spec.operator.p
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.spec.n_steps
    }

    #[getter]
    fn modes(&self) -> usize {
        self.spec.modes()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.spec.dt()
    }

    #[getter]
    fn mesh(&self) -> Mesh {
        Mesh { inner: self.spec.mesh }
    }

    /// ε-continued skeleton solve with its reflection certificates. The
    /// control defaults to the configured one.
    #[pyo3(signature = (control = None))]
    fn solve_skeleton(&self, py: Python<'_>, control: Option<&Control>) -> PyResult<Py<PyAny>> {
        let c = self.control_or_default(control)?;
        let (sol, ls, cc) = py
            .detach(|| -> obstacle_ldp::Result<_> {
                let sol = solve_skeleton(&self.spec, &c, &self.cfg.penalty())?;
                let ls = check_lewy_stampacchia(&sol.reflection, &self.spec.dual_order())?;
                let cc = check_complementarity(&sol.trajectory, &sol.reflection, &self.spec)?;
                Ok((sol, ls, cc))
            })
            .map_err(py_err)?;
        let summary = serde_json::json!({
            "trajectory": sol.trajectory.fields,
            "times": sol.trajectory.times,
            "reflection": sol.reflection.values,
            "eps": sol.eps,
            "convergence": sol.log,
            "lewy_stampacchia": ls,
            "complementarity": cc,
        });
        to_py(py, &summary)
    }

    /// One path of the small-noise equation at level `delta` from a seeded
    /// Wiener path; returns the nodal trajectory.
    fn simulate(&self, py: Python<'_>, delta: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let path = py
            .detach(|| -> obstacle_ldp::Result<_> {
                let w = noise::sample_wiener(&self.spec.qspec, self.spec.n_steps, self.spec.dt(), seed)?;
                simulate_spde(&self.spec, delta, &w, self.cfg.path_eps(), &self.cfg.penalty())
            })
            .map_err(py_err)?;
        Ok(path.trajectory.fields.into_iter().map(|f| f.into_vec()).collect())
    }

    /// Rate of the configured event: optimizer and brute-force oracle.
    fn rate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let (est, oracle) = py
            .detach(|| -> obstacle_ldp::Result<_> {
                let event = self.event()?;
                let pcfg = self.cfg.penalty();
                Ok((
                    minimize_rate(&self.spec, &event, &self.cfg.rate_options(), &pcfg)?,
                    brute_force_rate(&self.spec, &event, &self.cfg.brute_grid(), &pcfg)?,
                ))
            })
            .map_err(py_err)?;
        to_py(py, &serde_json::json!({ "optimizer": est, "oracle": oracle }))
    }

    /// Monte-Carlo δ-sweep of the configured event against the optimized rate.
    fn ldp_sweep(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let sweep = py
            .detach(|| -> obstacle_ldp::Result<_> {
                let event = self.event()?;
                let pcfg = self.cfg.penalty();
                let rate = minimize_rate(&self.spec, &event, &self.cfg.rate_options(), &pcfg)?;
                let t = &self.cfg.task;
                let opts = SweepOptions {
                    deltas: t.deltas.clone(),
                    n_paths: t.n_paths,
                    master_seed: self.cfg.master_seed,
                    importance_sampling: t.importance_sampling,
                };
                ldp_sweep(&self.spec, &event, &rate, &opts, self.cfg.path_eps(), &pcfg)
            })
            .map_err(py_err)?;
        to_py(py, &sweep)
    }

    /// State gaps under oscillating control perturbations.
    #[pyo3(signature = (control = None))]
    fn weak_continuity(&self, py: Python<'_>, control: Option<&Control>) -> PyResult<Py<PyAny>> {
        let c = self.control_or_default(control)?;
        let t = &self.cfg.task;
        let report = py
            .detach(|| weak_continuity_probe(&self.spec, &c, &t.oscillations, t.amplitude, &self.cfg.penalty()))
            .map_err(py_err)?;
        to_py(py, &report)
    }

    /// Mean squared coupling gap between controlled noisy and skeleton paths.
    #[pyo3(signature = (control = None))]
    fn couple(&self, py: Python<'_>, control: Option<&Control>) -> PyResult<Py<PyAny>> {
        let c = self.control_or_default(control)?;
        let t = &self.cfg.task;
        let report = py
            .detach(|| {
                coupling_experiment(
                    &self.spec,
                    &c,
                    &t.deltas,
                    t.n_paths,
                    self.cfg.master_seed,
                    self.cfg.path_eps(),
                    &self.cfg.penalty(),
                )
            })
            .map_err(py_err)?;
        to_py(py, &report)
    }
}

/// 95% Wilson score interval for `hits` out of `n`.
#[pyfunction]
fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    obstacle_ldp::ldp::wilson_interval(hits, n)
}

/// Seed of stream `index` under `master`.
#[pyfunction]
fn derive_seed(master: u64, index: u64) -> u64 {
    rng::derive_seed(master, index)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("obstacle-ldp".to_string()).chain(args).collect();
    py.detach(|| obstacle_ldp::cli::run(argv))
}

#[pymodule]
#[pyo3(name = "obstacle_ldp")]
fn obstacle_ldp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<OperatorSpec>()?;
    m.add_class::<Control>()?;
    m.add_class::<RunConfig>()?;
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
