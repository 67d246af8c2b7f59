//! Python bindings. Parameter blocks and reports cross the boundary as plain
//! dicts, converted through the same JSON schema the CLI reads.

use obsbundle_cli::config::{digest_of, RunConfig};
use obsbundle_cli::{CliError, SimulateOutputs};
use obsbundle_core::constraints::{classify_dirac, surface_samples, DiracTolerance};
use obsbundle_core::geometry::{radial_clamp, validate_properness, PropernessOptions};
use obsbundle_core::integrator::{convergence_study, integrate, IntegratorConfig, Trajectory as CoreTrajectory};
use obsbundle_core::lax::{lax_report as core_lax_report, spectrum, LaxRunOptions};
use obsbundle_core::poisson::{bracket_matrix, BracketBackend};
use obsbundle_core::systems::{self, BuiltinSystem};
use obsbundle_core::{BundleError as CoreError, BundleState, Matrix};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(obsbundle, BundleError, PyException, "Numerical failure inside the core library.");

fn core_err(e: CoreError) -> PyErr {
    BundleError::new_err(format!("[{}] {e}", e.category()))
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Run(inner) => core_err(inner),
        other => PyValueError::new_err(format!("[{}] {other}", other.category())),
    }
}

/// Python object → Rust value via `json.dumps`.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("invalid parameters: {e}")))
}

fn from_py_or_default<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match obj {
        Some(o) if !o.is_none() => from_py(o),
        _ => Ok(T::default()),
    }
}

/// Rust value → Python object via `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_backend(name: &str) -> PyResult<BracketBackend> {
    match name {
        "paper_table" => Ok(BracketBackend::PaperTable),
        "exact_inverse" => Ok(BracketBackend::ExactInverse),
        other => Err(PyValueError::new_err(format!("unknown backend {other:?}"))),
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A registered system with its default initial state and sampling region.
#[pyclass(module = "obsbundle")]
struct System {
    inner: BuiltinSystem,
    config: Option<RunConfig>,
}

impl System {
    fn state(&self, obj: Option<&Bound<'_, PyAny>>) -> PyResult<BundleState> {
        let state = match obj {
            Some(o) if !o.is_none() => from_py::<BundleState>(o)?,
            _ => self.inner.initial.clone(),
        };
        self.inner.spec.check_state(&state).map_err(core_err)?;
        Ok(state)
    }

    fn integrator_config(&self, obj: Option<&Bound<'_, PyAny>>) -> PyResult<IntegratorConfig> {
        match obj {
            Some(o) if !o.is_none() => from_py(o),
            _ => Ok(self.config.as_ref().map(RunConfig::integrator_config).unwrap_or_default()),
        }
    }
}

#[pymethods]
impl System {
    /// Harmonic oscillator; `omega = 0` gives the free particle.
    #[staticmethod]
    #[pyo3(signature = (params=None))]
    fn oscillator(params: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let p = from_py_or_default(params)?;
        Ok(Self {
            inner: systems::oscillator_system(&p).map_err(core_err)?,
            config: None,
        })
    }

    /// Energy level set `Φ = H − level`, a first-class constraint.
    #[staticmethod]
    #[pyo3(signature = (params=None))]
    fn circle(params: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let p = from_py_or_default(params)?;
        Ok(Self {
            inner: systems::circle_system(&p).map_err(core_err)?,
            config: None,
        })
    }

    /// Open Toda lattice with the ellipsoidal observation constraint.
    #[staticmethod]
    #[pyo3(signature = (params=None))]
    fn toda(params: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let p = from_py_or_default(params)?;
        Ok(Self {
            inner: systems::toda_system(&p).map_err(core_err)?,
            config: None,
        })
    }

    /// Builds the system named in a run configuration (same schema as the CLI).
    #[staticmethod]
    fn from_config(config: &Bound<'_, PyAny>) -> PyResult<Self> {
        let json = config.py().import("json")?;
        let text: String = json.call_method1("dumps", (config,))?.extract()?;
        let cfg = RunConfig::from_json(&text).map_err(cli_err)?;
        Ok(Self {
            inner: cfg.build_system().map_err(cli_err)?,
            config: Some(cfg),
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec.name.clone()
    }

    /// `(n, k)`: base half-dimension and fiber dimension.
    #[getter]
    fn dims(&self) -> (usize, usize) {
        (self.inner.spec.layout.n, self.inner.spec.layout.k)
    }

    #[getter]
    fn has_constraint(&self) -> bool {
        self.inner.spec.constraint.is_some()
    }

    #[getter]
    fn initial<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.initial)
    }

    #[pyo3(signature = (state=None))]
    fn energy(&self, state: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
        Ok(self.inner.spec.energy(&self.state(state)?))
    }

    #[pyo3(signature = (state=None))]
    fn constraint(&self, state: Option<&Bound<'_, PyAny>>) -> PyResult<Option<f64>> {
        Ok(self.inner.spec.constraint_value(&self.state(state)?))
    }

    #[pyo3(signature = (state=None, backend="paper_table"))]
    fn bracket_matrix(&self, state: Option<&Bound<'_, PyAny>>, backend: &str) -> PyResult<Vec<Vec<f64>>> {
        let b = bracket_matrix(&self.inner.spec, &self.state(state)?, parse_backend(backend)?).map_err(core_err)?;
        Ok(matrix_rows(&b))
    }

    /// Radial projection of `xi` onto the fiber ball at `x`.
    fn clamp(&self, x: Vec<f64>, xi: Vec<f64>) -> PyResult<Vec<f64>> {
        radial_clamp(&self.inner.spec, &x, &xi).map_err(core_err)
    }

    /// Integrates from `state` (default: the system's initial state).
    #[pyo3(signature = (config=None, state=None))]
    fn integrate(&self, config: Option<&Bound<'_, PyAny>>, state: Option<&Bound<'_, PyAny>>) -> PyResult<Trajectory> {
        let cfg = self.integrator_config(config)?;
        let s0 = self.state(state)?;
        let traj = integrate(&self.inner.spec, &s0, &cfg).map_err(core_err)?;
        Ok(Trajectory { inner: traj })
    }

    #[pyo3(signature = (levels=4, config=None))]
    fn convergence<'py>(
        &self,
        py: Python<'py>,
        levels: usize,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = self.integrator_config(config)?;
        let report = convergence_study(&self.inner.spec, &self.inner.initial, &cfg, levels).map_err(core_err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (samples=1000, seed=0, backend="paper_table"))]
    fn classify<'py>(&self, py: Python<'py>, samples: usize, seed: u64, backend: &str) -> PyResult<Bound<'py, PyAny>> {
        let points = surface_samples(&self.inner.spec, &self.inner.sampling, samples, seed).map_err(core_err)?;
        let report = classify_dirac(
            &self.inner.spec,
            &points,
            DiracTolerance::default(),
            samples.min(10),
            parse_backend(backend)?,
        )
        .map_err(core_err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (grid=31, radius=30.0, fit_min_distance=3.0))]
    fn validate<'py>(&self, py: Python<'py>, grid: usize, radius: f64, fit_min_distance: f64) -> PyResult<Bound<'py, PyAny>> {
        if grid == 0 {
            return Err(PyValueError::new_err("grid must be positive"));
        }
        let samples = obsbundle_cli::radial_grid(&self.inner.spec, grid, radius);
        let opts = PropernessOptions {
            fit_min_distance,
            ..PropernessOptions::default()
        };
        let report = validate_properness(&self.inner.spec, &samples, &opts).map_err(core_err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        let l = self.inner.spec.layout;
        format!("System(name={:?}, n={}, k={})", self.inner.spec.name, l.n, l.k)
    }
}

/// Result of an integration run.
#[pyclass(module = "obsbundle")]
struct Trajectory {
    inner: CoreTrajectory,
}

#[pymethods]
impl Trajectory {
    fn __len__(&self) -> usize {
        self.inner.steps.len() + 1
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.states().map(|s| s.t).collect()
    }

    /// Phase vectors `(x, ξ, π)` of every state, initial state first.
    #[getter]
    fn phases(&self) -> Vec<Vec<f64>> {
        self.inner.states().map(|s| s.phase().iter().copied().collect()).collect()
    }

    #[getter]
    fn final_state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.final_state())
    }

    #[getter]
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let d: Vec<_> = self.inner.steps.iter().map(|s| &s.diagnostics).collect();
        to_py(py, &d)
    }

    #[getter]
    fn max_abs_phi(&self) -> Option<f64> {
        self.inner.max_abs_phi()
    }

    #[getter]
    fn max_abs_phi_predicted(&self) -> Option<f64> {
        self.inner.max_abs_phi_predicted()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Runs the `simulate` command on a configuration dict and returns its summary.
#[pyfunction]
#[pyo3(signature = (config, trajectory=None, diagnostics=None))]
fn simulate<'py>(
    py: Python<'py>,
    config: &Bound<'_, PyAny>,
    trajectory: Option<std::path::PathBuf>,
    diagnostics: Option<std::path::PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (config,))?.extract()?;
    let cfg = RunConfig::from_json(&text).map_err(cli_err)?;
    let summary = obsbundle_cli::cmd_simulate(
        &cfg,
        SimulateOutputs {
            trajectory: trajectory.as_deref(),
            diagnostics: diagnostics.as_deref(),
        },
    )
    .map_err(cli_err)?;
    to_py(py, &summary)
}

/// SHA-256 digest of the canonical form of a run configuration.
#[pyfunction]
fn config_digest(config: &Bound<'_, PyAny>) -> PyResult<String> {
    let text: String = config.py().import("json")?.call_method1("dumps", (config,))?.extract()?;
    let cfg = RunConfig::from_json(&text).map_err(cli_err)?;
    Ok(cfg.digest())
}

/// Flaschka drift, zero-curvature residuals and `ε_crit` for the Toda Lax pair.
#[pyfunction]
#[pyo3(signature = (options=None))]
fn lax_report<'py>(py: Python<'py>, options: Option<&Bound<'_, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let opts: LaxRunOptions = from_py_or_default(options)?;
    let report = core_lax_report(&opts).map_err(core_err)?;
    let options_json = serde_json::to_string(&opts).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let wrapped = serde_json::json!({
        "config_digest": digest_of(&options_json),
        "report": report,
    });
    to_py(py, &wrapped)
}

/// Ascending eigenvalues of a symmetric matrix given as a list of rows.
#[pyfunction]
fn symmetric_spectrum(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let m = Matrix::from_fn(n, n, |i, j| rows[i][j]);
    spectrum::symmetric_spectrum(&m).map_err(core_err)
}

#[pymodule]
fn obsbundle(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BundleError", m.py().get_type::<BundleError>())?;
    m.add_class::<System>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(config_digest, m)?)?;
    m.add_function(wrap_pyfunction!(lax_report, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_spectrum, m)?)?;
    Ok(())
}
