//! Python bindings: `import fhn_meso`.
//!
//! Configs travel as JSON strings in the same format the `fhn` binary reads.
//! Structured results come back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use fhn_core::diagnostics::{self, DiagnosticsRecord};
use fhn_core::harness::{self, output, sweep, Config};
use fhn_core::model::{self, KernelFamily};
use fhn_core::particle::{sample_initial, ParticleEnsemble, StepOptions};
use fhn_core::Error;

fn err(e: Error) -> PyErr {
    if e.is_config() || matches!(e, Error::InvalidParameter(_) | Error::InvalidInput(_) | Error::Domain(_)) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn load_config(json: Option<&str>) -> PyResult<Config> {
    match json {
        Some(text) => Config::from_json(text).map_err(err),
        None => Ok(Config::default()),
    }
}

/// Threshold `a`, adaptation rate `tau` and decay `gamma` of one neuron.
#[pyclass(name = "FhnParams", module = "fhn_meso", frozen)]
struct PyParams(model::FhnParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (a = 0.25, tau = 0.1, gamma = 0.5))]
    fn new(a: f64, tau: f64, gamma: f64) -> PyResult<Self> {
        model::FhnParams::new(a, tau, gamma).map(Self).map_err(err)
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    fn nonlinearity(&self, v: f64) -> f64 {
        self.0.nonlinearity(v)
    }

    fn adaptation(&self, v: f64, w: f64) -> f64 {
        self.0.adaptation(v, w)
    }

    /// The nonlinearity constants `kappa1`, `kappa1_prime`, `kappa2`, `kappa3`.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &model::derive_constants(&self.0).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("FhnParams(a={}, tau={}, gamma={})", self.0.a, self.0.tau, self.0.gamma)
    }
}

/// Radial connectivity kernel of unit mass.
#[pyclass(name = "KernelSpec", module = "fhn_meso", frozen)]
struct PyKernel(model::KernelSpec);

#[pymethods]
impl PyKernel {
    /// `family` is `"gaussian"` or `"compact_bump"`.
    #[new]
    #[pyo3(signature = (family = "gaussian", width = 1.0, dim = 1))]
    fn new(family: &str, width: f64, dim: usize) -> PyResult<Self> {
        let family = match family {
            "gaussian" => KernelFamily::Gaussian,
            "compact_bump" => KernelFamily::CompactBump,
            other => return Err(PyValueError::new_err(format!("unknown kernel family `{other}`"))),
        };
        model::KernelSpec::new(family, width, dim).map(Self).map_err(err)
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn diffusivity(&self) -> f64 {
        self.0.diffusivity()
    }

    fn eval(&self, r: f64) -> f64 {
        self.0.eval(r)
    }

    fn eval_rescaled(&self, eps: f64, r: f64) -> f64 {
        self.0.eval_rescaled(eps, r)
    }
}

/// A weighted particle ensemble.
#[pyclass(name = "Ensemble", module = "fhn_meso")]
struct PyEnsemble(ParticleEnsemble);

#[pymethods]
impl PyEnsemble {
    /// Samples an ensemble from a JSON config (defaults when `None`).
    /// `eps`, `n` and `seed` override the corresponding `meso` entries.
    #[staticmethod]
    #[pyo3(signature = (config = None, eps = None, n = None, seed = None))]
    fn sample(config: Option<&str>, eps: Option<f64>, n: Option<usize>, seed: Option<u64>) -> PyResult<Self> {
        let cfg = load_config(config)?;
        let eps = eps.unwrap_or(cfg.meso.eps);
        let n = n.or(cfg.meso.n_particles).unwrap_or_else(|| cfg.sweep.n_rule.count(eps));
        let init = cfg.init(n, seed.unwrap_or(cfg.meso.seed));
        let ens = sample_initial(&init, &cfg.setup(eps).map_err(err)?).map_err(err)?;
        Ok(Self(ens))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.0.eps()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.0.time()
    }

    #[getter]
    fn backend(&self) -> &'static str {
        self.0.interaction().backend_name()
    }

    /// Flat positions, `dim` entries per particle.
    #[getter]
    fn positions(&self) -> Vec<f64> {
        self.0.positions().to_vec()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.0.v().to_vec()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.0.w().to_vec()
    }

    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.0.masses().to_vec()
    }

    fn set_states(&mut self, v: Vec<f64>, w: Vec<f64>) -> PyResult<()> {
        self.0.set_states(v, w).map_err(err)
    }

    /// One time step; returns the step report.
    #[pyo3(signature = (dt, reaction = true, interaction = true))]
    fn step<'py>(&mut self, py: Python<'py>, dt: f64, reaction: bool, interaction: bool) -> PyResult<Bound<'py, PyAny>> {
        let opts = StepOptions { reaction, interaction, ..StepOptions::default() };
        let r = py.detach(|| self.0.step(dt, &opts)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("step", r.step)?;
        d.set_item("time", r.time)?;
        d.set_item("max_abs_state", r.max_abs_state)?;
        d.set_item("solver_iterations", r.solver_iterations)?;
        Ok(d.into_any())
    }

    /// Integrates to `t_end`, returning a diagnostics record every `stride` steps.
    #[pyo3(signature = (t_end, dt, stride = 1))]
    fn run<'py>(&mut self, py: Python<'py>, t_end: f64, dt: f64, stride: usize) -> PyResult<Bound<'py, PyAny>> {
        let records = py
            .detach(|| self.0.run(t_end, dt, stride, &StepOptions::default(), DiagnosticsRecord::from_ensemble))
            .map_err(err)?;
        to_py(py, &records)
    }

    /// `(v, w, x)` moments of order `k`.
    fn moments(&self, k: u32) -> PyResult<(f64, f64, f64)> {
        diagnostics::moments(&self.0, k).map_err(err)
    }

    fn dissipation(&self, p: u32) -> PyResult<f64> {
        diagnostics::dissipation(&self.0, p).map_err(err)
    }

    fn symmetrization_gap(&self, p: u32) -> PyResult<f64> {
        diagnostics::symmetrization_gap(&self.0, p).map_err(err)
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &DiagnosticsRecord::from_ensemble(&self.0).map_err(err)?)
    }

    /// Writes the binary ensemble file.
    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        output::write_ensemble(&path, &output::EnsembleData::from(&self.0)).map_err(err)
    }
}

/// Default configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&Config::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Solves the limit system for the `macro` section of `config`.
///
/// Returns cell centers, `rho0`, the final `V` and `W`, and the per-step monitors.
#[pyfunction]
#[pyo3(signature = (config = None, cells = None))]
fn macro_solve<'py>(py: Python<'py>, config: Option<&str>, cells: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load_config(config)?;
    let cells = cells.unwrap_or(cfg.macro_.cells);
    let traj = py.detach(|| sweep::run_macro(&cfg, cells)).map_err(err)?;
    let st = &traj.final_state;
    let g = st.grid;
    let d = PyDict::new(py);
    d.set_item("dim", g.dim)?;
    d.set_item("t", st.t)?;
    let centers: Vec<f64> = (0..g.len()).flat_map(|c| g.center(c)[..g.dim].to_vec()).collect();
    d.set_item("x", centers)?;
    d.set_item("rho0", st.rho0.values.clone())?;
    d.set_item("v", st.v.values.clone())?;
    d.set_item("w", st.w.values.clone())?;
    d.set_item("monitors", to_py(py, &traj.monitors)?)?;
    Ok(d.into_any())
}

/// Randomized check of the exact identities; the dict has a `passed` entry.
#[pyfunction]
#[pyo3(signature = (seed = 42, trials = 100))]
fn check_identities<'py>(py: Python<'py>, seed: u64, trials: usize) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| harness::check_identities(seed, trials)).map_err(err)?;
    let out = to_py(py, &report)?;
    out.set_item("passed", report.passed())?;
    Ok(out)
}

/// Log-log fit of `(eps, metric)` pairs.
#[pyfunction]
fn fit_rate<'py>(py: Python<'py>, pairs: Vec<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &harness::fit_rate(&pairs).map_err(err)?)
}

#[pymodule]
fn fhn_meso(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(macro_solve, m)?)?;
    m.add_function(wrap_pyfunction!(check_identities, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    Ok(())
}
