//! Python bindings for the filtering laboratory.
//!
//! Matrices cross the boundary as lists of rows; structured results come back
//! as plain dicts.

use fastab_core::config;
use fastab_core::error_growth::{self, ErrorGrowthParams, ErrorModelKind};
use fastab_core::experiments::{self, FilterKind, ObsMode};
use fastab_core::{kalman, model, particle, runner, wasserstein};
use fastab_core::{GaussianMeasure, ModelSpec, Nonlinearity, PathRecord};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

create_exception!(fastab, FastabError, PyException);

fn err(e: fastab_core::Error) -> PyErr {
    FastabError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(FastabError::new_err("matrix rows have unequal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| FastabError::new_err(e.to_string()))
}

fn by_name<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(json!(name)).map_err(|e| FastabError::new_err(e.to_string()))
}

/// Gaussian measure `N(mean, cov)`.
#[pyclass(name = "Gaussian", module = "fastab", from_py_object)]
#[derive(Clone)]
struct PyGaussian {
    inner: GaussianMeasure,
}

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = GaussianMeasure::new(DVector::from_vec(mean), matrix(&cov)?).map_err(err)?;
        Ok(PyGaussian { inner })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.cov)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("Gaussian(mean={:?}, cov={:?})", self.mean(), self.cov())
    }
}

/// Linear-plus-bounded signal/observation model.
#[pyclass(name = "Model", module = "fastab", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelSpec,
}

#[pymethods]
impl PyModel {
    /// `drift_nonlinear` / `obs_nonlinear` take dicts such as
    /// `{"family": "tanh", "epsilon": 0.5}`.
    #[new]
    #[pyo3(signature = (f, h, sigma, drift_nonlinear=None, obs_nonlinear=None))]
    fn new(
        f: Vec<Vec<f64>>,
        h: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        drift_nonlinear: Option<&Bound<'_, PyAny>>,
        obs_nonlinear: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let drift: Nonlinearity = drift_nonlinear.map(from_py).transpose()?.unwrap_or_default();
        let obs: Nonlinearity = obs_nonlinear.map(from_py).transpose()?.unwrap_or_default();
        let inner = ModelSpec::new(matrix(&f)?, drift, matrix(&h)?, obs, matrix(&sigma)?).map_err(err)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn is_gaussian_preserving(&self) -> bool {
        self.inner.is_gaussian_preserving()
    }

    fn is_detectable(&self) -> bool {
        kalman::check_detectability(&self.inner.drift, &self.inner.observation).holds
    }

    fn is_stabilizable(&self) -> bool {
        kalman::check_stabilizability(&self.inner.drift, &self.inner.diffusion).holds
    }
}

/// Simulated signal and observation on a uniform grid.
#[pyclass(name = "Path", module = "fastab", from_py_object)]
#[derive(Clone)]
struct PyPath {
    inner: PathRecord,
}

fn split(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width.max(1)).map(<[f64]>::to_vec).collect()
}

#[pymethods]
impl PyPath {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        split(&self.inner.states, self.inner.state_dim)
    }

    #[getter]
    fn observations(&self) -> Vec<Vec<f64>> {
        split(&self.inner.observations, self.inner.obs_dim)
    }

    fn checksum(&self) -> String {
        self.inner.observation_checksum()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv().into_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Signal from `x0` plus its observation path.
#[pyfunction]
#[pyo3(name = "simulate")]
fn simulate(model: &PyModel, x0: Vec<f64>, dt: f64, t_end: f64, seed: u64) -> PyResult<PyPath> {
    let signal = model::simulate_signal(&model.inner, &DVector::from_vec(x0), dt, t_end, seed).map_err(err)?;
    let inner = model::simulate_observation(&signal, &model.inner, seed).map_err(err)?;
    Ok(PyPath { inner })
}

/// Signal drawn from `prior` plus its observation path.
#[pyfunction]
fn simulate_from_prior(model: &PyModel, prior: &PyGaussian, dt: f64, t_end: f64, seed: u64) -> PyResult<PyPath> {
    let inner = experiments::simulate_realization(&model.inner, &prior.inner, t_end, dt, seed).map_err(err)?;
    Ok(PyPath { inner })
}

/// Kalman-Bucy posterior path as `{"times", "means", "covs"}`.
#[pyfunction]
fn kalman_bucy<'py>(py: Python<'py>, path: &PyPath, prior: &PyGaussian, model: &PyModel) -> PyResult<Bound<'py, PyAny>> {
    let traj = kalman::run_kalman_bucy(&path.inner, &prior.inner, &model.inner).map_err(err)?;
    let means: Vec<Vec<f64>> = traj.means.iter().map(|m| m.iter().copied().collect()).collect();
    let covs: Vec<Vec<Vec<f64>>> = traj.covs.iter().map(rows).collect();
    to_py(py, &json!({"times": traj.times, "means": means, "covs": covs}))
}

/// Bootstrap particle filter summaries as `{"times", "means", "covs", "ess", "resampled"}`.
#[pyfunction]
#[pyo3(signature = (path, prior, model, particles, seed, ess_threshold=0.5))]
fn particle_filter<'py>(
    py: Python<'py>,
    path: &PyPath,
    prior: &PyGaussian,
    model: &PyModel,
    particles: usize,
    seed: u64,
    ess_threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let settings = particle::ParticleSettings {
        ess_threshold,
        ..particle::ParticleSettings::new(particles, seed)
    };
    let run = particle::run_particle_filter(&path.inner, &prior.inner, &model.inner, &settings).map_err(err)?;
    let s = &run.summaries;
    to_py(
        py,
        &json!({
            "times": s.iter().map(|c| c.t).collect::<Vec<_>>(),
            "means": s.iter().map(|c| c.moments.mean.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "covs": s.iter().map(|c| rows(&c.moments.cov)).collect::<Vec<_>>(),
            "ess": s.iter().map(|c| c.ess).collect::<Vec<_>>(),
            "resampled": s.iter().map(|c| c.resampled).collect::<Vec<_>>(),
        }),
    )
}

#[pyfunction]
fn w2_gaussian(a: &PyGaussian, b: &PyGaussian) -> PyResult<f64> {
    wasserstein::w2_gaussian(&a.inner, &b.inner).map_err(err)
}

fn cloud(points: &[Vec<f64>], weights: Option<Vec<f64>>) -> PyResult<particle::ParticleCloud> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(FastabError::new_err("points have unequal dimension"));
    }
    let flat = points.concat();
    match weights {
        Some(w) => particle::ParticleCloud::new(dim, flat, w),
        None => particle::ParticleCloud::uniform(dim, flat),
    }
    .map_err(err)
}

/// W2 between two point clouds; weighted clouds are resampled with `seed`.
#[pyfunction]
#[pyo3(signature = (a, b, a_weights=None, b_weights=None, seed=0))]
fn w2_empirical(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    a_weights: Option<Vec<f64>>,
    b_weights: Option<Vec<f64>>,
    seed: u64,
) -> PyResult<f64> {
    wasserstein::w2_empirical_seeded(&cloud(&a, a_weights)?, &cloud(&b, b_weights)?, seed).map_err(err)
}

/// Stationary filter covariance; raises if the flow does not settle by `max_t`.
#[pyfunction]
#[pyo3(signature = (model, tol=1e-12, max_t=200.0))]
fn solve_are<'py>(py: Python<'py>, model: &PyModel, tol: f64, max_t: f64) -> PyResult<Bound<'py, PyAny>> {
    let sol = kalman::solve_are(&model.inner, tol, max_t).map_err(err)?;
    to_py(py, &sol.to_json())
}

fn report_dict<'py>(py: Python<'py>, report: &experiments::StabilizationReport, mut sidecar: Value) -> PyResult<Bound<'py, PyAny>> {
    sidecar["times"] = json!(report.times);
    sidecar["posterior_gap"] = json!(report.posterior_gap);
    sidecar["prior_gap"] = json!(report.prior_gap);
    to_py(py, &sidecar)
}

/// Two filters from `prior_true` and `prior_wrong` on one observation path.
/// `particles=None` runs the Kalman-Bucy pair.
#[pyfunction]
#[pyo3(signature = (model, prior_true, prior_wrong, t_end, dt, seed, particles=None))]
#[allow(clippy::too_many_arguments)]
fn twin<'py>(
    py: Python<'py>,
    model: &PyModel,
    prior_true: &PyGaussian,
    prior_wrong: &PyGaussian,
    t_end: f64,
    dt: f64,
    seed: u64,
    particles: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let filter = particles.map_or(FilterKind::Kalman, |particles| FilterKind::Particle { particles });
    let report = experiments::run_twin_filter(&model.inner, &prior_true.inner, &prior_wrong.inner, t_end, dt, seed, filter)
        .map_err(err)?;
    report_dict(py, &report, report.sidecar_json())
}

/// Two-dimensional unstable example; `mode` is `unstable_only`, `stable_only` or `sum`.
#[pyfunction]
#[pyo3(signature = (mode="unstable_only", lambda1=-1.0, lambda2=1.0, h=1.0, t_end=30.0, dt=1e-3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn app2d<'py>(
    py: Python<'py>,
    mode: &str,
    lambda1: f64,
    lambda2: f64,
    h: f64,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mode: ObsMode = by_name(mode)?;
    let opts = experiments::ExperimentOptions::default();
    let r = experiments::run_planar(lambda1, lambda2, h, mode, t_end, dt, seed, &opts).map_err(err)?;
    report_dict(py, &r.report, r.sidecar_json())
}

/// `(times, values)` for one error-growth model.
#[pyfunction]
#[pyo3(signature = (kind, t_end, dt, alpha=1.0, s=0.0, v_inf=100.0, v0=1.0, a_lorenz=None))]
#[allow(clippy::too_many_arguments)]
fn error_growth_curve(
    kind: &str,
    t_end: f64,
    dt: f64,
    alpha: f64,
    s: f64,
    v_inf: f64,
    v0: f64,
    a_lorenz: Option<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let kind: ErrorModelKind = by_name(kind)?;
    let p = ErrorGrowthParams {
        alpha,
        s,
        v_inf,
        v0,
        a_lorenz: a_lorenz.unwrap_or_else(|| error_growth::matched_lorenz_coefficient(alpha, v_inf)),
    };
    let series = error_growth::integrate_error_model(kind, &p, t_end, dt).map_err(err)?;
    Ok((series.times, series.values))
}

/// Least-squares fit of one error-growth model to `(times, values)`.
#[pyfunction]
#[pyo3(signature = (kind, times, values, seed=0))]
fn fit_error_model<'py>(py: Python<'py>, kind: &str, times: Vec<f64>, values: Vec<f64>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let kind: ErrorModelKind = by_name(kind)?;
    let fit = error_growth::fit_error_model(kind, &times, &values, seed).map_err(err)?;
    to_py(py, &serde_json::to_value(&fit).map_err(|e| FastabError::new_err(e.to_string()))?)
}

/// Validates a JSON configuration and returns it with every default filled in.
#[pyfunction]
fn parse_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config::parse_config(text).map_err(err)?;
    to_py(py, &cfg.to_json())
}

/// Runs a JSON configuration into `directory`; returns `(exit_code, files)`.
#[pyfunction]
fn run_config(text: &str, directory: &str) -> PyResult<(i32, Vec<String>)> {
    let cfg = config::parse_config(text).map_err(err)?;
    let out = runner::run_into(&cfg, std::path::Path::new(directory)).map_err(err)?;
    Ok((out.exit_code, out.files))
}

#[pymodule]
fn fastab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FastabError", m.py().get_type::<FastabError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPath>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_from_prior, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_bucy, m)?)?;
    m.add_function(wrap_pyfunction!(particle_filter, m)?)?;
    m.add_function(wrap_pyfunction!(w2_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(w2_empirical, m)?)?;
    m.add_function(wrap_pyfunction!(solve_are, m)?)?;
    m.add_function(wrap_pyfunction!(twin, m)?)?;
    m.add_function(wrap_pyfunction!(app2d, m)?)?;
    m.add_function(wrap_pyfunction!(error_growth_curve, m)?)?;
    m.add_function(wrap_pyfunction!(fit_error_model, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
