//! Python bindings for the `ltqkd` key-rate calculator.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ltqkd::channel::ChannelConfig;
use ltqkd::config::RunConfig;
use ltqkd::decoy::EstimationMode;
use ltqkd::key_length::KeyRateResult;
use ltqkd::optimize::{optimize_rate, OptimizerConfig, SearchSpace};
use ltqkd::protocol::ProtocolParams;
use ltqkd::sweep::run_sweep;
use ltqkd::{concentration, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Ordering(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Round-trips a serde value through Python's json module.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Channel", from_py_object)]
#[derive(Clone)]
struct PyChannel {
    inner: ChannelConfig,
}

#[pymethods]
impl PyChannel {
    #[new]
    #[pyo3(signature = (distance_km=0.0, xi=0.0, fluct_r=0.0, atten_db_per_km=0.2, det_eff=0.15, dark_prob=5e-7, e_mis=0.01))]
    fn new(
        distance_km: f64,
        xi: f64,
        fluct_r: f64,
        atten_db_per_km: f64,
        det_eff: f64,
        dark_prob: f64,
        e_mis: f64,
    ) -> PyResult<Self> {
        let inner = ChannelConfig {
            distance_km,
            atten_db_per_km,
            det_eff,
            dark_prob,
            e_mis,
            fluct_r,
            xi,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn distance_km(&self) -> f64 {
        self.inner.distance_km
    }

    #[getter]
    fn xi(&self) -> f64 {
        self.inner.xi
    }

    #[getter]
    fn fluct_r(&self) -> f64 {
        self.inner.fluct_r
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Params", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: ProtocolParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (p_z, p_ks, p_kd1, k_s, k_d1, k_d2=2e-4))]
    fn new(p_z: f64, p_ks: f64, p_kd1: f64, k_s: f64, k_d1: f64, k_d2: f64) -> Self {
        Self {
            inner: ProtocolParams {
                p_z,
                p_ks,
                p_kd1,
                k_s,
                k_d1,
                k_d2,
            },
        }
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "KeyRate")]
struct PyKeyRate {
    inner: KeyRateResult,
}

#[pymethods]
impl PyKeyRate {
    #[getter]
    fn rate(&self) -> f64 {
        self.inner.rate
    }

    #[getter]
    fn ell(&self) -> u64 {
        self.inner.ell
    }

    #[getter]
    fn m0_lower(&self) -> f64 {
        self.inner.m0_l
    }

    #[getter]
    fn m1_lower(&self) -> f64 {
        self.inner.m1_l
    }

    #[getter]
    fn eph_upper(&self) -> f64 {
        self.inner.e_ph_u
    }

    #[getter]
    fn e_z(&self) -> f64 {
        self.inner.e_z
    }

    #[getter]
    fn aborted(&self) -> bool {
        self.inner.aborted
    }

    #[getter]
    fn abort_reason(&self) -> Option<&'static str> {
        self.inner.abort_reason.map(|a| a.as_str())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "KeyRate(rate={:e}, ell={}, aborted={})",
            self.inner.rate, self.inner.ell, self.inner.aborted
        )
    }
}

#[pyclass(name = "Evaluator")]
struct PyEvaluator {
    inner: ltqkd::protocol::Evaluator,
}

#[pymethods]
impl PyEvaluator {
    #[new]
    #[pyo3(signature = (channel, n_total=1e12, eps_sec=1e-10, eps_c=1e-15, asymptotic=false))]
    fn new(
        channel: PyChannel,
        n_total: f64,
        eps_sec: f64,
        eps_c: f64,
        asymptotic: bool,
    ) -> PyResult<Self> {
        let ev = ltqkd::protocol::Evaluator::for_channel(channel.inner, eps_sec, eps_c, n_total)
            .map_err(py_err)?;
        Ok(Self {
            inner: if asymptotic { ev.asymptotic() } else { ev },
        })
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            EstimationMode::Exact => "exact",
            EstimationMode::Fluctuating => "fluctuating",
        }
    }

    fn at_distance(&self, distance_km: f64) -> Self {
        Self {
            inner: self.inner.at_distance(distance_km),
        }
    }

    fn evaluate(&self, py: Python<'_>, params: PyParams) -> PyResult<PyKeyRate> {
        let res = py
            .detach(|| self.inner.evaluate(&params.inner))
            .map_err(py_err)?;
        Ok(PyKeyRate { inner: res })
    }

    /// Returns (params, result, evaluations).
    #[pyo3(signature = (seed=0, grid_points=7, max_evaluations=1500))]
    fn optimize(
        &self,
        py: Python<'_>,
        seed: u64,
        grid_points: usize,
        max_evaluations: usize,
    ) -> PyResult<(PyParams, PyKeyRate, usize)> {
        let opts = OptimizerConfig {
            seed,
            grid_points,
            max_evaluations,
            ..Default::default()
        };
        let res = py
            .detach(|| optimize_rate(&self.inner, &SearchSpace::default(), &opts))
            .map_err(py_err)?;
        Ok((
            PyParams {
                inner: res.best_params,
            },
            PyKeyRate { inner: res.best },
            res.evaluations,
        ))
    }
}

/// Runs the sweep described by a TOML config string and returns the CSV text.
#[pyfunction]
fn sweep_csv(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = RunConfig::from_toml(config_toml).map_err(py_err)?;
    let table = py.detach(|| run_sweep(&cfg)).map_err(py_err)?;
    Ok(table.to_csv_string())
}

/// Runs the sweep and returns one dict per distance.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = RunConfig::from_toml(config_toml).map_err(py_err)?;
    let table = py.detach(|| run_sweep(&cfg)).map_err(py_err)?;
    table
        .rows
        .iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("distance_km", row.distance_km)?;
            d.set_item("params", to_py(py, &row.params)?)?;
            d.set_item("result", to_py(py, &row.result)?)?;
            d.set_item("evaluations", row.evaluations)?;
            Ok(d)
        })
        .collect()
}

/// Full validation report as a dict.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn validate<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| ltqkd::validation::run_validation(seed))
        .map_err(py_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn g_c(x: f64, y: f64) -> f64 {
    concentration::g_c(x, y)
}

#[pyfunction]
fn g_h(x: f64, y: f64) -> f64 {
    concentration::g_h(x, y)
}

#[pyfunction]
fn g_a(x: f64, y: f64) -> f64 {
    concentration::g_a(x, y)
}

#[pyfunction]
fn binary_entropy(x: f64) -> PyResult<f64> {
    ltqkd::key_length::binary_entropy(x).map_err(py_err)
}

#[pymodule]
fn ltqkd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChannel>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyKeyRate>()?;
    m.add_class::<PyEvaluator>()?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_csv, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(g_c, m)?)?;
    m.add_function(wrap_pyfunction!(g_h, m)?)?;
    m.add_function(wrap_pyfunction!(g_a, m)?)?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    Ok(())
}
