//! Python bindings: channel and scheduling formulas, the rate posterior,
//! seeded experiments and the exact small-instance oracle.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use wdln_sched::bayes::{PosteriorState, Prior};
use wdln_sched::channel::{self, ChannelParams, LinkModel};
use wdln_sched::config::ExperimentConfig;
use wdln_sched::harness;
use wdln_sched::oracle;
use wdln_sched::scheduler;
use wdln_sched::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Parse { .. } | Error::InvalidSchedule { .. } | Error::TooLarge(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Pathloss in dB at `distance_km`.
#[pyfunction]
fn pathloss_db(distance_km: f64) -> f64 {
    channel::pathloss_db(distance_km)
}

/// Linear SNR of a device at `distance_km` for small-scale fading power `fading`.
#[pyfunction]
#[pyo3(signature = (distance_km, fading=1.0))]
fn snr(distance_km: f64, fading: f64) -> PyResult<f64> {
    let params = ChannelParams::with_distance(distance_km).map_err(to_py)?;
    Ok(channel::snr_linear(channel::gain_from_fading(&params, fading), &params))
}

/// Packet delivery probability under uncoded BPSK.
#[pyfunction]
#[pyo3(signature = (snr, packet_bits=channel::DEFAULT_PACKET_BITS))]
fn success_probability(snr: f64, packet_bits: u32) -> f64 {
    LinkModel::BpskUncoded.success_probability(snr, packet_bits)
}

#[pyfunction]
fn effectivity_score(n_plus_m: Vec<u64>, scheduled: Vec<bool>, delivered: Vec<bool>, gamma: f64) -> PyResult<f64> {
    if n_plus_m.len() != scheduled.len() || scheduled.len() != delivered.len() {
        return Err(PyValueError::new_err("n_plus_m, scheduled and delivered must have equal length"));
    }
    Ok(scheduler::effectivity_score(&n_plus_m, &scheduled, &delivered, gamma))
}

/// Indices of the devices the greedy policy schedules.
#[pyfunction]
fn greedy_policy(backlog: Vec<f64>, rates: Vec<f64>, success_probs: Vec<f64>, capacity: usize) -> PyResult<Vec<usize>> {
    if backlog.len() != rates.len() || rates.len() != success_probs.len() {
        return Err(PyValueError::new_err("backlog, rates and success_probs must have equal length"));
    }
    Ok(scheduler::greedy_policy(&backlog, &rates, &success_probs, capacity).indices())
}

#[pyfunction]
fn compute_required_rounds(series: Vec<f64>, target: f64) -> Option<usize> {
    harness::compute_required_rounds(&series, target)
}

#[pyfunction]
fn compute_regret(rewards: Vec<f64>, j_star: f64) -> Vec<f64> {
    harness::compute_regret(&rewards, j_star)
}

/// Gamma posterior over per-device arrival rates (Jeffreys prior).
#[pyclass(name = "Posterior")]
struct PyPosterior {
    inner: PosteriorState,
}

#[pymethods]
impl PyPosterior {
    #[new]
    #[pyo3(signature = (num_devices, epsilon_rate=wdln_sched::bayes::DEFAULT_EPSILON_RATE))]
    fn new(num_devices: usize, epsilon_rate: f64) -> PyResult<Self> {
        let prior = Prior::Jeffreys { epsilon_rate };
        prior.validate().map_err(to_py)?;
        Ok(Self {
            inner: PosteriorState::new(num_devices, prior),
        })
    }

    fn update(&mut self, device: usize, m_total: u64, rounds_covered: u64) -> PyResult<()> {
        if device >= self.inner.num_devices() {
            return Err(PyValueError::new_err("device index out of range"));
        }
        if rounds_covered == 0 {
            return Err(PyValueError::new_err("rounds_covered must be at least 1"));
        }
        self.inner.update(device, m_total, rounds_covered);
        Ok(())
    }

    fn mean(&self, device: usize) -> PyResult<f64> {
        if device >= self.inner.num_devices() {
            return Err(PyValueError::new_err("device index out of range"));
        }
        Ok(self.inner.mean(device))
    }

    fn means(&self) -> Vec<f64> {
        self.inner.means()
    }

    fn shape_rate(&self, device: usize) -> PyResult<(f64, f64)> {
        if device >= self.inner.num_devices() {
            return Err(PyValueError::new_err("device index out of range"));
        }
        Ok(self.inner.shape_rate(device))
    }

    fn __repr__(&self) -> String {
        format!("Posterior(num_devices={})", self.inner.num_devices())
    }
}

/// Parsed and validated experiment configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults (25-device network) when `toml` is omitted.
    #[new]
    #[pyo3(signature = (toml=""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml_str(toml).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_file(path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn rounds(&self) -> u64 {
        self.inner.experiment.rounds
    }

    #[setter]
    fn set_rounds(&mut self, rounds: u64) {
        self.inner.experiment.rounds = rounds;
    }

    #[getter]
    fn instances(&self) -> u64 {
        self.inner.experiment.instances
    }

    #[setter]
    fn set_instances(&mut self, instances: u64) -> PyResult<()> {
        if instances == 0 {
            return Err(PyValueError::new_err("instances must be at least 1"));
        }
        self.inner.experiment.instances = instances;
        Ok(())
    }

    #[getter]
    fn schedulers(&self) -> Vec<String> {
        self.inner.scheduler.names.clone()
    }

    #[setter]
    fn set_schedulers(&mut self, names: Vec<String>) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.scheduler.names = names;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn learning(&self) -> bool {
        self.inner.experiment.learning
    }

    #[setter]
    fn set_learning(&mut self, on: bool) {
        self.inner.experiment.learning = on;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(schedulers={:?}, rounds={}, instances={})",
            self.inner.scheduler.names, self.inner.experiment.rounds, self.inner.experiment.instances
        )
    }
}

/// Runs the experiment and returns the summary as a dict. Writes the CSV and
/// JSON outputs too when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None))]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig, out_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let output = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    if let Some(dir) = out_dir {
        harness::emit_outputs(&output.results, &output.summary, &dir).map_err(to_py)?;
    }
    json_to_py(py, &output.summary)
}

/// Solves the `[oracle]` instance of `config` and returns the report as a dict.
#[pyfunction]
fn solve_oracle<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let inst = config.inner.small_instance().map_err(to_py)?;
    let (tol, max_iter) = (config.inner.oracle.tolerance, config.inner.oracle.max_iter);
    let (_, _, report) = py.detach(|| oracle::solve(&inst, tol, max_iter)).map_err(to_py)?;
    json_to_py(py, &report)
}

#[pymodule]
fn wdln(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pathloss_db, m)?)?;
    m.add_function(wrap_pyfunction!(snr, m)?)?;
    m.add_function(wrap_pyfunction!(success_probability, m)?)?;
    m.add_function(wrap_pyfunction!(effectivity_score, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_policy, m)?)?;
    m.add_function(wrap_pyfunction!(compute_required_rounds, m)?)?;
    m.add_function(wrap_pyfunction!(compute_regret, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(solve_oracle, m)?)?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PyConfig>()?;
    Ok(())
}
