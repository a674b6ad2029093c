//! Python bindings: scenario presets, run configuration, whole runs,
//! step-by-step simulation, logs and summaries, plus the individual model
//! functions for experimentation.

use dashsim::adapters::pd_compute_gains;
use dashsim::channel::build_markov_matrix;
use dashsim::engine::SCENARIOS;
use dashsim::qoe;
use dashsim::{
    scenario_scaled, summarize_with, EstimatorKind, Level, MetricAParams, QualityMap, RewardHistories, RewardParams,
    SessionLog, StepRecord, Strategy, SystemState,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: dashsim::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn record_dict<'py>(py: Python<'py>, r: &StepRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("episode", r.episode)?;
    d.set_item("segment", r.segment)?;
    d.set_item("method", r.method.name())?;
    d.set_item("level", r.level.0)?;
    d.set_item("bitrate_kbps", r.bitrate_kbps)?;
    d.set_item("ssim", r.ssim)?;
    d.set_item("reward", r.reward)?;
    d.set_item("buffer_s", r.buffer_s)?;
    d.set_item("rebuffer_s", r.rebuffer_s)?;
    d.set_item("beta_est_kbps", r.beta_est_kbps)?;
    d.set_item("beta_real_kbps", r.beta_real_kbps)?;
    d.set_item("download_s", r.download_s)?;
    let vr = PyDict::new(py);
    for (kind, v) in dashsim::MethodKind::ALL.iter().zip(r.virtual_rewards) {
        if let Some(v) = v {
            vr.set_item(kind.name(), v)?;
        }
    }
    d.set_item("virtual_rewards", vr)?;
    Ok(d)
}

/// Simulation settings. Start from a preset with `RunConfig.scenario(name)`.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: dashsim::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    #[pyo3(signature = (name, episodes=None, change_episode=None))]
    fn scenario(name: &str, episodes: Option<u64>, change_episode: Option<u64>) -> PyResult<Self> {
        let inner = scenario_scaled(name, episodes, change_episode).map_err(py_err)?;
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = dashsim::RunConfig::from_toml(text).map_err(py_err)?;
        Ok(PyRunConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn episodes(&self) -> u64 {
        self.inner.episodes
    }

    #[setter]
    fn set_episodes(&mut self, episodes: u64) {
        self.inner.episodes = episodes;
    }

    #[getter]
    fn segments_per_episode(&self) -> u64 {
        self.inner.segments_per_episode
    }

    #[setter]
    fn set_segments_per_episode(&mut self, n: u64) {
        self.inner.segments_per_episode = n;
    }

    #[getter]
    fn segment_duration(&self) -> f64 {
        self.inner.ladder.segment_duration
    }

    /// `iams[:N]`, `imms[:N]` or `fixed:<rate|pd|q>`.
    #[getter]
    fn controller(&self) -> String {
        self.inner.controller.strategy.to_string()
    }

    #[setter]
    fn set_controller(&mut self, spec: &str) -> PyResult<()> {
        self.inner.controller.strategy = spec.parse::<Strategy>().map_err(py_err)?;
        Ok(())
    }

    /// `last` or `ewma:<alpha>`. Write-only; read it back through `to_toml`.
    #[setter]
    fn set_estimator(&mut self, spec: &str) -> PyResult<()> {
        self.inner.estimator = spec.parse::<EstimatorKind>().map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn virtual_uses_estimate(&self) -> bool {
        self.inner.virtual_uses_estimate
    }

    #[setter]
    fn set_virtual_uses_estimate(&mut self, v: bool) {
        self.inner.virtual_uses_estimate = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(controller='{}', seed={}, episodes={}, segments_per_episode={})",
            self.inner.controller.strategy, self.inner.seed, self.inner.episodes, self.inner.segments_per_episode
        )
    }
}

/// Per-segment log of a finished run.
#[pyclass(name = "SessionLog", from_py_object)]
#[derive(Clone)]
struct PySessionLog {
    inner: SessionLog,
}

#[pymethods]
impl PySessionLog {
    #[staticmethod]
    #[pyo3(signature = (text, segment_duration=2.0))]
    fn from_csv(text: &str, segment_duration: f64) -> PyResult<Self> {
        let inner = SessionLog::read_csv(text.as_bytes(), segment_duration).map_err(py_err)?;
        Ok(PySessionLog { inner })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn rewards(&self) -> Vec<f64> {
        self.inner.rewards()
    }

    #[getter]
    fn startup_delay(&self) -> f64 {
        self.inner.startup_delay
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.records.iter().map(|r| record_dict(py, r)).collect()
    }

    /// Long-term QoE, rebuffering, switch counts and both session metrics.
    #[pyo3(signature = (warmup=0, clamp_stall=true))]
    fn summary<'py>(&self, py: Python<'py>, warmup: usize, clamp_stall: bool) -> PyResult<Bound<'py, PyDict>> {
        let params = MetricAParams {
            clamp_stall,
            ..MetricAParams::default()
        };
        let s = summarize_with(&self.inner, warmup, params).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("segments", s.segments)?;
        d.set_item("warmup_segments", s.warmup_segments)?;
        d.set_item("lt_qoe", s.lt_qoe)?;
        d.set_item("lt_qoe_post_warmup", s.lt_qoe_post_warmup)?;
        d.set_item("total_rebuffer_s", s.total_rebuffer_s)?;
        d.set_item("rebuffer_events", s.rebuffer_events)?;
        d.set_item("startup_delay_s", s.startup_delay_s)?;
        d.set_item("method_switches", s.method_switches)?;
        d.set_item("quality_switches", s.quality_switches)?;
        d.set_item("qoe_a", s.qoe_a)?;
        d.set_item("qoe_a_literal", s.qoe_a_literal)?;
        d.set_item("qoe_b", s.qoe_b)?;
        d.set_item("selection_shares", s.selection_shares)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("SessionLog(segments={})", self.inner.len())
    }
}

/// A run advanced one segment at a time.
#[pyclass(name = "Simulation", unsendable)]
struct PySimulation {
    inner: dashsim::Simulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(config: &PyRunConfig) -> PyResult<Self> {
        let inner = dashsim::Simulation::new(config.inner.clone()).map_err(py_err)?;
        Ok(PySimulation { inner })
    }

    /// The next real request as a dict, or `None` once the run is over.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        match self.inner.step().map_err(py_err)? {
            Some(r) => Ok(Some(record_dict(py, &r)?)),
            None => Ok(None),
        }
    }

    fn run_to_end(&mut self) -> PyResult<PySessionLog> {
        let inner = self.inner.run_to_end().map_err(py_err)?;
        Ok(PySessionLog { inner })
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    /// Q-table as CSV, or `None` without a Q-learner in the pool.
    fn q_table_csv(&self) -> Option<String> {
        self.inner.q_table().map(|t| t.to_csv())
    }
}

#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    SCENARIOS.to_vec()
}

#[pyfunction]
fn run(config: &PyRunConfig) -> PyResult<PySessionLog> {
    let inner = dashsim::run(&config.inner).map_err(py_err)?;
    Ok(PySessionLog { inner })
}

/// Per-step reward with the default weights.
#[pyfunction]
#[pyo3(signature = (q, q_prev, buffer, d_est, segment_duration=2.0, beta_est=1.0, complexity=1))]
fn reward(q: f64, q_prev: f64, buffer: f64, d_est: f64, segment_duration: f64, beta_est: f64, complexity: usize) -> f64 {
    let state = SystemState {
        q_prev,
        beta_est,
        complexity,
        buffer,
    };
    qoe::reward(q, &state, d_est, segment_duration, &RewardParams::default())
}

/// `(next_buffer_estimate, penalty)` with the default reference buffer.
#[pyfunction]
#[pyo3(signature = (buffer, d_est, segment_duration=2.0))]
fn buffer_penalty(buffer: f64, d_est: f64, segment_duration: f64) -> (f64, f64) {
    qoe::buffer_penalty(buffer, segment_duration, d_est, &RewardParams::default())
}

#[pyfunction]
fn markov_matrix(k: usize, p: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = build_markov_matrix(k, p).map_err(py_err)?;
    Ok((0..m.size()).map(|i| m.row(i).to_vec()).collect())
}

/// `(eta, k_p, k_d)`; `eta` defaults to its lower bound.
#[pyfunction]
#[pyo3(signature = (segment_duration, k_d, eta=None))]
fn pd_gains(segment_duration: f64, k_d: f64, eta: Option<f64>) -> PyResult<(f64, f64, f64)> {
    let g = pd_compute_gains(segment_duration, k_d, eta).map_err(py_err)?;
    Ok((g.eta, g.k_p, g.k_d))
}

/// Index of the method IAMS would select. `histories[i]` holds method `i`'s
/// rewards, oldest first.
#[pyfunction]
fn iams_select(histories: Vec<Vec<f64>>, window: usize, current: usize) -> PyResult<usize> {
    dashsim::controller::iams_select(&RewardHistories::from_rows(&histories), window, current).map_err(py_err)
}

#[pyfunction]
fn imms_select(histories: Vec<Vec<f64>>, window: usize, incumbent: usize) -> PyResult<usize> {
    dashsim::controller::imms_select(&RewardHistories::from_rows(&histories), window, incumbent).map_err(py_err)
}

/// SSIM of `level` (1-based) at `complexity` (1-based) from the built-in map.
#[pyfunction]
fn quality_of(level: usize, complexity: usize) -> PyResult<f64> {
    QualityMap::default().quality_of(Level(level), complexity).map_err(py_err)
}

#[pymodule(name = "dashsim")]
fn dashsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PySessionLog>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(buffer_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(markov_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(pd_gains, m)?)?;
    m.add_function(wrap_pyfunction!(iams_select, m)?)?;
    m.add_function(wrap_pyfunction!(imms_select, m)?)?;
    m.add_function(wrap_pyfunction!(quality_of, m)?)?;
    Ok(())
}
