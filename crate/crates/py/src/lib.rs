//! Python bindings: topology, channel model, simulator, likelihood
//! estimator and trained-model inference.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use branchmc::channel::{self, ChannelParams, SymbolSequence, VelocityMode};
use branchmc::mle::{self, KnownChannel, MleConfig, NoiseModel};
use branchmc::nn::{self, ModelParams};
use branchmc::pipeline;
use branchmc::sim::{self, SimConfig};
use branchmc::{BranchTopology, CountTrace, TimeGrid, TraceMeta};

fn py_err(e: branchmc::Error) -> PyErr {
    match e {
        branchmc::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        branchmc::Error::Lookup { .. } => PyIndexError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_sequences(bits: &[String]) -> PyResult<Vec<SymbolSequence>> {
    bits.iter()
        .map(|s| SymbolSequence::parse(s).map_err(py_err))
        .collect()
}

fn parse<T: std::str::FromStr<Err = branchmc::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Branches merging into one main tube with a receiver.
#[pyclass(name = "Topology", module = "branchmc", frozen)]
struct PyTopology {
    inner: BranchTopology,
}

#[pymethods]
impl PyTopology {
    /// Identical reference branches with the given Tx-Rx distances (m).
    #[staticmethod]
    fn symmetric(distances: Vec<f64>) -> PyResult<Self> {
        Ok(PyTopology {
            inner: BranchTopology::symmetric(&distances).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = BranchTopology::from_json_str(text)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyTopology { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTopology {
            inner: BranchTopology::load(&path).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    fn with_distances(&self, distances: Vec<f64>) -> PyResult<Self> {
        Ok(PyTopology {
            inner: self.inner.with_distances(&distances).map_err(py_err)?,
        })
    }

    #[getter]
    fn branch_count(&self) -> usize {
        self.inner.branch_count()
    }

    fn distances(&self) -> Vec<f64> {
        self.inner.distances()
    }

    fn tx_rx_distance(&self, branch: usize) -> PyResult<f64> {
        self.inner.tx_rx_distance(branch).map_err(py_err)
    }

    #[getter]
    fn main_speed(&self) -> f64 {
        self.inner.main_speed()
    }

    #[pyo3(signature = (branch, mode = "harmonic"))]
    fn effective_velocity(&self, branch: usize, mode: &str) -> PyResult<f64> {
        channel::effective_velocity(&self.inner, branch, parse(mode)?).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Topology(distances={:?})", self.inner.distances())
    }
}

/// Observation probability of one released molecule at time `t`.
#[pyfunction]
fn p_ob(d: f64, l_rx: f64, v_eff: f64, t: f64) -> PyResult<f64> {
    let params = ChannelParams::new(d, l_rx, v_eff, 1.0, 1.0).map_err(py_err)?;
    Ok(channel::p_ob(&params, t))
}

/// Earliest arrival and full-passage times `(t1, t2)`.
#[pyfunction]
fn arrival_window(d: f64, l_rx: f64, v_eff: f64) -> PyResult<(f64, f64)> {
    let params = ChannelParams::new(d, l_rx, v_eff, 1.0, 1.0).map_err(py_err)?;
    Ok(channel::arrival_window(&params))
}

/// Expected receiver counts for bit strings sent from each branch.
#[pyfunction]
#[pyo3(signature = (topology, sequences, n_tx = 1000.0, t_s = 1.0, dt = 0.005, horizon = 25.0, velocity = "harmonic"))]
fn expected_trace(
    topology: &PyTopology,
    sequences: Vec<String>,
    n_tx: f64,
    t_s: f64,
    dt: f64,
    horizon: f64,
    velocity: &str,
) -> PyResult<Vec<f64>> {
    let mode: VelocityMode = parse(velocity)?;
    let seqs = parse_sequences(&sequences)?;
    let params = (0..topology.inner.branch_count())
        .map(|i| ChannelParams::for_branch(&topology.inner, i, mode, n_tx, t_s))
        .collect::<branchmc::Result<Vec<_>>>()
        .map_err(py_err)?;
    let grid = TimeGrid::over_horizon(dt, horizon).map_err(py_err)?;
    Ok(channel::expected_trace(&params, &seqs, grid)
        .map_err(py_err)?
        .counts)
}

/// One Monte Carlo run; returns the sampled counts.
#[pyfunction]
#[pyo3(signature = (topology, sequences, seed, n_tx = 1000, t_s = 1.0, dt = 0.005, horizon = 25.0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    topology: &PyTopology,
    sequences: Vec<String>,
    seed: u64,
    n_tx: u64,
    t_s: f64,
    dt: f64,
    horizon: f64,
) -> PyResult<Vec<f64>> {
    let seqs = parse_sequences(&sequences)?;
    let cfg = SimConfig {
        n_tx,
        t_s,
        dt_sample: dt,
        horizon,
        seed,
        ..SimConfig::new(topology.inner.clone())
    };
    let trace = py
        .detach(|| sim::run_iteration(&cfg, &seqs, seed))
        .map_err(py_err)?;
    Ok(trace.counts)
}

/// Maximum-likelihood distances for a trace with known sequences.
/// Returns `(distances, log_likelihood)`.
#[pyfunction]
#[pyo3(signature = (
    counts, dt, topology, sequences, n_tx = 1000.0, t_s = 1.0,
    grid = (0.02, 0.26, 0.01), tolerance = 1e-4, noise = "poisson", velocity = "harmonic", seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn mle_estimate(
    py: Python<'_>,
    counts: Vec<f64>,
    dt: f64,
    topology: &PyTopology,
    sequences: Vec<String>,
    n_tx: f64,
    t_s: f64,
    grid: (f64, f64, f64),
    tolerance: f64,
    noise: &str,
    velocity: &str,
    seed: u64,
) -> PyResult<(Vec<f64>, f64)> {
    let noise: NoiseModel = parse(noise)?;
    let known = KnownChannel {
        topology: topology.inner.clone(),
        sequences: parse_sequences(&sequences)?,
        n_tx,
        t_s,
        velocity_mode: parse(velocity)?,
        dt_sample: Some(dt),
    };
    let cfg = MleConfig::new(grid.0, grid.1, grid.2, tolerance, noise)
        .map_err(py_err)?
        .for_branches(known.topology.branch_count(), seed);
    let trace = CountTrace {
        dt_sample: dt,
        counts,
        meta: TraceMeta::default(),
    };
    let est = py
        .detach(|| mle::estimate(&trace, &known, &cfg))
        .map_err(py_err)?;
    Ok((est.distances, est.log_likelihood))
}

/// `|predicted - ground_truth| / ground_truth` in percent.
#[pyfunction]
fn relative_error(predicted: f64, ground_truth: f64) -> PyResult<f64> {
    pipeline::relative_error(predicted, ground_truth).map_err(py_err)
}

/// A trained windowed BiLSTM regressor.
#[pyclass(name = "Model", module = "branchmc", frozen)]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: ModelParams::load(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn outputs(&self) -> usize {
        self.inner.config.outputs
    }

    #[getter]
    fn input_scale(&self) -> f64 {
        self.inner.input_scale
    }

    /// Per-window estimates and their mean, each sorted ascending.
    fn predict(
        &self,
        py: Python<'_>,
        counts: Vec<f64>,
        dt: f64,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let trace = CountTrace {
            dt_sample: dt,
            counts,
            meta: TraceMeta::default(),
        };
        let p = py
            .detach(|| nn::predict_trace(&self.inner, &trace))
            .map_err(py_err)?;
        Ok((p.per_window, p.aggregate))
    }
}

#[pymodule]
#[pyo3(name = "branchmc")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(p_ob, m)?)?;
    m.add_function(wrap_pyfunction!(arrival_window, m)?)?;
    m.add_function(wrap_pyfunction!(expected_trace, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mle_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    Ok(())
}
