//! Python bindings for `edgecode`.

use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use edgecode::analysis::{self, CostScheme};
use edgecode::coding::{self, Scheme};
use edgecode::linalg::{coded_matvec_reference, DenseMatrix};
use edgecode::runtime::{launch_local_cluster, ClusterConfig, StragglerMode, StragglerPolicy, Transport};
use edgecode::trainers::{self, Hyper, LabeledDataset, LocalEngine, Model};
use edgecode::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::InvalidDimensions { .. } | Error::Configuration(_) | Error::Parse { .. } | Error::Data(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix needs at least one row"));
    }
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

/// Coefficient grid of an (n, k) code.
#[pyclass(name = "GeneratorMatrix", module = "edgecode_py", frozen)]
struct PyGenerator(coding::GeneratorMatrix);

#[pymethods]
impl PyGenerator {
    /// `scheme` is one of "mds", "rs", "rlnc"; `seed` only matters for RLNC.
    #[new]
    #[pyo3(signature = (scheme, k, n, seed = 0))]
    fn new(scheme: &str, k: usize, n: usize, seed: u64) -> PyResult<Self> {
        coding::GeneratorMatrix::build(parse(scheme)?, k, n, seed).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (rows, scheme = "rlnc", seed = 0))]
    fn from_rows(rows: Vec<Vec<f64>>, scheme: &str, seed: u64) -> PyResult<Self> {
        coding::GeneratorMatrix::from_rows(&rows, parse(scheme)?, seed).map(Self).map_err(to_py)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn scheme(&self) -> String {
        self.0.scheme().to_string()
    }

    fn column(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.0.n() {
            return Err(PyValueError::new_err(format!("column {j} out of range")));
        }
        Ok(self.0.column(j))
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.0.rows()
    }

    /// `(worker_ids, pivot_columns)` if `ids` span the code, else `None`.
    fn decodable(&self, ids: Vec<usize>) -> PyResult<Option<(Vec<usize>, Vec<usize>)>> {
        Ok(self.0.decodable(&ids).map_err(to_py)?.map(|d| (d.worker_ids, d.pivot_columns)))
    }

    /// Encodes `matrix` across all workers and decodes `matrix @ x` from `completed` only.
    fn coded_matvec(&self, matrix_rows: Vec<Vec<f64>>, x: Vec<f64>, completed: Vec<usize>) -> PyResult<Vec<f64>> {
        coded_matvec_reference(&matrix(matrix_rows)?, &x, &self.0, &completed).map_err(to_py)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        let (g, used) = coding::GeneratorMatrix::from_bytes(&data).map_err(to_py)?;
        if used != data.len() {
            return Err(PyValueError::new_err("trailing bytes after generator"));
        }
        Ok(Self(g))
    }

    fn __repr__(&self) -> String {
        format!("GeneratorMatrix(scheme={:?}, k={}, n={})", self.0.scheme().to_string(), self.0.k(), self.0.n())
    }
}

fn report_dict<'py>(py: Python<'py>, r: &analysis::BandwidthReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", r.scheme.to_string())?;
    d.set_item("n", r.n)?;
    d.set_item("k", r.k)?;
    d.set_item("per_worker", r.per_redundant_worker)?;
    d.set_item("total", r.total)?;
    Ok(d)
}

/// Expected sub-matrix transfers for "mds", "rlnc" or "lt".
#[pyfunction]
fn bandwidth_cost<'py>(py: Python<'py>, scheme: &str, n: usize, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let s: CostScheme = parse(scheme)?;
    report_dict(py, &analysis::bandwidth_cost(s, n, k).map_err(to_py)?)
}

#[pyfunction]
fn scale_table<'py>(py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    analysis::scale_table().iter().map(|r| report_dict(py, r)).collect()
}

#[pyfunction]
#[pyo3(signature = (scheme, n, k, trials = 10_000, seed = 0))]
fn monte_carlo_extra_workers<'py>(
    py: Python<'py>,
    scheme: &str,
    n: usize,
    k: usize,
    trials: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let s: Scheme = parse(scheme)?;
    let est = py.detach(|| analysis::monte_carlo_extra_workers(s, n, k, trials, seed)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("scheme", est.scheme.to_string())?;
    d.set_item("n", est.n)?;
    d.set_item("k", est.k)?;
    d.set_item("trials", est.trials)?;
    d.set_item("mean_extra", est.mean_extra_workers)?;
    d.set_item("stderr", est.stderr)?;
    Ok(d)
}

/// Seeded synthetic dataset as `(rows, labels)`.
#[pyfunction]
#[pyo3(signature = (rows, cols, seed = 0, model = "lr"))]
fn synth_dataset(rows: usize, cols: usize, seed: u64, model: &str) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = edgecode::harness::synth_dataset(rows, cols, seed, parse(model)?).map_err(to_py)?;
    Ok(((0..d.n_samples()).map(|r| d.x.row(r).to_vec()).collect(), d.y))
}

fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>, model: Model) -> PyResult<LabeledDataset> {
    let y = y
        .into_iter()
        .map(|l| model.map_label(l).ok_or_else(|| PyValueError::new_err(format!("label {l} not admissible for {model}"))))
        .collect::<PyResult<Vec<f64>>>()?;
    LabeledDataset::new(matrix(x)?, y).map_err(to_py)
}

/// Uncoded gradient descent; returns `(w, objectives)`.
#[pyfunction]
#[pyo3(signature = (x, y, model = "lr", eta = 0.1, lam = 0.01, num_iter = 100, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_local(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    model: &str,
    eta: f64,
    lam: f64,
    num_iter: u64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let model: Model = parse(model)?;
    let data = dataset(x, y, model)?;
    let hyper = Hyper { eta, lambda: lam, num_iter };
    let out = py
        .detach(|| trainers::train(model, &mut LocalEngine::new(data.x.clone()), &data.y, data.n_samples(), hyper, seed))
        .map_err(to_py)?;
    Ok((out.w, out.objectives))
}

/// Coded gradient descent on a local master/worker cluster.
#[pyfunction]
#[pyo3(signature = (
    x, y, n, k, scheme = "mds", model = "lr", eta = 0.1, lam = 0.01, num_iter = 100, seed = 0,
    rlnc_seed = 0, stragglers = Vec::new(), slowdown = 20.0, delay_ms = None, transport = "in-process",
))]
#[allow(clippy::too_many_arguments)]
fn train_cluster<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    n: usize,
    k: usize,
    scheme: &str,
    model: &str,
    eta: f64,
    lam: f64,
    num_iter: u64,
    seed: u64,
    rlnc_seed: u64,
    stragglers: Vec<usize>,
    slowdown: f64,
    delay_ms: Option<f64>,
    transport: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let model: Model = parse(model)?;
    let data = dataset(x, y, model)?;
    let mut cfg = ClusterConfig::new(n, k, parse(scheme)?, model);
    cfg.hyper = Hyper { eta, lambda: lam, num_iter };
    cfg.init_seed = seed;
    cfg.rlnc_seed = rlnc_seed;
    cfg.transport = parse::<Transport>(transport)?;
    let mode = match delay_ms {
        Some(ms) if ms >= 0.0 => StragglerMode::FixedDelay(Duration::from_secs_f64(ms / 1e3)),
        Some(ms) => return Err(PyValueError::new_err(format!("delay_ms must be non-negative, got {ms}"))),
        None => StragglerMode::SlowdownFactor(slowdown),
    };
    cfg.policy = StragglerPolicy::explicit(stragglers, mode);
    let out = py.detach(|| launch_local_cluster(&cfg, &data)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("w", out.w)?;
    d.set_item("objectives", out.objectives)?;
    d.set_item("total_downloads", out.metrics.total_downloads())?;
    d.set_item("block_responses_relayed", out.metrics.block_responses_relayed)?;
    d.set_item("mean_iteration_nanos", out.metrics.mean_iteration_nanos())?;
    d.set_item("mean_extra_workers", out.metrics.mean_extra_workers())?;
    d.set_item("downloads_per_worker", out.metrics.workers.iter().map(|w| (w.downloads_x, w.downloads_xt)).collect::<Vec<_>>())?;
    Ok(d)
}

#[pymodule]
fn edgecode_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(bandwidth_cost, m)?)?;
    m.add_function(wrap_pyfunction!(scale_table, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_extra_workers, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_local, m)?)?;
    m.add_function(wrap_pyfunction!(train_cluster, m)?)?;
    Ok(())
}
