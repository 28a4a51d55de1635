//! Python bindings: the split model, the loss, prototype algebra,
//! communication accounting and whole experiments.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pfpl_core::analysis;
use pfpl_core::config::ExperimentConfig;
use pfpl_core::federation::{self, Variant};
use pfpl_core::numeric::{self, Matrix};
use pfpl_core::prototypes::{
    self, ClassCluster, ClusterMember, PrototypeEntry, PrototypeSet, WeightMode,
};
use pfpl_core::{runner, ClientId, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, cols: usize) -> PyResult<Matrix> {
    Matrix::from_rows(&rows, cols).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn weight_mode(mode: &str) -> PyResult<WeightMode> {
    mode.parse().map_err(PyValueError::new_err)
}

/// Members as `(client, centroid, count)` triples.
fn cluster(members: Vec<(u32, Vec<f64>, usize)>) -> PyResult<ClassCluster> {
    let members = members
        .into_iter()
        .map(|(client, centroid, count)| ClusterMember {
            client: ClientId(client),
            centroid,
            count,
        })
        .collect();
    ClassCluster::new(0, members).map_err(to_py)
}

fn config(path: Option<PathBuf>, overrides: Option<BTreeMap<String, String>>) -> PyResult<ExperimentConfig> {
    let pairs: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
    ExperimentConfig::resolve(path.as_deref(), &pairs).map_err(to_py)
}

/// Feature extractor plus linear head.
#[pyclass(name = "Model", module = "pfpl")]
struct PyModel {
    inner: numeric::Model,
}

#[pymethods]
impl PyModel {
    /// `layer_dims` runs from the input width to the embedding width.
    #[new]
    #[pyo3(signature = (layer_dims, num_classes, seed = 0))]
    fn new(layer_dims: Vec<usize>, num_classes: usize, seed: u64) -> PyResult<Self> {
        let d = layer_dims.last().copied().unwrap_or(0);
        let inner = numeric::init_model(&layer_dims, d, num_classes, seed).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn embed(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(inputs, self.inner.input_dim())?;
        Ok(rows(&self.inner.forward_features(&x).map_err(to_py)?))
    }

    fn logits(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(inputs, self.inner.input_dim())?;
        Ok(rows(&self.inner.forward(&x).map_err(to_py)?.logits))
    }

    /// Cross-entropy gradient, flattened in parameter order.
    fn gradient(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<f64>> {
        let x = matrix(inputs, self.inner.input_dim())?;
        let batch = numeric::Batch::new(x, labels).map_err(to_py)?;
        Ok(numeric::backward(&self.inner, &batch, None).map_err(to_py)?.flat())
    }

    fn params(&self) -> Vec<f64> {
        self.inner.flat_params()
    }

    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner.set_flat_params(&params).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(input_dim={}, embedding_dim={}, num_classes={}, params={})",
            self.inner.input_dim(),
            self.inner.embedding_dim(),
            self.inner.num_classes(),
            self.inner.param_count()
        )
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let cols = logits.first().map_or(0, Vec::len);
    let (loss, grad) = numeric::cross_entropy(&matrix(logits, cols)?, &labels).map_err(to_py)?;
    Ok((loss, rows(&grad)))
}

/// Squared Euclidean distance.
#[pyfunction]
fn l2_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    prototypes::l2_distance(&a, &b).map_err(to_py)
}

/// Weights `client` assigns to its peers; members are `(client, centroid, count)`.
#[pyfunction]
#[pyo3(signature = (client, members, mode = "similarity"))]
fn peer_weights(client: u32, members: Vec<(u32, Vec<f64>, usize)>, mode: &str) -> PyResult<BTreeMap<u32, f64>> {
    let w = prototypes::peer_weights(ClientId(client), &cluster(members)?, weight_mode(mode)?).map_err(to_py)?;
    Ok(w.into_iter().map(|(c, v)| (c.0, v)).collect())
}

#[pyfunction]
#[pyo3(signature = (client, members, alpha, mode = "similarity"))]
fn personalized_prototype(
    client: u32,
    members: Vec<(u32, Vec<f64>, usize)>,
    alpha: f64,
    mode: &str,
) -> PyResult<Vec<f64>> {
    prototypes::personalized_prototype(ClientId(client), 0, &cluster(members)?, alpha, weight_mode(mode)?)
        .map_err(to_py)
}

/// Sample-count weighted mean of the members' centroids.
#[pyfunction]
fn global_prototype(members: Vec<(u32, Vec<f64>, usize)>) -> PyResult<Vec<f64>> {
    prototypes::global_prototype(&cluster(members)?).map_err(to_py)
}

/// Unweighted mean of the members' centroids.
#[pyfunction]
fn unbiased_prototype(members: Vec<(u32, Vec<f64>, usize)>) -> PyResult<Vec<f64>> {
    prototypes::unbiased_prototype(&cluster(members)?).map_err(to_py)
}

/// Per-round `(upload, download)` scalar totals when each client holds the
/// given number of classes.
#[pyfunction]
fn comm_cost(strategy: &str, model: &PyModel, classes_per_client: Vec<usize>) -> PyResult<(usize, usize)> {
    let variant: Variant = strategy.parse().map_err(PyValueError::new_err)?;
    let d = model.inner.embedding_dim();
    let sets: Vec<PrototypeSet> = classes_per_client
        .iter()
        .enumerate()
        .map(|(i, &n)| PrototypeSet {
            owner: ClientId(i as u32),
            entries: (0..n)
                .map(|k| (k, PrototypeEntry { centroid: vec![0.0; d], count: 1 }))
                .collect(),
        })
        .collect();
    let cost = analysis::comm_cost(variant, &model.inner, &sets);
    Ok((cost.upload_total(), cost.download_total()))
}

/// Resolved config as `key = value` text.
#[pyfunction]
#[pyo3(signature = (path = None, overrides = None))]
fn resolve_config(path: Option<PathBuf>, overrides: Option<BTreeMap<String, String>>) -> PyResult<String> {
    Ok(config(path, overrides)?.to_text())
}

/// Run one experiment in memory and return its result as JSON.
#[pyfunction]
#[pyo3(signature = (path = None, overrides = None))]
fn run_experiment(
    py: Python<'_>,
    path: Option<PathBuf>,
    overrides: Option<BTreeMap<String, String>>,
) -> PyResult<String> {
    let cfg = config(path, overrides)?;
    let result = py.detach(|| federation::run_experiment(&cfg)).map_err(to_py)?;
    serde_json::to_string(&result).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Run one experiment and write its artifact tree under `out`; returns the
/// final macro accuracy.
#[pyfunction]
#[pyo3(signature = (out, path = None, overrides = None, force = false))]
fn run(
    py: Python<'_>,
    out: PathBuf,
    path: Option<PathBuf>,
    overrides: Option<BTreeMap<String, String>>,
    force: bool,
) -> PyResult<f64> {
    let cfg = config(path, overrides)?;
    let result = py.detach(|| runner::run(&cfg, &out, force)).map_err(to_py)?;
    Ok(result.final_macro_accuracy)
}

#[pymodule]
fn pfpl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(l2_distance, m)?)?;
    m.add_function(wrap_pyfunction!(peer_weights, m)?)?;
    m.add_function(wrap_pyfunction!(personalized_prototype, m)?)?;
    m.add_function(wrap_pyfunction!(global_prototype, m)?)?;
    m.add_function(wrap_pyfunction!(unbiased_prototype, m)?)?;
    m.add_function(wrap_pyfunction!(comm_cost, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
