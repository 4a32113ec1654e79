//! Python bindings: ball geometry, embedding files, synthetic data, model
//! specs, training and cross-validation.

use hyfuse_core::data::{
    make_folds_for_labels, pair_datasets, read_embedding_file, synth_generate, write_embedding_file,
    ComplementarityMode, DataError, EmbeddingSet, Family, Sample, SynthSpec,
};
use hyfuse_core::hypergeom::{self, GeomError, PoincareConfig};
use hyfuse_core::models::{self, ModelError, ModelKind, ModelSpec};
use hyfuse_core::train::{self, Dataset, Evaluation, StopMetric, TrainConfig, TrainError, ValidationMode};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn geom_err(e: GeomError) -> PyErr {
    PyArithmeticError::new_err(e.to_string())
}

fn data_err(e: DataError) -> PyErr {
    match e {
        DataError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::NumericalAbort { .. } => PyArithmeticError::new_err(e.to_string()),
        TrainError::Data(d) => data_err(d),
        TrainError::Model(m) => model_err(m),
        other => value_err(other),
    }
}

fn ball(curvature: f64, ball_epsilon: f64) -> PyResult<PoincareConfig> {
    PoincareConfig::new(curvature, ball_epsilon).map_err(geom_err)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = train::to_canonical_json(value).map_err(value_err)?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// Exponential map at the origin, projected into the ball.
#[pyfunction]
#[pyo3(signature = (x, curvature=1.0, ball_epsilon=1e-5))]
fn exp_map_zero(x: Vec<f64>, curvature: f64, ball_epsilon: f64) -> PyResult<Vec<f64>> {
    let cfg = ball(curvature, ball_epsilon)?;
    Ok(hypergeom::exp_map_zero(&x, &cfg).map_err(geom_err)?.into_coords())
}

/// Logarithmic map at the origin. Raises ArithmeticError outside the ball.
#[pyfunction]
#[pyo3(signature = (y, curvature=1.0, ball_epsilon=1e-5))]
fn log_map_zero(y: Vec<f64>, curvature: f64, ball_epsilon: f64) -> PyResult<Vec<f64>> {
    let cfg = ball(curvature, ball_epsilon)?;
    hypergeom::log_map_zero_raw(&y, &cfg).map_err(geom_err)
}

/// Möbius addition `x ⊕ y`.
#[pyfunction]
#[pyo3(signature = (x, y, curvature=1.0, ball_epsilon=1e-5))]
fn mobius_add(x: Vec<f64>, y: Vec<f64>, curvature: f64, ball_epsilon: f64) -> PyResult<Vec<f64>> {
    let cfg = ball(curvature, ball_epsilon)?;
    Ok(hypergeom::mobius_add_raw(&x, &y, &cfg).map_err(geom_err)?.into_coords())
}

/// `(accuracy, macro_f1)` of integer predictions.
#[pyfunction]
fn accuracy_and_macro_f1(truth: Vec<usize>, pred: Vec<usize>, num_classes: usize) -> PyResult<(f64, f64)> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(value_err("truth and pred must be non-empty and of equal length"));
    }
    if let Some(bad) = truth.iter().chain(&pred).find(|&&c| c >= num_classes) {
        return Err(value_err(format!("class {bad} out of range for {num_classes} classes")));
    }
    let e = Evaluation::from_predictions(&truth, &pred, num_classes);
    Ok((e.accuracy, e.macro_f1))
}

/// A labeled set of fixed-width embeddings.
#[pyclass(name = "EmbeddingSet", module = "hyfuse", skip_from_py_object)]
#[derive(Clone)]
struct PyEmbeddingSet {
    inner: EmbeddingSet,
}

#[pymethods]
impl PyEmbeddingSet {
    #[new]
    #[pyo3(signature = (name, class_names, ids, labels, vectors, family=None))]
    fn new(
        name: String,
        class_names: Vec<String>,
        ids: Vec<String>,
        labels: Vec<usize>,
        vectors: Vec<Vec<f32>>,
        family: Option<String>,
    ) -> PyResult<Self> {
        if ids.len() != labels.len() || ids.len() != vectors.len() {
            return Err(value_err("ids, labels and vectors must have equal length"));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut set = EmbeddingSet::new(name, dim, class_names);
        set.family = family.map(|f| f.parse::<Family>()).transpose().map_err(data_err)?;
        set.samples = ids
            .into_iter()
            .zip(labels)
            .zip(vectors)
            .map(|((id, label), vector)| Sample { id, label, vector })
            .collect();
        set.validate().map_err(data_err)?;
        Ok(Self { inner: set })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: read_embedding_file(path).map_err(data_err)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        write_embedding_file(&self.inner, path).map_err(data_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn family(&self) -> Option<String> {
        self.inner.family.map(|f| f.to_string())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    fn vectors(&self) -> Vec<Vec<f32>> {
        self.inner.samples.iter().map(|s| s.vector.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingSet(name={:?}, dim={}, samples={}, classes={})",
            self.inner.name,
            self.inner.dim,
            self.inner.len(),
            self.inner.num_classes()
        )
    }
}

/// Paired synthetic sets `(a, b)`.
#[pyfunction]
#[pyo3(signature = (mode="split", classes=4, dim_a=32, dim_b=32, samples_per_class=200, spread=0.2, separation=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    mode: &str,
    classes: usize,
    dim_a: usize,
    dim_b: usize,
    samples_per_class: usize,
    spread: f64,
    separation: f64,
    seed: u64,
) -> PyResult<(PyEmbeddingSet, PyEmbeddingSet)> {
    let spec = SynthSpec {
        classes,
        dim_a,
        dim_b,
        samples_per_class,
        cluster_spread: spread,
        separation,
        mode: mode.parse::<ComplementarityMode>().map_err(data_err)?,
        seed,
    };
    let (a, b) = synth_generate(&spec).map_err(data_err)?;
    Ok((PyEmbeddingSet { inner: a }, PyEmbeddingSet { inner: b }))
}

/// Architecture description. `kind` is fcn, cnn, concat or hyfuse.
#[pyclass(name = "ModelSpec", module = "hyfuse", skip_from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[new]
    #[pyo3(signature = (kind, input_dims, num_classes, hidden_units=None, conv_filters=None, kernel_size=None, dropout=None, fusion_width=None, fusion_order=None, curvature=1.0, ball_epsilon=1e-5))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        input_dims: Vec<usize>,
        num_classes: usize,
        hidden_units: Option<usize>,
        conv_filters: Option<(usize, usize)>,
        kernel_size: Option<usize>,
        dropout: Option<f64>,
        fusion_width: Option<usize>,
        fusion_order: Option<&str>,
        curvature: f64,
        ball_epsilon: f64,
    ) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(model_err)?;
        let mut spec = ModelSpec::new(kind, input_dims, num_classes);
        if let Some(v) = hidden_units {
            spec.hidden_units = v;
        }
        if let Some(v) = conv_filters {
            spec.conv_filters = v;
        }
        if let Some(v) = kernel_size {
            spec.kernel_size = v;
        }
        if let Some(v) = dropout {
            spec.dropout_rate = v;
        }
        if let Some(v) = fusion_width {
            spec.fusion_width = v;
        }
        if let Some(v) = fusion_order {
            spec.fusion_order = v.parse().map_err(model_err)?;
        }
        spec.poincare = ball(curvature, ball_epsilon)?;
        spec.validate().map_err(model_err)?;
        Ok(Self { inner: spec })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn input_dims(&self) -> Vec<usize> {
        self.inner.input_dims.clone()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec(kind={:?}, input_dims={:?}, num_classes={})",
            self.inner.kind.as_str(),
            self.inner.input_dims,
            self.inner.num_classes
        )
    }
}

/// Optimizer and early-stopping settings.
#[pyclass(name = "TrainConfig", module = "hyfuse", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (batch_size=32, learning_rate=1e-5, max_epochs=50, patience=10, stop_metric="loss", validation="holdout", holdout_fraction=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        batch_size: usize,
        learning_rate: f64,
        max_epochs: usize,
        patience: usize,
        stop_metric: &str,
        validation: &str,
        holdout_fraction: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = TrainConfig {
            batch_size,
            learning_rate,
            max_epochs,
            early_stop_patience: patience,
            early_stop_metric: stop_metric.parse::<StopMetric>().map_err(train_err)?,
            validation: validation.parse::<ValidationMode>().map_err(train_err)?,
            holdout_fraction,
            seed,
            ..Default::default()
        };
        cfg.validate().map_err(train_err)?;
        Ok(Self { inner: cfg })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner)
    }
}

fn dataset(a: &PyEmbeddingSet, b: Option<&PyEmbeddingSet>) -> PyResult<Dataset> {
    match b {
        None => Dataset::single(&a.inner).map_err(train_err),
        Some(b) => {
            let pair = pair_datasets(&a.inner, &b.inner).map_err(data_err)?;
            Dataset::paired(&pair).map_err(train_err)
        }
    }
}

/// k-fold cross-validation; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (spec, config, a, b=None, folds=5, stratified=true))]
fn cross_validate<'py>(
    py: Python<'py>,
    spec: &PyModelSpec,
    config: &PyTrainConfig,
    a: &PyEmbeddingSet,
    b: Option<&PyEmbeddingSet>,
    folds: usize,
    stratified: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let ds = dataset(a, b)?;
    let (spec, cfg) = (spec.inner.clone(), config.inner.clone());
    let report = py.detach(move || -> PyResult<_> {
        let plan = make_folds_for_labels(&ds.ids, &ds.labels, folds, cfg.seed, stratified).map_err(data_err)?;
        train::cross_validate(&ds, &spec, &cfg, &plan).map_err(train_err)
    })?;
    json_to_py(py, &report)
}

/// Trains on a stratified hold-out split, writes a checkpoint when `checkpoint`
/// is given and returns the hold-out report as a dict.
#[pyfunction]
#[pyo3(signature = (spec, config, a, b=None, checkpoint=None))]
fn train_model<'py>(
    py: Python<'py>,
    spec: &PyModelSpec,
    config: &PyTrainConfig,
    a: &PyEmbeddingSet,
    b: Option<&PyEmbeddingSet>,
    checkpoint: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let ds = dataset(a, b)?;
    let (spec, cfg) = (spec.inner.clone(), config.inner.clone());
    let report = py.detach(move || -> PyResult<_> {
        let (params, report) = train::train_holdout(&ds, &spec, &cfg).map_err(train_err)?;
        if let Some(path) = checkpoint {
            models::save_checkpoint(path, &spec, &params).map_err(model_err)?;
        }
        Ok(report)
    })?;
    json_to_py(py, &report)
}

#[pymodule]
fn hyfuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(exp_map_zero, m)?)?;
    m.add_function(wrap_pyfunction!(log_map_zero, m)?)?;
    m.add_function(wrap_pyfunction!(mobius_add, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_and_macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_class::<PyEmbeddingSet>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
