//! Python bindings: datasets, metrics, neighbourhoods and trained models.
//!
//! Matrices cross the boundary as lists of rows; reports come back as dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use icgan_core::diffcore::Tensor;
use icgan_core::embedding::{Embedder, EmbedderKind, InstanceStore};
use icgan_core::eval::{self, generate_for_instances, KdeOracle};
use icgan_core::harness::{
    self, apply_overrides, evaluate_checkpoint, load_checkpoint, make_dataset, run_training,
    save_checkpoint, select_for_eval, Checkpoint, DatasetSpec, EvalSpec,
};
use icgan_core::neighborhoods::{build_neighborhoods, SelectionMethod};
use icgan_core::rng::rng_from_seed;
use icgan_core::training;

fn err(e: icgan_core::Error) -> PyErr {
    match e {
        icgan_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_bound_py_any(py),
            None => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn dataset_spec(kind: &str, seed: u64, overrides: Vec<String>) -> PyResult<DatasetSpec> {
    let spec = match kind {
        "ring8" => DatasetSpec::ring8(seed),
        "grid25" => DatasetSpec::grid25(seed),
        "longtail_mixture" => DatasetSpec::longtail(seed),
        "shifted_mixture" => DatasetSpec::shifted(seed),
        other => return Err(PyValueError::new_err(format!("unknown dataset {other:?}"))),
    };
    apply_overrides(&spec, &overrides).map_err(err)
}

fn selection_method(name: &str) -> PyResult<SelectionMethod> {
    match name {
        "clustered" => Ok(SelectionMethod::Clustered),
        "random" => Ok(SelectionMethod::Random),
        other => Err(PyValueError::new_err(format!(
            "unknown selection method {other:?}"
        ))),
    }
}

/// Draws a synthetic dataset; returns `(rows, labels or None)`.
#[pyfunction]
#[pyo3(signature = (kind, seed=0, overrides=Vec::new()))]
fn dataset(
    kind: &str,
    seed: u64,
    overrides: Vec<String>,
) -> PyResult<(Vec<Vec<f64>>, Option<Vec<usize>>)> {
    let ds = make_dataset(&dataset_spec(kind, seed, overrides)?).map_err(err)?;
    Ok((rows(&ds.data), ds.labels))
}

#[pyfunction]
fn fid(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    eval::fid(&tensor(a)?, &tensor(b)?).map_err(err)
}

#[pyfunction]
fn matrix_sqrt_psd(s: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&eval::matrix_sqrt_psd(&tensor(s)?).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (real, generated, k_pr=5))]
fn precision_recall(
    real: Vec<Vec<f64>>,
    generated: Vec<Vec<f64>>,
    k_pr: usize,
) -> PyResult<(f64, f64)> {
    eval::precision_recall(&tensor(real)?, &tensor(generated)?, k_pr).map_err(err)
}

/// Mean within-group pairwise distance, averaged over groups.
#[pyfunction]
fn diversity(groups: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let groups = groups
        .into_iter()
        .map(tensor)
        .collect::<PyResult<Vec<_>>>()?;
    eval::diversity(&groups).map_err(err)
}

#[pyfunction]
fn class_balanced_probs(freqs: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    training::class_balanced_probs(&freqs, temperature).map_err(err)
}

/// Cosine k-NN neighbourhoods of the rows of `features` (normalised first).
#[pyfunction]
fn neighborhoods(features: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<Vec<usize>>> {
    let data = tensor(features)?;
    let embedder = Embedder::fit(&data, EmbedderKind::Identity, data.cols(), 0).map_err(err)?;
    let store = embedder.embed_all(&data, None).map_err(err)?;
    let index = build_neighborhoods(&store, k).map_err(err)?;
    Ok((0..index.len())
        .map(|i| index.neighbors(i).to_vec())
        .collect())
}

#[pyfunction]
#[pyo3(signature = (features, n, method="clustered", seed=0))]
fn select_instances(
    features: Vec<Vec<f64>>,
    n: usize,
    method: &str,
    seed: u64,
) -> PyResult<Vec<usize>> {
    let mut rng = rng_from_seed(seed);
    let sel = icgan_core::neighborhoods::select_instances(
        &tensor(features)?,
        n,
        selection_method(method)?,
        &mut rng,
    )
    .map_err(err)?;
    Ok(sel.indices)
}

/// Samples from a Gaussian KDE; `sigma=None` selects Scott's bandwidth.
#[pyfunction]
#[pyo3(signature = (support, n, sigma=None, seed=0))]
fn kde_sample(
    support: Vec<Vec<f64>>,
    n: usize,
    sigma: Option<f64>,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let support = tensor(support)?;
    let oracle = match sigma {
        Some(s) => KdeOracle::new(support, s),
        None => KdeOracle::scott(support),
    }
    .map_err(err)?;
    let x = eval::kde_sample(&oracle, n, &mut rng_from_seed(seed)).map_err(err)?;
    Ok(rows(&x))
}

/// Experiment configuration, edited with `section.field=value` overrides.
#[pyclass(name = "ExperimentConfig", module = "icgan", skip_from_py_object)]
#[derive(Clone)]
struct PyExperimentConfig {
    inner: harness::ExperimentConfig,
}

#[pymethods]
impl PyExperimentConfig {
    #[new]
    #[pyo3(signature = (overrides=Vec::new()))]
    fn new(overrides: Vec<String>) -> PyResult<Self> {
        let inner = harness::ExperimentConfig::default()
            .with_overrides(&overrides)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: harness::ExperimentConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_overrides(&overrides).map_err(err)?,
        })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(dataset={:?}, k={}, steps={})",
            self.inner.dataset.kind, self.inner.train.k, self.inner.train.steps
        )
    }
}

/// A trained generator with its embedder and conditioning instances.
#[pyclass(name = "Model", module = "icgan")]
struct PyModel {
    ckpt: Checkpoint,
}

fn eval_spec(
    base: EvalSpec,
    n_instances: Option<usize>,
    method: &str,
    samples_per_instance: Option<usize>,
    seed: Option<u64>,
) -> PyResult<EvalSpec> {
    Ok(EvalSpec {
        n_instances: n_instances.or(base.n_instances),
        method: selection_method(method)?,
        samples_per_instance: samples_per_instance.unwrap_or(base.samples_per_instance),
        seed: seed.unwrap_or(base.seed),
        ..base
    })
}

#[pymethods]
impl PyModel {
    /// Trains a model; the GIL is released while training runs.
    #[staticmethod]
    fn train(py: Python<'_>, config: &PyExperimentConfig) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let ckpt = py
            .detach(|| run_training(&cfg, |_, _| Ok(())))
            .map_err(err)?;
        Ok(Self { ckpt })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            ckpt: load_checkpoint(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.ckpt).map_err(err)
    }

    #[getter]
    fn num_instances(&self) -> usize {
        self.ckpt.store.len()
    }

    #[getter]
    fn train_config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.ckpt.train_config)
    }

    /// Embeds raw rows with the model's frozen embedder.
    fn embed(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(
            &self
                .ckpt
                .embedder
                .embed_matrix(&tensor(data)?)
                .map_err(err)?,
        ))
    }

    /// `per_instance` samples for each stored instance index.
    #[pyo3(signature = (instances, per_instance=1, seed=0))]
    fn generate(
        &self,
        instances: Vec<usize>,
        per_instance: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let set = generate_for_instances(
            &self.ckpt.generator,
            &self.ckpt.store,
            &instances,
            per_instance,
            seed,
            0,
        )
        .map_err(err)?;
        Ok(rows(&set.samples))
    }

    /// Samples conditioned on new raw instances (transfer by instance swap).
    #[pyo3(signature = (data, per_instance=1, seed=0))]
    fn generate_from(
        &self,
        data: Vec<Vec<f64>>,
        per_instance: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        if self.ckpt.train_config.class_conditional {
            return Err(PyValueError::new_err(
                "class-conditional models need labelled instances",
            ));
        }
        let store: InstanceStore = self
            .ckpt
            .embedder
            .embed_all(&tensor(data)?, None)
            .map_err(err)?;
        let all: Vec<usize> = (0..store.len()).collect();
        let set = generate_for_instances(&self.ckpt.generator, &store, &all, per_instance, seed, 0)
            .map_err(err)?;
        Ok(rows(&set.samples))
    }

    #[pyo3(signature = (n, method="clustered", seed=0))]
    fn select(&self, n: usize, method: &str, seed: u64) -> PyResult<Vec<usize>> {
        let spec = eval_spec(EvalSpec::default(), Some(n), method, None, Some(seed))?;
        Ok(select_for_eval(&self.ckpt.store, &spec)
            .map_err(err)?
            .indices)
    }

    /// Scores against a reference dataset (default: held-out draw of the
    /// training dataset).
    #[pyo3(signature = (
        reference_kind=None,
        reference_seed=None,
        reference_overrides=Vec::new(),
        n_instances=None,
        method="clustered",
        samples_per_instance=None,
        seed=None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        reference_kind: Option<&str>,
        reference_seed: Option<u64>,
        reference_overrides: Vec<String>,
        n_instances: Option<usize>,
        method: &str,
        samples_per_instance: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let reference = match (reference_kind, &self.ckpt.dataset) {
            (Some(kind), _) => {
                dataset_spec(kind, reference_seed.unwrap_or(0), reference_overrides)?
            }
            (None, Some(d)) => d.held_out(),
            (None, None) => return Err(PyValueError::new_err("pass a reference dataset")),
        };
        let spec = eval_spec(
            EvalSpec::default(),
            n_instances,
            method,
            samples_per_instance,
            seed,
        )?;
        let ckpt = &self.ckpt;
        let report = py
            .detach(|| evaluate_checkpoint(ckpt, &make_dataset(&reference)?, &spec))
            .map_err(err)?;
        to_py(py, &report)
    }

    /// Scores target-dataset instances and the training instances against a
    /// held-out target reference.
    #[pyo3(signature = (kind="shifted_mixture", seed=0, overrides=Vec::new(), samples_per_instance=None))]
    fn transfer<'py>(
        &self,
        py: Python<'py>,
        kind: &str,
        seed: u64,
        overrides: Vec<String>,
        samples_per_instance: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let target = dataset_spec(kind, seed, overrides)?;
        let spec = eval_spec(
            EvalSpec::default(),
            None,
            "clustered",
            samples_per_instance,
            None,
        )?;
        let ckpt = &self.ckpt;
        let report = py
            .detach(|| harness::transfer(ckpt, &target, &spec))
            .map_err(err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(instances={}, k={}, steps={})",
            self.ckpt.store.len(),
            self.ckpt.train_config.k,
            self.ckpt.train_config.steps
        )
    }
}

#[pymodule]
fn icgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExperimentConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fid, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_sqrt_psd, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(class_balanced_probs, m)?)?;
    m.add_function(wrap_pyfunction!(neighborhoods, m)?)?;
    m.add_function(wrap_pyfunction!(select_instances, m)?)?;
    m.add_function(wrap_pyfunction!(kde_sample, m)?)?;
    m.add("CHECKPOINT_VERSION", harness::CHECKPOINT_VERSION)?;
    Ok(())
}
