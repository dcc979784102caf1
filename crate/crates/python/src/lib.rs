//! Python bindings. Configurations cross the boundary as dicts (or JSON
//! strings) with the same fields as the JSON config files of the CLI.

use ::gswe as core;
use core::data_io::{self, Checkpoint, SetCirclesConfig};
use core::gswdist::GswConfig;
use core::nn::Parameters;
use core::ssl::TrainConfig;
use core::{ErrorKind, ModelConfig, Samples1D, SlicerKind, Split, Tensor};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::de::DeserializeOwned;

fn err(e: impl Into<core::Error>) -> PyErr {
    let e: core::Error = e.into();
    match e.kind() {
        ErrorKind::Usage => PyValueError::new_err(e.to_string()),
        ErrorKind::Data => PyIOError::new_err(e.to_string()),
        ErrorKind::Numerical => PyArithmeticError::new_err(e.to_string()),
    }
}

fn from_py<T: DeserializeOwned + Default>(cfg: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(cfg) = cfg else {
        return Ok(T::default());
    };
    let text: String = if cfg.is_instance_of::<PyString>() {
        cfg.extract()?
    } else {
        cfg.py()
            .import("json")?
            .call_method1("dumps", (cfg,))?
            .extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))
}

fn to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn slicer_kind(kind: &str, degree: u32, hidden: Option<Vec<usize>>) -> PyResult<SlicerKind> {
    match kind {
        "linear" => Ok(SlicerKind::Linear),
        "poly" | "polynomial" => Ok(SlicerKind::Polynomial { degree }),
        "mlp" => Ok(SlicerKind::Mlp {
            hidden: hidden.unwrap_or_else(|| core::slicers::DEFAULT_HIDDEN.to_vec()),
        }),
        other => Err(PyValueError::new_err(format!(
            "unknown slicer {other:?}; expected linear, poly or mlp"
        ))),
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape().get(1).copied().unwrap_or(1);
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

/// A finite set of points in R^d, stored row-major.
#[pyclass(name = "PointSet", module = "gswe", from_py_object)]
#[derive(Clone)]
struct PyPointSet(core::PointSet);

#[pymethods]
impl PyPointSet {
    #[new]
    #[pyo3(signature = (points, label=None))]
    fn new(points: Vec<Vec<f64>>, label: Option<usize>) -> PyResult<Self> {
        core::PointSet::from_rows(&points, label)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn label(&self) -> Option<usize> {
        self.0.label()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        self.0.points().map(<[f64]>::to_vec).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "PointSet(n={}, dim={}, label={:?})",
            self.0.len(),
            self.0.dim(),
            self.0.label()
        )
    }
}

fn unwrap_sets(sets: &[PyPointSet]) -> Vec<core::PointSet> {
    sets.iter().map(|s| s.0.clone()).collect()
}

/// Family of functions producing one-dimensional slices.
#[pyclass(name = "Slicer", module = "gswe", from_py_object)]
#[derive(Clone)]
struct PySlicer(core::Slicer);

#[pymethods]
impl PySlicer {
    /// Random slicer of the given family ("linear", "poly" or "mlp").
    #[new]
    #[pyo3(signature = (kind, dim, num_slices, seed=0, degree=core::slicers::DEFAULT_DEGREE, hidden=None))]
    fn new(
        kind: &str,
        dim: usize,
        num_slices: usize,
        seed: u64,
        degree: u32,
        hidden: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let kind = slicer_kind(kind, degree, hidden)?;
        core::Slicer::init(&kind, dim, num_slices, seed)
            .map(Self)
            .map_err(err)
    }

    /// Linear slicer with the given directions, one row per input dimension.
    #[staticmethod]
    fn linear(theta: Vec<Vec<f64>>) -> PyResult<Self> {
        let d = theta.len();
        let l = theta.first().map_or(0, Vec::len);
        let t = Tensor::matrix(d, l, theta.concat()).map_err(err)?;
        core::Slicer::linear(t).map(Self).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn num_slices(&self) -> usize {
        self.0.num_slices()
    }

    /// Slice values, one row per point and one column per slice.
    fn slice(&self, set: &PyPointSet) -> PyResult<Vec<Vec<f64>>> {
        self.0.slice(&set.0).map(|t| rows(&t)).map_err(err)
    }

    /// Parameter tensors as flat lists.
    fn params(&self) -> Vec<Vec<f64>> {
        self.0.params().iter().map(|t| t.data().to_vec()).collect()
    }
}

/// Backbone, slicer and reference bank.
#[pyclass(name = "Model", module = "gswe", from_py_object)]
#[derive(Clone)]
struct PyModel {
    model: core::Model,
    config: serde_json::Value,
}

#[pymethods]
impl PyModel {
    /// Initializes a model from a config dict; `data` seeds data-initialized
    /// reference banks.
    #[new]
    #[pyo3(signature = (input_dim, config=None, data=Vec::new()))]
    fn new(
        input_dim: usize,
        config: Option<&Bound<'_, PyAny>>,
        data: Vec<PyPointSet>,
    ) -> PyResult<Self> {
        let cfg: ModelConfig = from_py(config)?;
        let model = core::Model::init(&cfg, input_dim, &unwrap_sets(&data)).map_err(err)?;
        let config = serde_json::json!({ "model": cfg });
        Ok(Self { model, config })
    }

    #[getter]
    fn embedding_len(&self) -> usize {
        self.model.embedding_len()
    }

    #[getter]
    fn p(&self) -> f64 {
        self.model.p
    }

    #[getter]
    fn slicer(&self) -> PySlicer {
        PySlicer(self.model.slicer.clone())
    }

    /// Effective configuration the model was built and trained with.
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.config)
    }

    fn embed(&self, set: &PyPointSet) -> PyResult<Vec<f64>> {
        self.model.embed(&set.0).map(|e| e.values).map_err(err)
    }

    fn embed_all(&self, sets: Vec<PyPointSet>) -> PyResult<Vec<Vec<f64>>> {
        let embs = self.model.embed_all(&unwrap_sets(&sets)).map_err(err)?;
        Ok(embs.into_iter().map(|e| e.values).collect())
    }

    /// Backbone features of every point of the set.
    fn features(&self, set: &PyPointSet) -> PyResult<PyPointSet> {
        self.model.set_features(&set.0).map(PyPointSet).map_err(err)
    }

    /// Distance between the embeddings of two sets.
    fn distance(&self, a: &PyPointSet, b: &PyPointSet) -> PyResult<f64> {
        let (ea, eb) = (
            self.model.embed(&a.0).map_err(err)?,
            self.model.embed(&b.0).map_err(err)?,
        );
        core::pairwise_embed_distance(&ea, &eb, self.model.p).map_err(err)
    }

    /// Self-supervised training in place; returns the mean loss per epoch.
    #[pyo3(signature = (sets, config=None))]
    fn train(
        &mut self,
        py: Python<'_>,
        sets: Vec<PyPointSet>,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Vec<f64>> {
        let cfg: TrainConfig = from_py(config)?;
        let sets = unwrap_sets(&sets);
        let mut model = self.model.clone();
        let report = py
            .detach(|| core::ssl::train(&sets, &mut model, &cfg))
            .map_err(err)?;
        self.model = model;
        self.config["train"] = serde_json::to_value(&cfg).expect("serializable config");
        Ok(report.epoch_loss)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let ckpt = Checkpoint {
            model: self.model.clone(),
            provenance: serde_json::json!({
                "seed": self.config["train"]["seed"].as_u64().or(self.config["model"]["seed"].as_u64()),
                "config": self.config,
            }),
        };
        data_io::save_checkpoint(&ckpt, path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = data_io::load_checkpoint(path).map_err(err)?;
        Ok(Self {
            model: ckpt.model,
            config: ckpt.provenance["config"].clone(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(slicer={}, L={}, K={}, M={}, embedding_len={})",
            self.model.slicer.kind().name(),
            self.model.slicer.num_slices(),
            self.model.bank.num_refs(),
            self.model.bank.ref_size(),
            self.model.embedding_len()
        )
    }
}

/// p-Wasserstein distance between two empirical measures on the line.
#[pyfunction]
#[pyo3(signature = (a, b, p=2.0))]
fn wasserstein_1d(a: Vec<f64>, b: Vec<f64>, p: f64) -> PyResult<f64> {
    let a = Samples1D::new(a).map_err(err)?;
    let b = Samples1D::new(b).map_err(err)?;
    core::wasserstein_1d(&a, &b, p).map_err(err)
}

/// Generalized sliced-Wasserstein distance under the given slicer.
#[pyfunction]
#[pyo3(signature = (a, b, slicer, p=2.0))]
fn gsw(a: &PyPointSet, b: &PyPointSet, slicer: &PySlicer, p: f64) -> PyResult<f64> {
    core::gsw(&a.0, &b.0, &slicer.0, p).map_err(err)
}

/// Max-GSW by projected gradient ascent over a single slice. Returns the
/// best value and the slicer attaining it.
#[pyfunction]
#[pyo3(signature = (a, b, kind="linear", p=2.0, steps=200, lr=0.05, seed=0, degree=core::slicers::DEFAULT_DEGREE, hidden=None))]
#[allow(clippy::too_many_arguments)]
fn max_gsw(
    a: &PyPointSet,
    b: &PyPointSet,
    kind: &str,
    p: f64,
    steps: usize,
    lr: f64,
    seed: u64,
    degree: u32,
    hidden: Option<Vec<usize>>,
) -> PyResult<(f64, PySlicer)> {
    let kind = slicer_kind(kind, degree, hidden)?;
    let cfg = GswConfig {
        p,
        num_slices: 1,
        seed,
        max_gsw_steps: steps,
        max_gsw_lr: lr,
    };
    let (v, s) = core::max_gsw(&a.0, &b.0, &kind, &cfg).map_err(err)?;
    Ok((v, PySlicer(s)))
}

/// Set-Circles dataset as `(train, test)` lists of labelled sets.
#[pyfunction]
#[pyo3(signature = (seed=0, n_train=400, n_test=200, noise=0.05, radii=(1.0, 1.3), sizes=(8, 21)))]
fn set_circles(
    seed: u64,
    n_train: usize,
    n_test: usize,
    noise: f64,
    radii: (f64, f64),
    sizes: (usize, usize),
) -> PyResult<(Vec<PyPointSet>, Vec<PyPointSet>)> {
    let ds = data_io::gen_set_circles(&SetCirclesConfig {
        n_train,
        n_test,
        radii,
        noise,
        size_range: sizes,
        seed,
    })
    .map_err(err)?;
    let part = |s: Split| ds.split(s).sets().iter().cloned().map(PyPointSet).collect();
    Ok((part(Split::Train), part(Split::Test)))
}

/// Fraction of test rows whose nearest training row has the same label.
#[pyfunction]
#[pyo3(signature = (train, train_labels, test, test_labels, p=2.0))]
fn nn_accuracy(
    train: Vec<Vec<f64>>,
    train_labels: Vec<usize>,
    test: Vec<Vec<f64>>,
    test_labels: Vec<usize>,
    p: f64,
) -> PyResult<f64> {
    core::eval::nn_accuracy(&train, &train_labels, &test, &test_labels, p).map_err(err)
}

#[pymodule(name = "gswe")]
fn gswe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointSet>()?;
    m.add_class::<PySlicer>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(wasserstein_1d, m)?)?;
    m.add_function(wrap_pyfunction!(gsw, m)?)?;
    m.add_function(wrap_pyfunction!(max_gsw, m)?)?;
    m.add_function(wrap_pyfunction!(set_circles, m)?)?;
    m.add_function(wrap_pyfunction!(nn_accuracy, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
