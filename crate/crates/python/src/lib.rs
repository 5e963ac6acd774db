//! Python bindings: configuration, model construction and inference,
//! training, checkpoints, descriptors, kNN, mesh and pack I/O, and the
//! gradient-check suite.

// pyo3 0.22 macro expansion trips this lint on every `?` in a pymethod.
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gbnet::data::{self, Dataset, Split};
use gbnet::geometry::{self, DescriptorForm, NeighborSpace, PointCloud};
use gbnet::model::{self, Checkpoint, GbnetModel, Trainer};

type Points = Vec<[f32; 3]>;

fn err(e: gbnet::Error) -> PyErr {
    match e {
        gbnet::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn clouds_from(py_clouds: Vec<Points>) -> Vec<PointCloud> {
    py_clouds.into_iter().map(|p| PointCloud::new(p, None)).collect()
}

fn labelled(clouds: &[PointCloud]) -> Vec<(Points, Option<usize>)> {
    clouds.iter().map(|c| (c.points.clone(), c.label)).collect()
}

/// Flat `key=value` configuration.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: model::Config,
}

#[pymethods]
impl PyConfig {
    /// Defaults, then `text` (config-file lines), then keyword overrides.
    #[new]
    #[pyo3(signature = (text = None, **overrides))]
    fn new(text: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = model::Config::default();
        if let Some(t) = text {
            inner.apply_text(t).map_err(err)?;
        }
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value = match v.extract::<bool>() {
                    Ok(b) => b.to_string(),
                    Err(_) => v.str()?.to_string(),
                };
                inner.set(&key, &value).map_err(err)?;
            }
        }
        inner.validate().map_err(err)?;
        Ok(PyConfig { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(err)?;
        next.validate().map_err(err)?;
        self.inner = next;
        Ok(())
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| PyValueError::new_err(format!("unknown config key `{key}`")))
    }

    fn to_dict(&self) -> Vec<(&'static str, String)> {
        self.inner.entries()
    }

    fn __str__(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Config(<{} keys>)", model::KEYS.len())
    }
}

/// Classifier with `float32` parameters.
#[pyclass(name = "Model")]
struct PyModel {
    config: model::Config,
    trainer: Trainer,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config = None, seed = None))]
    fn new(config: Option<PyConfig>, seed: Option<u64>) -> PyResult<Self> {
        let mut config = config.map(|c| c.inner).unwrap_or_default();
        if let Some(s) = seed {
            config.train.seed = s;
        }
        let net = GbnetModel::new(&config.model, config.train.seed).map_err(err)?;
        let trainer = Trainer::new(net, config.train.clone());
        Ok(PyModel { config, trainer })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = model::load_checkpoint(path, None).map_err(err)?;
        let config = ck.config.clone();
        Ok(PyModel {
            config,
            trainer: ck.into_trainer(),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_checkpoint(path, &Checkpoint::from_trainer(&self.config, &self.trainer)).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.trainer.model.param_count()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.trainer.epoch
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.config.clone(),
        }
    }

    /// Eval-mode logits, one row per cloud.
    fn predict_logits(&self, py: Python<'_>, clouds: Vec<Points>) -> PyResult<Vec<Vec<f32>>> {
        let clouds = clouds_from(clouds);
        let logits = py.allow_threads(|| self.trainer.model.predict_logits(&clouds)).map_err(err)?;
        let c = self.config.model.classes;
        Ok(logits.data().chunks_exact(c).map(<[f32]>::to_vec).collect())
    }

    /// Predicted class per cloud.
    fn predict(&self, py: Python<'_>, clouds: Vec<Points>) -> PyResult<Vec<usize>> {
        let clouds = clouds_from(clouds);
        let logits = py.allow_threads(|| self.trainer.model.predict_logits(&clouds)).map_err(err)?;
        Ok(model::argmax_rows(&logits))
    }

    /// Trains on the configured dataset until the configured epoch count
    /// (or target accuracy) and returns one dict per epoch.
    fn fit<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let config = self.config.clone();
        let trainer = &mut self.trainer;
        let history = py
            .allow_threads(|| -> gbnet::Result<Vec<model::EpochRecord>> {
                let (train, test) = datasets(&config)?;
                trainer.fit(&train, &test, |_, _, _| Ok(()))
            })
            .map_err(err)?;
        history
            .into_iter()
            .map(|r| {
                let d = PyDict::new_bound(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("lr", r.lr)?;
                d.set_item("loss", r.loss)?;
                d.set_item("acc", r.acc)?;
                d.set_item("test_loss", r.test_loss)?;
                d.set_item("test_acc", r.test_acc)?;
                d.set_item("test_avg_class_acc", r.test_avg_class_acc)?;
                Ok(d)
            })
            .collect()
    }

    /// Overall accuracy, average class accuracy, macro F1 and per-class F1
    /// on labelled clouds.
    fn evaluate<'py>(&self, py: Python<'py>, clouds: Vec<Points>, labels: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
        if clouds.len() != labels.len() {
            return Err(PyValueError::new_err("clouds and labels differ in length"));
        }
        let clouds = clouds
            .into_iter()
            .zip(labels)
            .map(|(p, l)| PointCloud::new(p, Some(l)))
            .collect();
        let classes = self.config.model.classes;
        let names = (0..classes).map(|c| format!("class_{c}")).collect();
        let data = Dataset::new(clouds, names, Split::Test).map_err(err)?;
        let e = py
            .allow_threads(|| model::evaluate(&self.trainer.model, &data, self.config.train.eval_batch))
            .map_err(err)?;
        let d = PyDict::new_bound(py);
        d.set_item("overall_acc", e.overall_acc)?;
        d.set_item("avg_class_acc", e.avg_class_acc)?;
        d.set_item("macro_f1", e.macro_f1)?;
        d.set_item("f1", e.f1.clone())?;
        d.set_item("loss", e.loss)?;
        Ok(d)
    }
}

fn datasets(config: &model::Config) -> gbnet::Result<(Dataset, Dataset)> {
    match config.data.source {
        model::DatasetSource::Synthetic => data::synthetic_dataset(&synthetic_config(config)),
        model::DatasetSource::Packs => {
            let names: Vec<String> = (0..config.model.classes).map(|c| format!("class_{c}")).collect();
            let train = Dataset::new(data::pack_read(&config.data.train_pack)?, names.clone(), Split::Train)?;
            let test = Dataset::new(data::pack_read(&config.data.test_pack)?, names, Split::Test)?;
            Ok((train, test))
        }
    }
}

fn synthetic_config(config: &model::Config) -> data::SyntheticConfig {
    data::SyntheticConfig {
        train_size: config.data.train_size,
        test_size: config.data.test_size,
        points: config.model.points,
        jitter: config.data.jitter,
        seed: config.train.seed,
    }
}

/// The synthetic benchmark as `(train, test)`, each a list of
/// `(points, label)`.
#[pyfunction]
#[pyo3(signature = (config = None))]
#[allow(clippy::type_complexity)]
fn synthetic(config: Option<PyConfig>) -> PyResult<(Vec<(Points, Option<usize>)>, Vec<(Points, Option<usize>)>)> {
    let config = config.map(|c| c.inner).unwrap_or_default();
    let (train, test) = data::synthetic_dataset(&synthetic_config(&config)).map_err(err)?;
    Ok((labelled(&train.clouds), labelled(&test.clouds)))
}

/// Per-point descriptor rows of `points` for `form` 1 to 8.
#[pyfunction]
#[pyo3(signature = (points, form = 6))]
fn descriptor(points: Points, form: u8) -> PyResult<Vec<Vec<f32>>> {
    let form = DescriptorForm::new(form).map_err(err)?;
    let d = geometry::descriptor_rows(&points, form).map_err(err)?;
    Ok((0..points.len()).map(|i| d.row(i).to_vec()).collect())
}

/// Column names of descriptor `form`.
#[pyfunction]
fn descriptor_columns(form: u8) -> PyResult<Vec<String>> {
    Ok(DescriptorForm::new(form).map_err(err)?.column_names())
}

/// Indices of the `k` nearest rows of every row, self excluded.
#[pyfunction]
fn knn(features: Vec<Vec<f32>>, k: usize) -> PyResult<Vec<Vec<usize>>> {
    let n = features.len();
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    let flat: Vec<f32> = features.into_iter().flatten().collect();
    let nbr = geometry::knn_search(&flat, n, dim, k, NeighborSpace::Feature).map_err(err)?;
    Ok((0..n).map(|i| nbr.row(i).to_vec()).collect())
}

/// Centroid to the origin, farthest point to unit norm.
#[pyfunction]
fn normalize(points: Points) -> PyResult<Points> {
    Ok(geometry::normalize_to_unit_sphere(&PointCloud::new(points, None)).map_err(err)?.points)
}

/// `(vertices, faces)` of an OFF mesh.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn load_off(path: &str) -> PyResult<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    let m = data::load_off(path).map_err(err)?;
    Ok((m.vertices, m.faces))
}

/// `n` points sampled uniformly over the surface of an OFF mesh, then
/// normalized.
#[pyfunction]
#[pyo3(signature = (path, n, seed = 1))]
fn sample_off(path: &str, n: usize, seed: u64) -> PyResult<Points> {
    let m = data::load_off(path).map_err(err)?;
    let c = data::sample_mesh_surface(&m, n, &mut data::stream_rng(seed, 6, 0)).map_err(err)?;
    Ok(geometry::normalize_to_unit_sphere(&c).map_err(err)?.points)
}

#[pyfunction]
fn read_pack(path: &str) -> PyResult<Vec<(Points, Option<usize>)>> {
    Ok(labelled(&data::pack_read(path).map_err(err)?))
}

#[pyfunction]
fn write_pack(path: &str, clouds: Vec<(Points, Option<usize>)>) -> PyResult<()> {
    let clouds: Vec<PointCloud> = clouds.into_iter().map(|(p, l)| PointCloud::new(p, l)).collect();
    data::pack_write(path, &clouds).map_err(err)
}

/// Runs the finite-difference checks; one dict per target.
#[pyfunction]
#[pyo3(signature = (target = None))]
fn gradcheck<'py>(py: Python<'py>, target: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let results = py.allow_threads(|| gbnet::verify::run_suite(target)).map_err(err)?;
    results
        .into_iter()
        .map(|r| {
            let d = PyDict::new_bound(py);
            d.set_item("name", r.name)?;
            d.set_item("group", r.group)?;
            d.set_item("max_rel_error", r.max_rel_error)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("checked", r.checked)?;
            d.set_item("excluded_ties", r.excluded_ties)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "gbnet")]
fn gbnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(descriptor, m)?)?;
    m.add_function(wrap_pyfunction!(descriptor_columns, m)?)?;
    m.add_function(wrap_pyfunction!(knn, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(load_off, m)?)?;
    m.add_function(wrap_pyfunction!(sample_off, m)?)?;
    m.add_function(wrap_pyfunction!(read_pack, m)?)?;
    m.add_function(wrap_pyfunction!(write_pack, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
