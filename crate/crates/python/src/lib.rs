//! Python bindings. Matrices cross the boundary as lists of rows; images as
//! flat lists in NCHW order.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use oaae::data::{self, DatasetSource, Split, SyntheticSpec};
use oaae::linalg::{self, Matrix};
use oaae::nn::{checkpoint, ModelBundle, Shape3, Tensor4};
use oaae::ole::{self, LabeledLatentBatch, OleConfig};
use oaae::scoring::{self, ScoreKind};
use oaae::training::{self, TrainConfig};
use oaae::{check, eval, Error};

type Rows = Vec<Vec<f64>>;

/// Per-epoch `(l_recon, l_ole, l_latent, l_image)`.
type EpochLosses = Vec<(f64, f64, f64, f64)>;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Matrix::new(r, c, rows.concat()).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!(
            "unknown split {other:?} (train|test)"
        ))),
    }
}

/// Thin SVD: returns `(U, singular values, V)` with `A = U diag(s) Vᵀ`.
#[pyfunction]
fn svd(a: Vec<Vec<f64>>) -> PyResult<(Rows, Vec<f64>, Rows)> {
    let s = linalg::svd(&matrix(a)?).map_err(to_py)?;
    Ok((rows(&s.u), s.singular_values, rows(&s.v)))
}

#[pyfunction]
fn nuclear_norm(a: Vec<Vec<f64>>) -> PyResult<f64> {
    linalg::nuclear_norm(&matrix(a)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, threshold=1e-3))]
fn nuclear_norm_subgradient(a: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(
        &linalg::nuclear_norm_subgradient(&matrix(a)?, threshold).map_err(to_py)?,
    ))
}

fn batch(
    latents: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: Option<usize>,
) -> PyResult<LabeledLatentBatch> {
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    LabeledLatentBatch::new(matrix(latents)?, labels, c).map_err(to_py)
}

fn ole_config(delta: f64, threshold: f64) -> PyResult<OleConfig> {
    let cfg = OleConfig {
        delta_margin: delta,
        sv_threshold: threshold,
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// OLE loss of a `d × m` latent matrix with one label per column.
#[pyfunction]
#[pyo3(signature = (latents, labels, num_classes=None, delta=1.0, threshold=1e-3))]
fn ole_loss(
    latents: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: Option<usize>,
    delta: f64,
    threshold: f64,
) -> PyResult<f64> {
    ole::ole_loss(
        &batch(latents, labels, num_classes)?,
        &ole_config(delta, threshold)?,
    )
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (latents, labels, num_classes=None, delta=1.0, threshold=1e-3))]
fn ole_grad(
    latents: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: Option<usize>,
    delta: f64,
    threshold: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let g = ole::ole_grad(
        &batch(latents, labels, num_classes)?,
        &ole_config(delta, threshold)?,
    )
    .map_err(to_py)?;
    Ok(rows(&g))
}

#[pyfunction]
fn auroc(scores: Vec<f64>, is_novel: Vec<bool>) -> PyResult<f64> {
    if scores.len() != is_novel.len() {
        return Err(PyValueError::new_err(
            "scores and is_novel differ in length",
        ));
    }
    eval::auroc(&scores.into_iter().zip(is_novel).collect::<Vec<_>>()).map_err(to_py)
}

#[pyfunction]
fn angle(z0: Vec<f64>, z1: Vec<f64>) -> PyResult<f64> {
    scoring::angle(&z0, &z1).map_err(to_py)
}

/// Runs the numerical self-test; returns `(name, error, tolerance, passed)` tuples.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn run_checks(seed: u64) -> Vec<(String, f64, f64, bool)> {
    check::run_checks(seed)
        .into_iter()
        .map(|o| (o.name, o.error, o.tolerance, o.passed))
        .collect()
}

#[pyclass(name = "Dataset", module = "oaae_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (classes=4, per_class=500, side=16, noise_std=0.1, seed=0, split="train"))]
    fn synthetic(
        classes: usize,
        per_class: usize,
        side: usize,
        noise_std: f64,
        seed: u64,
        split: &str,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            classes,
            per_class,
            side,
            noise_std,
        };
        let inner = data::synthetic_multimodal(&spec, self::split(split)?, seed).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    /// Loads `kind` (`mnist`, `fmnist`, `cifar10`) from `directory`.
    #[staticmethod]
    #[pyo3(signature = (kind, directory, split="train"))]
    fn load(kind: &str, directory: PathBuf, split: &str) -> PyResult<Self> {
        let source = match kind {
            "mnist" => DatasetSource::Mnist { dir: directory },
            "fmnist" => DatasetSource::FashionMnist { dir: directory },
            "cifar10" => DatasetSource::Cifar10 { dir: directory },
            other => return Err(PyValueError::new_err(format!("unknown dataset {other:?}"))),
        };
        Ok(PyDataset {
            inner: source.load(self::split(split)?).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    /// `(channels, height, width)`.
    #[getter]
    fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.image_shape();
        (s.channels, s.height, s.width)
    }

    /// Pixels of example `i`, flattened.
    fn image(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.images.example(i).to_vec())
    }

    /// Keeps the listed classes and relabels them `0..k` in the given order.
    fn restrict(&self, classes: Vec<usize>) -> Self {
        PyDataset {
            inner: self.inner.restrict(&classes),
        }
    }

    /// Keeps the listed classes with their original labels.
    fn filter(&self, classes: Vec<usize>) -> Self {
        PyDataset {
            inner: self.inner.filter(&classes),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} images of {}, {} classes)",
            self.inner.len(),
            self.inner.image_shape(),
            self.inner.num_classes
        )
    }
}

#[pyclass(name = "Model", module = "oaae_py")]
struct PyModel {
    inner: ModelBundle,
}

fn images(ds: &PyDataset) -> &Tensor4 {
    &ds.inner.images
}

#[pymethods]
impl PyModel {
    /// Trains on every example of `dataset`. `config` is a JSON object with
    /// any training-configuration fields; keyword arguments override it.
    /// Returns the model and per-epoch `(l_recon, l_ole, l_latent, l_image)`.
    #[staticmethod]
    #[pyo3(signature = (dataset, config=None, epochs=None, batch_size=None, seed=None))]
    fn train(
        py: Python<'_>,
        dataset: &PyDataset,
        config: Option<&str>,
        epochs: Option<usize>,
        batch_size: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<(Self, EpochLosses)> {
        let mut cfg: TrainConfig = match config {
            Some(text) => {
                serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = epochs {
            cfg.epochs = v;
        }
        if let Some(v) = batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = seed {
            cfg.seed = v;
        }
        cfg.validate().map_err(to_py)?;
        let data = dataset.inner.clone();
        let (model, report) = py
            .detach(move || training::train(&data, &cfg))
            .map_err(to_py)?;
        let losses = report
            .epochs
            .iter()
            .map(|e| (e.l_recon, e.l_ole, e.l_latent, e.l_image))
            .collect();
        Ok((PyModel { inner: model }, losses))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: checkpoint::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn image_shape(&self) -> (usize, usize, usize) {
        let Shape3 {
            channels,
            height,
            width,
        } = self.inner.image_shape;
        (channels, height, width)
    }

    /// Latent codes, one list per example.
    fn encode(&self, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        let z = self.inner.encode(images(dataset)).map_err(to_py)?;
        Ok((0..z.cols()).map(|j| z.column(j)).collect())
    }

    /// Novelty scores in dataset order; `kind` is `angle` or `mse`.
    #[pyo3(signature = (dataset, kind="angle"))]
    fn score(&self, py: Python<'_>, dataset: &PyDataset, kind: &str) -> PyResult<Vec<f64>> {
        let kind: ScoreKind = kind.parse().map_err(to_py)?;
        let x = images(dataset).clone();
        let model = &self.inner;
        let scored = py
            .detach(|| scoring::score_batch(model, &x, None, kind))
            .map_err(to_py)?;
        Ok(scored.into_iter().map(|s| s.score).collect())
    }

    /// Mean intra-class cosine and mean inter-class absolute cosine of the
    /// latents of `dataset`.
    fn cosine_separation(&self, dataset: &PyDataset) -> PyResult<(f64, f64)> {
        let z = self.inner.encode(images(dataset)).map_err(to_py)?;
        Ok(eval::cosine_separation(&z, &dataset.inner.labels))
    }
}

#[pymodule]
fn oaae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(svd, m)?)?;
    m.add_function(wrap_pyfunction!(nuclear_norm, m)?)?;
    m.add_function(wrap_pyfunction!(nuclear_norm_subgradient, m)?)?;
    m.add_function(wrap_pyfunction!(ole_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ole_grad, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(angle, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
