//! Python bindings. Images cross the boundary as flat row-major HWC lists,
//! latent codes as plain lists of floats.

use std::path::PathBuf;

use naim::bench;
use naim::cli::{self, ModelBundle};
use naim::codec::{self, AutoencoderConfig, AutoencoderModel, LatentCode};
use naim::lens;
use naim::nam::{self, NaimModel, TrainConfig};
use naim::synth::{Domain, EffectSpec, ImageEffect, SyntheticDataset};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: naim::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_domain(s: &str) -> PyResult<Domain> {
    match s {
        "squares" => Ok(Domain::Squares),
        "colors" => Ok(Domain::Colors),
        _ => Err(PyValueError::new_err(format!("unknown domain {s:?}; expected squares or colors"))),
    }
}

fn parse_effect(s: &str) -> PyResult<ImageEffect> {
    s.parse::<EffectSpec>()
        .map(|spec| spec.image_effect)
        .or_else(|_| format!("f_img={s};sigma=0").parse::<EffectSpec>().map(|spec| spec.image_effect))
        .map_err(err)
}

fn codes(rows: Vec<Vec<f64>>) -> Vec<LatentCode> {
    rows.into_iter().map(LatentCode::new).collect()
}

fn rows(codes: &[LatentCode]) -> Vec<Vec<f64>> {
    codes.iter().map(|z| z.as_slice().to_vec()).collect()
}

#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: codec::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: codec::Image::new(height, width, channels, data).map_err(err)? })
    }

    #[staticmethod]
    fn load_png(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: codec::Image::load_png(&path).map_err(err)? })
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(&path).map_err(err)
    }

    /// `(height, width, channels)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.inner.dims();
        format!("Image({h}x{w}x{c})")
    }
}

#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: SyntheticDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (domain, n, seed, image_size = 32, image_effect = "2x", noise_sd = 0.1))]
    fn new(domain: &str, n: usize, seed: u64, image_size: usize, image_effect: &str, noise_sd: f64) -> PyResult<Self> {
        let spec = EffectSpec::new(parse_effect(image_effect)?, noise_sd).map_err(err)?;
        let inner = SyntheticDataset::generate(parse_domain(domain)?, n, image_size, spec, seed).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Splits into the first `n_first` samples and the rest.
    fn split(&self, n_first: usize) -> PyResult<(Self, Self)> {
        let (a, b) = self.inner.clone().split(n_first).map_err(err)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn image(&self, index: usize) -> PyResult<PyImage> {
        self.inner
            .images
            .get(index)
            .map(|im| PyImage { inner: im.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.feature_rows()
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.inner.phi.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }
}

#[pyclass(name = "Autoencoder", from_py_object)]
#[derive(Clone)]
struct PyAutoencoder {
    inner: AutoencoderModel,
}

#[pymethods]
impl PyAutoencoder {
    /// Trains on the dataset's images. Needs at least 1000 of them.
    #[staticmethod]
    #[pyo3(signature = (data, latent_dim, seed, epochs = 20, latent_noise = cli::DESK_LATENT_NOISE))]
    fn train(py: Python<'_>, data: &PyDataset, latent_dim: usize, seed: u64, epochs: usize, latent_noise: f64) -> PyResult<Self> {
        let config = AutoencoderConfig { latent_dim, epochs, latent_noise, seed, ..Default::default() };
        let images = &data.inner.images;
        let (inner, _) = py.detach(|| codec::train_autoencoder(images, &config)).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn encode(&self, image: &PyImage) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode(&image.inner).map_err(err)?.into_vec())
    }

    fn decode(&self, code: Vec<f64>) -> PyResult<PyImage> {
        Ok(PyImage { inner: self.inner.decode(&LatentCode::new(code)).map_err(err)? })
    }

    fn reconstruction_mse(&self, data: &PyDataset) -> PyResult<f64> {
        self.inner.reconstruction_mse(&data.inner.images).map_err(err)
    }
}

#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: NaimModel,
}

#[pymethods]
impl PyModel {
    /// Fits the additive model; pass an autoencoder to include the image term.
    #[staticmethod]
    #[pyo3(signature = (data, seed, autoencoder = None, epochs = None))]
    fn train(py: Python<'_>, data: &PyDataset, seed: u64, autoencoder: Option<&PyAutoencoder>, epochs: Option<usize>) -> PyResult<Self> {
        let base = TrainConfig::desk();
        let config = TrainConfig { seed, use_image: autoencoder.is_some(), epochs: epochs.unwrap_or(base.epochs), ..base };
        let ae = autoencoder.map(|a| &a.inner);
        let ds = &data.inner;
        let (inner, _) = py.detach(|| nam::train_on_dataset(ds, ae, &config)).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    /// Predictions for feature rows, with one latent code per row when the
    /// model has an image head.
    #[pyo3(signature = (features, codes = None))]
    fn predict(&self, features: Vec<Vec<f64>>, codes: Option<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        match codes {
            Some(c) => self.inner.predict_batch(&features, &self::codes(c)),
            None => self.inner.predict_tabular_batch(&features),
        }
        .map_err(err)
    }

    /// Zero-centered effect of feature `j` on `grid`.
    fn effect_curve(&self, j: usize, grid: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
        self.inner.effect_curve_numeric(j, &grid).map_err(err)
    }

    fn image_effects(&self, codes: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.image_effects(&self::codes(codes)).map_err(err)
    }
}

#[pyclass(name = "Bundle")]
struct PyBundle {
    inner: ModelBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ModelBundle::load(&path).map_err(err)? })
    }

    #[getter]
    fn autoencoder(&self) -> PyAutoencoder {
        PyAutoencoder { inner: self.inner.autoencoder.clone() }
    }

    #[getter]
    fn model(&self) -> PyModel {
        PyModel { inner: self.inner.model.clone() }
    }

    #[getter]
    fn validation_mse(&self) -> f64 {
        self.inner.validation_mse
    }

    /// `(fractions, predictions)` along the latent path from `a` to `b`.
    #[pyo3(signature = (a, b, k = 10))]
    fn interpolate(&self, a: &PyImage, b: &PyImage, k: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let curve = cli::interpolate(&self.inner, &a.inner, &b.inner, k).map_err(err)?;
        Ok((curve.fractions, curve.predictions))
    }
}

#[pyfunction]
fn mse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    bench::mse(&pred, &truth).map_err(err)
}

#[pyfunction]
fn r2(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    bench::r2(&pred, &truth).map_err(err)
}

#[pyfunction]
fn interpolate_latents(start: Vec<f64>, end: Vec<f64>, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let seq = lens::interpolate_latents(&LatentCode::new(start), &LatentCode::new(end), k).map_err(err)?;
    Ok(rows(seq.codes()))
}

#[pyfunction]
#[pyo3(signature = (code, direction, alpha = lens::DEFAULT_ALPHA, k = 10))]
fn manipulate_latents(code: Vec<f64>, direction: Vec<f64>, alpha: f64, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let seq = lens::manipulate_latents(&LatentCode::new(code), &direction, alpha, k).map_err(err)?;
    Ok(rows(seq.codes()))
}

/// Unit normal of a logistic separator between the labeled codes.
#[pyfunction]
fn attribute_direction(codes: Vec<Vec<f64>>, labels: Vec<bool>) -> PyResult<Vec<f64>> {
    codec::attribute_direction(&self::codes(codes), &labels).map_err(err)
}

/// Runs the command line with `args` (without the program name).
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<()> {
    let argv: Vec<String> = std::iter::once("naim".to_string()).chain(args).collect();
    py.detach(|| cli::run(argv)).map_err(err)
}

#[pymodule]
fn naim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyAutoencoder>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(r2, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_latents, m)?)?;
    m.add_function(wrap_pyfunction!(manipulate_latents, m)?)?;
    m.add_function(wrap_pyfunction!(attribute_direction, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
