//! Python bindings: spectrogram images, the CNN, training and the four
//! explanation methods.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use specxplain::audio::{self, to_input_tensor, MelConfig};
use specxplain::dataset::{self, ImageSet, Label, SyntheticSpec};
use specxplain::model::{self, Architecture, TrainConfig, TrainingMetadata};
use specxplain::xai::{self, GradCamParams, GradCamTap, LimeParams, ScoreKind, SmoothGradParams};
use specxplain::{CnnModel, Error, Rng};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Index(_) => PyIndexError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for specxplain::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn label_of(class: &Bound<'_, PyAny>) -> PyResult<Label> {
    if let Ok(i) = class.extract::<usize>() {
        return Label::from_index(i).py();
    }
    let s: String = class.extract()?;
    s.parse().map_err(PyValueError::new_err)
}

/// 128-row 8-bit spectrogram image.
#[pyclass(name = "MelImage", module = "specxplain")]
#[derive(Clone)]
struct PyMelImage {
    inner: audio::MelImage,
}

#[pymethods]
impl PyMelImage {
    /// Grayscale image from `128 * width` bytes, row-major.
    #[new]
    fn new(width: usize, pixels: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: audio::MelImage::new(width, pixels).py()?,
        })
    }

    #[staticmethod]
    fn load_png(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: audio::MelImage::load_png(&path).py()?,
        })
    }

    /// Mel spectrogram image of a WAV file, optionally resized.
    #[staticmethod]
    #[pyo3(signature = (path, target_width=None, n_fft=1024, hop=512, n_mels=128, top_db=80.0))]
    fn from_wav(
        path: PathBuf,
        target_width: Option<usize>,
        n_fft: usize,
        hop: usize,
        n_mels: usize,
        top_db: f64,
    ) -> PyResult<Self> {
        let clip = audio::load_wav(&path).py()?;
        let config = MelConfig {
            n_fft,
            hop,
            n_mels,
            top_db,
        };
        Ok(Self {
            inner: audio::clip_to_image(&clip, &config, target_width).py()?,
        })
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(&path).py()
    }

    fn resized(&self, width: usize) -> PyResult<Self> {
        Ok(Self {
            inner: audio::resize_width(&self.inner, width).py()?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.pixels())
    }

    fn get(&self, row: usize, col: usize) -> PyResult<u8> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyIndexError::new_err(format!(
                "pixel ({row}, {col}) outside the image"
            )));
        }
        Ok(self.inner.get(row, col))
    }

    fn __repr__(&self) -> String {
        format!(
            "MelImage(height={}, width={})",
            self.inner.height(),
            self.inner.width()
        )
    }
}

/// Per-pixel relevance map.
#[pyclass(name = "SaliencyMap", module = "specxplain")]
struct PySaliencyMap {
    inner: xai::SaliencyMap,
}

#[pymethods]
impl PySaliencyMap {
    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter(class_index)]
    fn class_index(&self) -> usize {
        self.inner.class
    }

    /// Row-major values.
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.inner.height || col >= self.inner.width {
            return Err(PyIndexError::new_err(format!(
                "pixel ({row}, {col}) outside the map"
            )));
        }
        Ok(self.inner.get(row, col))
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn min(&self) -> f64 {
        self.inner.min()
    }

    /// Raw dump: u32 height, u32 width, then f64 values.
    fn save_raw(&self, path: PathBuf) -> PyResult<()> {
        xai::save_raw_map(&self.inner, &path).py()
    }

    /// Color overlay on `underlay`, written as PNG.
    fn render(&self, underlay: &PyMelImage, path: PathBuf) -> PyResult<()> {
        xai::render_saliency(&self.inner, &underlay.inner, &path).py()
    }

    fn __repr__(&self) -> String {
        format!(
            "SaliencyMap(method={:?}, class_index={}, height={}, width={})",
            self.inner.method.as_str(),
            self.inner.class,
            self.inner.height,
            self.inner.width
        )
    }
}

/// The spectrogram CNN.
#[pyclass(name = "Model", module = "specxplain")]
struct PyModel {
    inner: CnnModel,
}

impl PyModel {
    fn input(&self, image: &PyMelImage) -> PyResult<specxplain::Tensor> {
        to_input_tensor(&image.inner, self.inner.input_shape()[1]).py()
    }
}

#[pymethods]
impl PyModel {
    /// Glorot-initialized network for `128 × width` images.
    #[new]
    #[pyo3(signature = (width=820, dropout=0.2, seed=0))]
    fn new(width: usize, dropout: f64, seed: u64) -> PyResult<Self> {
        let arch = Architecture::for_input(audio::MEL_IMAGE_HEIGHT, width, dropout);
        Ok(Self {
            inner: arch.build(&mut Rng::seeded(seed)).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(&path).py()?.model,
        })
    }

    #[pyo3(signature = (path, epoch=None))]
    fn save(&self, path: PathBuf, epoch: Option<usize>) -> PyResult<()> {
        let metadata = TrainingMetadata {
            epoch,
            ..Default::default()
        };
        model::save_checkpoint(&self.inner, &metadata, &path).py()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let [h, w, c] = self.inner.input_shape();
        (h, w, c)
    }

    /// Output shape of every layer.
    fn layer_shapes(&self) -> PyResult<Vec<Vec<usize>>> {
        self.inner.layer_shapes().py()
    }

    fn predict_proba(&self, image: &PyMelImage) -> PyResult<Vec<f64>> {
        self.inner.predict_proba(&self.input(image)?).py()
    }

    /// Trains in place and returns one dict per epoch. Images are
    /// `(MelImage, label)` pairs; labels are 0/1 or class names.
    #[pyo3(signature = (train, validation, epochs=20, batch_size=128, learning_rate=0.001, patience=5, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        train: Vec<(PyMelImage, Bound<'py, PyAny>)>,
        validation: Vec<(PyMelImage, Bound<'py, PyAny>)>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        patience: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let to_set = |pairs: Vec<(PyMelImage, Bound<'py, PyAny>)>| -> PyResult<ImageSet> {
            let mut set = ImageSet::default();
            for (image, label) in pairs {
                set.push(image.inner, label_of(&label)?);
            }
            Ok(set)
        };
        let (train, validation) = (to_set(train)?, to_set(validation)?);
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            early_stop_patience: patience,
            seed,
            ..TrainConfig::default()
        };
        let history = py
            .allow_threads(|| model::fit(&mut self.inner, &train, &validation, &config))
            .py()?;
        history
            .epochs
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("epoch", e.epoch)?;
                d.set_item("train_loss", e.train_loss)?;
                d.set_item("train_acc", e.train_acc)?;
                d.set_item("val_loss", e.val_loss)?;
                d.set_item("val_acc", e.val_acc)?;
                d.set_item("best", e.epoch == history.best_epoch)?;
                Ok(d)
            })
            .collect()
    }

    /// SmoothGrad saliency for `class_` (0/1 or a class name).
    #[pyo3(signature = (image, class_, n=50, noise_level=0.5, seed=0))]
    fn smoothgrad(
        &self,
        image: &PyMelImage,
        class_: &Bound<'_, PyAny>,
        n: usize,
        noise_level: f64,
        seed: u64,
    ) -> PyResult<PySaliencyMap> {
        let params = SmoothGradParams {
            n,
            noise_level,
            score: ScoreKind::Logit,
        };
        let x = self.input(image)?;
        let class = label_of(class_)?.index();
        let map = xai::smoothgrad(&self.inner, &x, class, &params, &mut Rng::seeded(seed)).py()?;
        Ok(PySaliencyMap { inner: map })
    }

    /// Grad-CAM map; `tap` is "post_pool" or "pre_pool", `score` "logit" or
    /// "probability".
    #[pyo3(signature = (image, class_, tap="post_pool", score="logit"))]
    fn gradcam(
        &self,
        image: &PyMelImage,
        class_: &Bound<'_, PyAny>,
        tap: &str,
        score: &str,
    ) -> PyResult<PySaliencyMap> {
        let tap = match tap {
            "post_pool" => GradCamTap::PostPool,
            "pre_pool" => GradCamTap::PrePool,
            other => return Err(PyValueError::new_err(format!("unknown tap {other:?}"))),
        };
        let score = match score {
            "logit" => ScoreKind::Logit,
            "probability" => ScoreKind::Probability,
            other => return Err(PyValueError::new_err(format!("unknown score {other:?}"))),
        };
        let x = self.input(image)?;
        let map = xai::gradcam(
            &self.inner,
            &x,
            label_of(class_)?.index(),
            &GradCamParams { tap, score },
        )
        .py()?;
        Ok(PySaliencyMap { inner: map })
    }

    /// LIME over quickshift segments. Returns a dict with the segment label
    /// grid, coefficients, selected segments (strongest first) and fit R².
    #[pyo3(signature = (image, class_, n_features=5, n_samples=150, seed=0))]
    fn lime<'py>(
        &self,
        py: Python<'py>,
        image: &PyMelImage,
        class_: &Bound<'_, PyAny>,
        n_features: usize,
        n_samples: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let params = LimeParams {
            n_features,
            n_samples,
            ..Default::default()
        };
        let class = label_of(class_)?.index();
        let exp = xai::lime_explain(
            &self.inner,
            &image.inner,
            class,
            &params,
            &mut Rng::seeded(seed),
        )
        .py()?;
        let d = PyDict::new(py);
        d.set_item("segments", exp.segments.labels.clone())?;
        d.set_item("segment_count", exp.segments.count)?;
        d.set_item("coefficients", exp.coefficients.clone())?;
        d.set_item("intercept", exp.intercept)?;
        d.set_item("selected", exp.selected.clone())?;
        d.set_item("r2", exp.r2)?;
        d.set_item("mask", exp.selection_mask())?;
        Ok(d)
    }

    /// Activation maximization of conv filter `filter` (1-based) in conv
    /// layer `layer` (1-based). Returns `(pixels, objective, initial)` with
    /// pixels as 8-bit gray bytes.
    #[pyo3(signature = (layer, filter, steps=256, step_size=0.05, seed=0))]
    fn maximize_filter<'py>(
        &self,
        py: Python<'py>,
        layer: usize,
        filter: usize,
        steps: usize,
        step_size: f64,
        seed: u64,
    ) -> PyResult<(Bound<'py, PyBytes>, f64, f64)> {
        let index = layer
            .checked_sub(1)
            .and_then(|n| self.inner.conv_layer(n))
            .ok_or_else(|| PyIndexError::new_err(format!("no convolution layer {layer}")))?;
        let unit = filter
            .checked_sub(1)
            .ok_or_else(|| PyIndexError::new_err("filters are numbered from 1"))?;
        let params = xai::AmParams { steps, step_size };
        let am =
            xai::maximize_filter(&self.inner, index, unit, &params, &mut Rng::seeded(seed)).py()?;
        Ok((
            PyBytes::new(py, &gray(&am.image)),
            am.objective,
            am.initial_objective,
        ))
    }

    /// Activation maximization of a class logit; same return as
    /// `maximize_filter`.
    #[pyo3(signature = (class_, steps=256, step_size=0.05, seed=0))]
    fn maximize_class<'py>(
        &self,
        py: Python<'py>,
        class_: &Bound<'_, PyAny>,
        steps: usize,
        step_size: f64,
        seed: u64,
    ) -> PyResult<(Bound<'py, PyBytes>, f64, f64)> {
        let params = xai::AmParams { steps, step_size };
        let class = label_of(class_)?.index();
        let am = xai::maximize_class(&self.inner, class, &params, &mut Rng::seeded(seed)).py()?;
        Ok((
            PyBytes::new(py, &gray(&am.image)),
            am.objective,
            am.initial_objective,
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(input_shape={:?}, params={})",
            self.inner.input_shape(),
            self.inner.param_count()
        )
    }
}

fn gray(t: &specxplain::Tensor) -> Vec<u8> {
    let c = t.shape().last().copied().unwrap_or(1).max(1);
    t.data()
        .chunks_exact(c)
        .map(|px| {
            (px.iter().sum::<f64>() / c as f64 * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Synthetic planted-patch images: list of `(MelImage, label, mask bytes)`.
#[pyfunction]
#[pyo3(signature = (per_class=250, seed=0, full_width=false))]
fn synth_generate<'py>(
    py: Python<'py>,
    per_class: usize,
    seed: u64,
    full_width: bool,
) -> PyResult<Vec<(PyMelImage, &'static str, Bound<'py, PyBytes>)>> {
    let base = if full_width {
        SyntheticSpec::full_width()
    } else {
        SyntheticSpec::default()
    };
    let spec = SyntheticSpec {
        per_class: [per_class, per_class],
        ..base
    };
    let samples = dataset::synth_generate(&spec, &mut Rng::seeded(seed)).py()?;
    Ok(samples
        .into_iter()
        .map(|s| {
            (
                PyMelImage { inner: s.image },
                s.label.as_str(),
                PyBytes::new(py, &s.mask),
            )
        })
        .collect())
}

/// Mono samples in [-1, 1] and the sample rate.
#[pyfunction]
fn load_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let clip = audio::load_wav(&path).py()?;
    Ok((clip.samples().to_vec(), clip.sample_rate()))
}

#[pyfunction]
fn hz_to_mel(hz: f64) -> PyResult<f64> {
    audio::hz_to_mel(hz).py()
}

#[pyfunction]
fn mel_to_hz(mel: f64) -> PyResult<f64> {
    audio::mel_to_hz(mel).py()
}

#[pyfunction]
fn glorot_limits(fan_in: usize, fan_out: usize) -> PyResult<f64> {
    model::glorot_limits(fan_in, fan_out).py()
}

#[pymodule]
#[pyo3(name = "specxplain")]
fn specxplain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMelImage>()?;
    m.add_class::<PySaliencyMap>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    m.add_function(wrap_pyfunction!(hz_to_mel, m)?)?;
    m.add_function(wrap_pyfunction!(mel_to_hz, m)?)?;
    m.add_function(wrap_pyfunction!(glorot_limits, m)?)?;
    m.add("CANONICAL_PARAM_COUNT", model::CANONICAL_PARAM_COUNT)?;
    Ok(())
}
