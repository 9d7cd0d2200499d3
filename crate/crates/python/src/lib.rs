//! Python bindings: groove tensors, MIDI conversion, the forward
//! compressions, model training and inference, and metrics.

use std::path::PathBuf;

use groove::baseline::{knn_humanize as knn, linear_fit, TrainStats};
use groove::checkpoint;
use groove::metrics::{self, EvalConfig};
use groove::neural::{mlp_train, train_seq2seq};
use groove::representation::{quantize, timed_notes, to_midi, DrumCategoryMap, DEFAULT_PPQ};
use groove::transforms;
use groove::{Family, Model as CoreModel, Task, TrainConfig, NUM_INSTRUMENTS};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: groove::Error) -> PyErr {
    match e {
        groove::Error::NonFiniteLoss { .. } | groove::Error::DegenerateStd(_) => PyArithmeticError::new_err(e.to_string()),
        groove::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A drum performance on a 16th-note grid: hits, velocities in [0, 1] and
/// offsets in [-0.5, 0.5) for 9 drum categories.
#[pyclass(name = "GrooveTensor", module = "groove", from_py_object)]
#[derive(Clone)]
pub struct PyGroove {
    inner: groove::GrooveTensor,
}

fn grid<T: Copy>(values: &[T]) -> Vec<Vec<T>> {
    values.chunks(NUM_INSTRUMENTS).map(<[T]>::to_vec).collect()
}

#[pymethods]
impl PyGroove {
    #[new]
    #[pyo3(signature = (steps = 32, tempo_bpm = 120.0))]
    fn new(steps: usize, tempo_bpm: f64) -> PyResult<Self> {
        if !(tempo_bpm > 0.0) {
            return Err(PyValueError::new_err("tempo must be positive"));
        }
        Ok(Self { inner: groove::GrooveTensor::empty(steps, tempo_bpm) })
    }

    /// Builds a tensor from `steps x 9` nested lists.
    #[staticmethod]
    #[pyo3(signature = (hits, velocities, offsets, tempo_bpm = 120.0))]
    fn from_lists(hits: Vec<Vec<bool>>, velocities: Vec<Vec<f64>>, offsets: Vec<Vec<f64>>, tempo_bpm: f64) -> PyResult<Self> {
        let flat = |rows: &[Vec<f64>]| rows.concat();
        let h: Vec<bool> = hits.concat();
        let g = groove::GrooveTensor::from_parts(hits.len(), tempo_bpm, h, flat(&velocities), flat(&offsets)).map_err(err)?;
        Ok(Self { inner: g })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn tempo_bpm(&self) -> f64 {
        self.inner.tempo_bpm()
    }

    #[getter]
    fn hits(&self) -> Vec<Vec<bool>> {
        grid(self.inner.hits())
    }

    #[getter]
    fn velocities(&self) -> Vec<Vec<f64>> {
        grid(self.inner.velocities())
    }

    #[getter]
    fn offsets(&self) -> Vec<Vec<f64>> {
        grid(self.inner.offsets())
    }

    fn hit_count(&self) -> usize {
        self.inner.hit_count()
    }

    /// Sets a hit; the velocity is clamped to [0, 1] and the offset into [-0.5, 0.5).
    fn set_hit(&mut self, step: usize, instrument: usize, velocity: f64, offset: f64) -> PyResult<()> {
        if step >= self.inner.steps() || instrument >= NUM_INSTRUMENTS {
            return Err(PyValueError::new_err("cell out of range"));
        }
        self.inner.set_hit(step, instrument, velocity, offset);
        Ok(())
    }

    /// Standard MIDI file bytes at 480 ticks per quarter note.
    fn to_midi<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &groove::write_smf(&to_midi(&self.inner, DEFAULT_PPQ)))
    }

    fn __eq__(&self, other: PyRef<'_, PyGroove>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("GrooveTensor(steps={}, tempo_bpm={}, hits={})", self.inner.steps(), self.inner.tempo_bpm(), self.inner.hit_count())
    }
}

fn wrap(g: groove::GrooveTensor) -> PyGroove {
    PyGroove { inner: g }
}

fn unwrap_all(windows: &[PyRef<'_, PyGroove>]) -> Vec<groove::GrooveTensor> {
    windows.iter().map(|g| g.inner.clone()).collect()
}

/// Quantizes the start of a MIDI drum performance into one tensor.
#[pyfunction]
#[pyo3(signature = (data, steps = 32))]
fn from_midi(data: &[u8], steps: usize) -> PyResult<PyGroove> {
    let seq = groove::parse_smf(data).map_err(err)?;
    let (notes, _) = timed_notes(&seq, &DrumCategoryMap::gmd());
    Ok(wrap(quantize(&notes, seq.initial_tempo_bpm(), steps).0))
}

/// Hits only: velocities and offsets removed.
#[pyfunction]
fn to_score(g: PyRef<'_, PyGroove>) -> PyGroove {
    wrap(transforms::to_score(&g.inner))
}

/// The performance with the named categories removed ("hihat" removes both hi-hats).
#[pyfunction]
#[pyo3(signature = (g, category = "hihat"))]
fn remove_voice(g: PyRef<'_, PyGroove>, category: &str) -> PyResult<PyGroove> {
    Ok(wrap(transforms::remove_voice(&g.inner, &categories(category)?).0))
}

/// Collapses all voices to one tap track: a list of per-step offsets, `None` where untapped.
#[pyfunction]
fn flatten_to_taps(g: PyRef<'_, PyGroove>) -> Vec<Option<f64>> {
    let taps = transforms::flatten_to_taps(&g.inner);
    (0..taps.steps()).map(|t| taps.tap(t).then(|| taps.offset(t))).collect()
}

fn tap_tensor(taps: &[Option<f64>], tempo_bpm: f64) -> groove::TapTensor {
    let mut out = groove::TapTensor::empty(taps.len(), tempo_bpm);
    for (t, tap) in taps.iter().enumerate() {
        if let Some(offset) = tap {
            out.set_tap(t, *offset);
        }
    }
    out
}

fn categories(name: &str) -> PyResult<Vec<groove::DrumCategory>> {
    if name == "hihat" {
        return Ok(transforms::HI_HATS.to_vec());
    }
    groove::DrumCategory::from_name(name).map(|c| vec![c]).ok_or_else(|| PyValueError::new_err(format!("unknown category `{name}`")))
}

/// Humanizes a score with the k most similar training windows.
#[pyfunction]
fn knn_humanize(score: PyRef<'_, PyGroove>, train: Vec<PyRef<'_, PyGroove>>, k: usize) -> PyResult<PyGroove> {
    knn(&score.inner, &unwrap_all(&train), k).map(wrap).map_err(err)
}

/// Windows of a corpus file, optionally restricted to one split.
#[pyfunction]
#[pyo3(signature = (path, split = None))]
fn load_corpus(path: PathBuf, split: Option<&str>) -> PyResult<Vec<PyGroove>> {
    let corpus = groove::Corpus::load(&path).map_err(err)?;
    let windows = match split {
        Some(s) => corpus.split(s.parse().map_err(err)?),
        None => corpus.windows,
    };
    Ok(windows.into_iter().map(wrap).collect())
}

/// A trained model of any family.
#[pyclass(name = "Model", module = "groove")]
pub struct PyModel {
    inner: CoreModel,
}

#[pymethods]
impl PyModel {
    /// Fits a model. `family` is one of quantized, linear, knn, mlp,
    /// seq2seq, seq2seq-vib or transfer; `task` one of humanize, infill, tap2drum.
    #[staticmethod]
    #[pyo3(signature = (windows, family = "seq2seq", task = "humanize", seed = 0, steps = None, learning_rate = 1e-3, batch_size = 64, dims = 64, k = 20, ridge = 1e-3, hidden = 256, beta = 0.2, category = "hihat"))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        windows: Vec<PyRef<'_, PyGroove>>,
        family: &str,
        task: &str,
        seed: u64,
        steps: Option<usize>,
        learning_rate: f64,
        batch_size: usize,
        dims: usize,
        k: usize,
        ridge: f64,
        hidden: usize,
        beta: f64,
        category: &str,
    ) -> PyResult<Self> {
        let family: Family = family.parse().map_err(err)?;
        let task: Task = task.parse().map_err(err)?;
        let train = unwrap_all(&windows);
        if task != Task::Humanize && !matches!(family, Family::Seq2Seq | Family::Seq2SeqVib) {
            return Err(PyValueError::new_err(format!("the {family} model only supports humanize")));
        }
        let cfg = TrainConfig {
            learning_rate,
            batch_size,
            epochs: if steps.is_some() { usize::MAX } else { TrainConfig::default().epochs },
            max_steps: steps,
            beta_vib: beta,
            vib: family == Family::Seq2SeqVib,
            seed,
            task,
            transfer_conditioning: family == Family::Transfer,
            dims: groove::Seq2SeqDims::uniform(dims),
            mlp_hidden: hidden,
            infill_categories: categories(category)?,
            ..TrainConfig::default()
        };
        let inner = match family {
            Family::Quantized => CoreModel::Quantized(TrainStats::from_corpus(&train).map_err(err)?),
            Family::Linear => CoreModel::Linear(linear_fit(&train, ridge).map_err(err)?),
            Family::Knn => {
                if k == 0 || k > train.len() {
                    return Err(PyValueError::new_err("k must be between 1 and the number of windows"));
                }
                CoreModel::Knn { k, train }
            }
            Family::Mlp => CoreModel::Mlp(mlp_train(&train, &cfg).map_err(err)?.0),
            Family::Seq2Seq | Family::Seq2SeqVib => CoreModel::Seq2Seq(train_seq2seq(&train, &cfg).map_err(err)?.0),
            Family::Transfer => CoreModel::Transfer { model: train_seq2seq(&train, &cfg).map_err(err)?.0, train },
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load(&path).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family().as_str()
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.inner.task().as_str()
    }

    fn humanize(&self, score: PyRef<'_, PyGroove>) -> PyResult<PyGroove> {
        self.inner.humanize(&score.inner).map(wrap).map_err(err)
    }

    fn infill(&self, partial: PyRef<'_, PyGroove>) -> PyResult<PyGroove> {
        self.inner.infill(&partial.inner).map(wrap).map_err(err)
    }

    /// Generates drums from per-step tap offsets (`None` where untapped).
    #[pyo3(signature = (taps, tempo_bpm = 120.0))]
    fn tap2drum(&self, taps: Vec<Option<f64>>, tempo_bpm: f64) -> PyResult<PyGroove> {
        self.inner.tap2drum(&tap_tensor(&taps, tempo_bpm)).map(wrap).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model(family={:?}, task={:?})", self.family(), self.task())
    }
}

/// Mean absolute timing error in milliseconds over notes hit in both tensors.
#[pyfunction]
fn timing_mae_ms(pred: PyRef<'_, PyGroove>, truth: PyRef<'_, PyGroove>) -> PyResult<f64> {
    metrics::timing_mae_ms(&pred.inner, &truth.inner).map_err(err)
}

/// Mean squared timing error in 16th notes.
#[pyfunction]
fn timing_mse_16th(pred: PyRef<'_, PyGroove>, truth: PyRef<'_, PyGroove>) -> PyResult<f64> {
    metrics::timing_mse_16th(&pred.inner, &truth.inner).map_err(err)
}

/// KL divergence between two univariate Gaussians.
#[pyfunction]
fn gaussian_kl(mu1: f64, s1: f64, mu2: f64, s2: f64) -> PyResult<f64> {
    metrics::gaussian_kl(mu1, s1, mu2, s2).map_err(err)
}

/// Full metrics report as JSON text.
#[pyfunction]
#[pyo3(signature = (pred, truth, resamples = 1000, seed = 0))]
fn evaluate(pred: Vec<PyRef<'_, PyGroove>>, truth: Vec<PyRef<'_, PyGroove>>, resamples: usize, seed: u64) -> PyResult<String> {
    let cfg = EvalConfig { resamples, seed, ..EvalConfig::default() };
    metrics::MetricsReport::evaluate(&unwrap_all(&pred), &unwrap_all(&truth), &cfg).map(|r| r.to_json()).map_err(err)
}

#[pymodule(name = "groove")]
fn groove_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroove>()?;
    m.add_class::<PyModel>()?;
    m.add("NUM_INSTRUMENTS", NUM_INSTRUMENTS)?;
    m.add(
        "CATEGORIES",
        groove::DrumCategory::ALL.iter().map(|c| c.name()).collect::<Vec<_>>(),
    )?;
    m.add_function(wrap_pyfunction!(from_midi, m)?)?;
    m.add_function(wrap_pyfunction!(to_score, m)?)?;
    m.add_function(wrap_pyfunction!(remove_voice, m)?)?;
    m.add_function(wrap_pyfunction!(flatten_to_taps, m)?)?;
    m.add_function(wrap_pyfunction!(knn_humanize, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(timing_mae_ms, m)?)?;
    m.add_function(wrap_pyfunction!(timing_mse_16th, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
