//! Python bindings: the scoring, summarization, evaluation and synthesis
//! operations on plain lists, plus classes for feature matrices and
//! trained checkpoints.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vidsum_core::evaluate::{self, RefinedScorer, Scorer, TrainingFreeScorer};
use vidsum_core::featureio::{self, FeatureMatrix as CoreMatrix, VideoGroup, VideoRecord};
use vidsum_core::metrics::{self, ScoreKind, ScoreSeries};
use vidsum_core::refine::{self, TrainConfig};
use vidsum_core::summarize::{self, ShotSegmentation};
use vidsum_core::synth;
use vidsum_core::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::TrainingDiverged(_) => PyRuntimeError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn series(values: Vec<f64>, kind: ScoreKind) -> PyResult<ScoreSeries> {
    ScoreSeries::new(values, kind).map_err(to_py)
}

/// A frame-by-dimension feature matrix.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct FeatureMatrix {
    inner: CoreMatrix,
}

#[pymethods]
impl FeatureMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(FeatureMatrix { inner: CoreMatrix::from_rows(rows).map_err(to_py)? })
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.frames()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn normalized(&self) -> bool {
        self.inner.is_normalized()
    }

    fn row(&self, t: usize) -> PyResult<Vec<f64>> {
        if t >= self.inner.frames() {
            return Err(PyValueError::new_err(format!(
                "frame {t} out of range for {} frames",
                self.inner.frames()
            )));
        }
        Ok(self.inner.row(t).to_vec())
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.frames()).map(|t| self.inner.row(t).to_vec()).collect()
    }

    /// Returns a copy with unit-norm rows.
    fn normalize(&self) -> PyResult<Self> {
        Ok(FeatureMatrix { inner: featureio::l2_normalize_rows(&self.inner).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(FeatureMatrix { inner: featureio::load_features(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        featureio::save_features(&path, &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.frames()
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureMatrix(frames={}, dim={}, normalized={})",
            self.inner.frames(),
            self.inner.dim(),
            self.inner.is_normalized()
        )
    }
}

fn record(m: &FeatureMatrix) -> VideoRecord {
    VideoRecord {
        id: String::new(),
        features: m.inner.clone(),
        shots: None,
        references: None,
        group: VideoGroup::Eval,
    }
}

/// Trained projector and uniqueness-filter parameters.
#[pyclass]
struct Checkpoint {
    inner: refine::Checkpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Checkpoint { inner: refine::load_checkpoint(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        refine::save_checkpoint(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.config.seed
    }

    #[getter]
    fn proj_dim(&self) -> usize {
        self.inner.config.proj_dim
    }

    /// Importance scores for one video using the trained model.
    #[pyo3(signature = (features, align=true, uniform=true, filter=true, epsilon=0.05, sigma=2.0))]
    fn score(
        &self,
        features: &FeatureMatrix,
        align: bool,
        uniform: bool,
        filter: bool,
        epsilon: f64,
        sigma: f64,
    ) -> PyResult<Vec<f64>> {
        let mut scorer = RefinedScorer::from_checkpoint(self.inner.clone());
        scorer.use_align = align;
        scorer.use_uniform = uniform;
        scorer.use_filter = filter;
        scorer.epsilon = epsilon;
        scorer.sigma = sigma;
        let s = scorer.score(&record(features)).map_err(to_py)?;
        Ok(s.values().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(proj_dim={}, hidden_dim={}, filter_hidden={}, seed={})",
            self.inner.config.proj_dim,
            self.inner.config.hidden_dim,
            self.inner.config.filter_hidden,
            self.inner.config.seed
        )
    }
}

/// Mean squared distance from each frame to its nearest-neighbor set.
#[pyfunction]
#[pyo3(signature = (features, ratio=0.1))]
fn local_dissimilarity(features: &FeatureMatrix, ratio: f64) -> PyResult<Vec<f64>> {
    let neighbors = metrics::cosine_neighbors(&features.inner, ratio).map_err(to_py)?;
    let s = metrics::local_dissimilarity(&features.inner, &neighbors).map_err(to_py)?;
    Ok(s.values().to_vec())
}

/// Log-mean-exp closeness of each frame to all other frames.
#[pyfunction]
fn global_consistency(features: &FeatureMatrix) -> PyResult<Vec<f64>> {
    let s = metrics::global_consistency(&features.inner).map_err(to_py)?;
    Ok(s.values().to_vec())
}

#[pyfunction]
fn minmax_scale(values: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(metrics::minmax_scale(&series(values, ScoreKind::RawLoss)?).values().to_vec())
}

/// Elementwise product of the given series plus an additive floor.
#[pyfunction]
#[pyo3(signature = (parts, epsilon=0.05))]
fn combine_scores(parts: Vec<Vec<f64>>, epsilon: f64) -> PyResult<Vec<f64>> {
    let parts: Vec<ScoreSeries> = parts
        .into_iter()
        .map(|p| series(p, ScoreKind::Scaled))
        .collect::<PyResult<_>>()?;
    Ok(metrics::combine_scores(&parts, epsilon).map_err(to_py)?.values().to_vec())
}

/// Gaussian smoothing with reflect padding; sigma 0 is the identity.
#[pyfunction]
fn gaussian_smooth(values: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
    let s = metrics::gaussian_smooth(&series(values, ScoreKind::Importance)?, sigma)
        .map_err(to_py)?;
    Ok(s.values().to_vec())
}

/// The full training-free importance pipeline on one video.
#[pyfunction]
#[pyo3(signature = (features, align=true, uniform=true, ratio=0.1, epsilon=0.05, sigma=2.0))]
fn training_free_scores(
    features: &FeatureMatrix,
    align: bool,
    uniform: bool,
    ratio: f64,
    epsilon: f64,
    sigma: f64,
) -> PyResult<Vec<f64>> {
    let scorer = TrainingFreeScorer {
        use_align: align,
        use_uniform: uniform,
        neighbor_ratio: ratio,
        epsilon,
        sigma,
    };
    let s = scorer.score(&record(features)).map_err(to_py)?;
    Ok(s.values().to_vec())
}

/// Exact 0/1 knapsack over shots; returns the selected shot indices.
#[pyfunction]
fn knapsack_select(values: Vec<f64>, lengths: Vec<usize>, budget: usize) -> PyResult<Vec<usize>> {
    let sel = summarize::knapsack_select(&values, &lengths, budget).map_err(to_py)?;
    Ok(sel.selected_indices())
}

/// Builds a summary from per-frame scores. Returns
/// `(frame_mask, selected_shots, budget)`.
#[pyfunction]
#[pyo3(signature = (scores, shots=None, ratio=0.15, shot_len=30))]
fn make_summary(
    scores: Vec<f64>,
    shots: Option<Vec<(usize, usize)>>,
    ratio: f64,
    shot_len: usize,
) -> PyResult<(Vec<u32>, Vec<usize>, usize)> {
    let n = scores.len();
    let series = series(scores, ScoreKind::Importance)?;
    let segmentation = match shots {
        Some(intervals) => ShotSegmentation::from_intervals(intervals).map_err(to_py)?,
        None => summarize::default_shots(n, shot_len).map_err(to_py)?,
    };
    let sel = summarize::make_summary(&series, &segmentation, ratio).map_err(to_py)?;
    let mask = sel.frame_mask.iter().map(|&b| b as u32).collect();
    Ok((mask, sel.selected_indices(), sel.budget))
}

#[pyfunction]
fn kendall_tau(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    Ok(evaluate::kendall_tau(&a, &b).map_err(to_py)?.value)
}

#[pyfunction]
fn spearman_rho(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    Ok(evaluate::spearman_rho(&a, &b).map_err(to_py)?.value)
}

/// F1 between binary frame masks (precision on the reference, recall on
/// the prediction).
#[pyfunction]
fn f1_score(pred: Vec<u8>, reference: Vec<u8>) -> PyResult<f64> {
    Ok(evaluate::f1_single(&pred, &reference).map_err(to_py)?.value)
}

/// Trains the projector and filter on a batch of feature matrices.
#[pyfunction]
#[pyo3(signature = (
    features, proj_dim=128, hidden_dim=512, filter_hidden=128, segment_len=5,
    neighbor_ratio=0.1, lambda1=0.5, lambda2=0.1, lambda3=0.1, lr=1e-4,
    weight_decay=1e-4, batch_size=8, epochs=40, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn train(
    features: Vec<FeatureMatrix>,
    proj_dim: usize,
    hidden_dim: usize,
    filter_hidden: usize,
    segment_len: usize,
    neighbor_ratio: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    lr: f64,
    weight_decay: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> PyResult<(Checkpoint, Vec<f64>)> {
    let config = TrainConfig {
        proj_dim,
        hidden_dim,
        filter_hidden,
        segment_len,
        neighbor_ratio,
        lambda1,
        lambda2,
        lambda3,
        lr,
        weight_decay,
        batch_size,
        epochs,
        seed,
    };
    let mats: Vec<CoreMatrix> = features
        .iter()
        .map(|f| {
            if f.inner.is_normalized() {
                Ok(f.inner.clone())
            } else {
                featureio::l2_normalize_rows(&f.inner).map_err(to_py)
            }
        })
        .collect::<PyResult<_>>()?;
    let outcome = refine::train(&mats, &config).map_err(to_py)?;
    let ckpt = refine::Checkpoint {
        projector: outcome.projector,
        filter: outcome.filter,
        config,
    };
    Ok((Checkpoint { inner: ckpt }, outcome.history))
}

/// Writes a synthetic dataset (features, references, manifest, labels).
#[pyfunction]
#[pyo3(signature = (
    out, videos=8, frames=200, dim=32, clusters=4, redundancy=10, noise=0.05,
    key_fraction=0.25, pool=4, seed=7
))]
#[allow(clippy::too_many_arguments)]
fn write_synth_dataset(
    out: PathBuf,
    videos: usize,
    frames: usize,
    dim: usize,
    clusters: usize,
    redundancy: usize,
    noise: f64,
    key_fraction: f64,
    pool: usize,
    seed: u64,
) -> PyResult<()> {
    let spec = synth::SynthSpec {
        n_videos: videos,
        frames,
        dim,
        n_clusters: clusters,
        redundancy,
        noise_sigma: noise,
        key_fraction,
        background_pool: pool,
        seed,
    };
    let ds = synth::generate(&spec).map_err(to_py)?;
    std::fs::create_dir_all(&out)
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", out.display())))?;
    synth::write_dataset(&ds, &out).map_err(to_py)
}

/// Area under the ROC curve of `scores` against a boolean labelling.
#[pyfunction]
fn planted_auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<f64> {
    synth::planted_auc(&series(scores, ScoreKind::RawLoss)?, &positive).map_err(to_py)
}

#[pymodule]
fn vidsum(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FeatureMatrix>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(local_dissimilarity, m)?)?;
    m.add_function(wrap_pyfunction!(global_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_scale, m)?)?;
    m.add_function(wrap_pyfunction!(combine_scores, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(training_free_scores, m)?)?;
    m.add_function(wrap_pyfunction!(knapsack_select, m)?)?;
    m.add_function(wrap_pyfunction!(make_summary, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(spearman_rho, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(write_synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(planted_auc, m)?)?;
    Ok(())
}
