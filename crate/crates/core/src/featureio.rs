//! Loading, validation and preprocessing of per-frame feature matrices,
//! dataset manifests and reference annotations.
//!
//! Feature files use a small binary container: the magic bytes `VF01`,
//! a `u32` frame count `T`, a `u32` feature dimension `D`, one flag byte
//! (1 if rows are L2-normalized), three reserved zero bytes, then `T * D`
//! little-endian `f32` values in row-major order. Values are widened to
//! `f64` in memory; narrowing back on save is lossless for data that came
//! from a file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{EvalSetting, F1Aggregation, ReferenceSet};
use crate::summarize::ShotSegmentation;

pub const FEATURE_MAGIC: [u8; 4] = *b"VF01";
const HEADER_LEN: usize = 16;

/// Tolerance used when checking that rows claimed to be normalized actually
/// have unit norm. Wide enough to absorb f32 storage rounding.
const NORM_CHECK_TOL: f64 = 1e-5;

/// Frame count that videos are resampled to before refinement training.
pub const DEFAULT_TARGET_LENGTH: usize = 200;

/// A dense `T x D` matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl FeatureMatrix {
    /// Builds a matrix from a flat row-major buffer.
    pub fn new(frames: usize, dim: usize, data: Vec<f64>, normalized: bool) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be non-empty, got {frames} x {dim}"
            )));
        }
        if data.len() != frames * dim {
            return Err(Error::Shape(format!(
                "feature buffer has {} values, expected {} ({frames} x {dim})",
                data.len(),
                frames * dim
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value at flat index {i}"
            )));
        }
        let m = FeatureMatrix { frames, dim, data, normalized };
        if normalized {
            for t in 0..frames {
                let n = row_norm(m.row(t));
                if (n - 1.0).abs() > NORM_CHECK_TOL {
                    return Err(Error::Data(format!(
                        "row {t} marked normalized but has norm {n}"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("feature matrix must have at least one row".into()));
        }
        let dim = rows[0].len();
        if let Some(t) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Shape(format!(
                "row {t} has length {}, expected {dim}",
                rows[t].len()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(rows.len(), dim, data, false)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Borrow frame `t` as a slice of length `dim`. Panics if out of range.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Reads a feature matrix from its binary container.
pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_features(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file too small for header: {} bytes",
            bytes.len()
        )));
    }
    if bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::Format("bad magic, expected VF01".into()));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let flag = bytes[12];
    if frames == 0 || dim == 0 {
        return Err(Error::Format(format!("empty matrix in header: {frames} x {dim}")));
    }
    if flag > 1 {
        return Err(Error::Format(format!("normalized flag must be 0 or 1, got {flag}")));
    }
    if bytes[13..16] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes must be zero".into()));
    }
    let expected = HEADER_LEN as u64 + frames as u64 * dim as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "payload size mismatch: file has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(frames * dim);
    for chunk in bytes[HEADER_LEN..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    FeatureMatrix::new(frames, dim, data, flag == 1)
}

/// Writes a feature matrix in the binary container format. Values are
/// narrowed to `f32`.
pub fn save_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    bytes.extend_from_slice(&FEATURE_MAGIC);
    bytes.extend_from_slice(&(m.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.dim as u32).to_le_bytes());
    bytes.push(u8::from(m.normalized));
    bytes.extend_from_slice(&[0, 0, 0]);
    for v in &m.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Returns a copy with every row scaled to unit L2 norm.
pub fn l2_normalize_rows(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut data = Vec::with_capacity(m.data.len());
    for t in 0..m.frames {
        let row = m.row(t);
        let n = row_norm(row);
        if n < 1e-150 {
            return Err(Error::DegenerateFeature(format!("row {t} has zero norm")));
        }
        data.extend(row.iter().map(|v| v / n));
    }
    Ok(FeatureMatrix { frames: m.frames, dim: m.dim, data, normalized: true })
}

/// Resamples a video to exactly `target` frames.
///
/// Longer videos keep a random sorted subset of frames (seeded, without
/// replacement); shorter videos repeat frames by nearest-neighbor index
/// interpolation. Relative frame order is always preserved.
pub fn normalize_length(m: &FeatureMatrix, target: usize, seed: u64) -> Result<FeatureMatrix> {
    if target == 0 {
        return Err(Error::Domain("target length must be at least 1".into()));
    }
    let t = m.frames;
    let indices: Vec<usize> = if t == target {
        return Ok(m.clone());
    } else if t > target {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, t, target).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..target)
            .map(|i| {
                if target == 1 {
                    0
                } else {
                    ((i as f64) * ((t - 1) as f64) / ((target - 1) as f64)).round() as usize
                }
            })
            .collect()
    };
    let mut data = Vec::with_capacity(target * m.dim);
    for &src in &indices {
        data.extend_from_slice(m.row(src));
    }
    Ok(FeatureMatrix { frames: target, dim: m.dim, data, normalized: m.normalized })
}

/// One video in a dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub feature_path: String,
    /// Shot boundaries as `[start, end)` intervals covering the video.
    /// Absent means a fixed-length segmentation is derived at use time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references_path: Option<String>,
}

/// Top-level dataset description: videos, cross-validation folds and the
/// evaluation setting they are meant for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub videos: Vec<VideoEntry>,
    /// Each inner list is the test-video ids of one fold.
    #[serde(default)]
    pub splits: Vec<Vec<String>>,
    #[serde(default)]
    pub setting: EvalSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_aggregation: Option<F1Aggregation>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for v in &self.videos {
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate video id {:?}", v.id)));
            }
        }
        let mut seen_in_fold = BTreeSet::new();
        for (k, fold) in self.splits.iter().enumerate() {
            for id in fold {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Manifest(format!(
                        "fold {k} references unknown video id {id:?}"
                    )));
                }
                if !seen_in_fold.insert(id.as_str()) {
                    return Err(Error::Manifest(format!(
                        "video id {id:?} appears in more than one test fold"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True if `id` is a test video of any fold.
    pub fn is_eval_id(&self, id: &str) -> bool {
        self.splits.iter().any(|fold| fold.iter().any(|x| x == id))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_references(path: &Path) -> Result<ReferenceSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let refs: ReferenceSet = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    refs.validate()
        .map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })?;
    if refs.scores.is_empty() && refs.summaries.is_empty() {
        return Err(Error::Format(format!(
            "{}: references hold neither scores nor summaries",
            path.display()
        )));
    }
    Ok(refs)
}

pub fn save_references(path: &Path, refs: &ReferenceSet) -> Result<()> {
    let mut text = serde_json::to_string_pretty(refs)
        .map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Whether a video participates in evaluation folds or is extra training
/// material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoGroup {
    TrainOnly,
    Eval,
}

/// A fully loaded video: features plus whatever annotations the manifest
/// declared for it.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureMatrix,
    pub shots: Option<ShotSegmentation>,
    pub references: Option<ReferenceSet>,
    pub group: VideoGroup,
}

/// Loads every video listed in a manifest. Paths are resolved relative to
/// `base`, which is normally the manifest's directory.
pub fn load_dataset(manifest: &DatasetManifest, base: &Path) -> Result<Vec<VideoRecord>> {
    manifest.validate()?;
    let mut records = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let features = load_features(&resolve(base, &entry.feature_path))?;
        let t = features.frames();
        let shots = match &entry.shots {
            Some(intervals) => {
                let seg = ShotSegmentation::from_intervals(intervals.clone()).map_err(|e| {
                    Error::Manifest(format!("video {:?}: invalid shots: {e}", entry.id))
                })?;
                if seg.total_frames() != t {
                    return Err(Error::Manifest(format!(
                        "video {:?}: shots cover {} frames, features have {t}",
                        entry.id,
                        seg.total_frames()
                    )));
                }
                Some(seg)
            }
            None => None,
        };
        let references = match &entry.references_path {
            Some(p) => {
                let refs = load_references(&resolve(base, p))?;
                for (a, s) in refs.scores.iter().enumerate() {
                    if s.len() != t {
                        return Err(Error::Manifest(format!(
                            "video {:?}: reference scores {a} have length {}, features have {t}",
                            entry.id,
                            s.len()
                        )));
                    }
                }
                for (a, s) in refs.summaries.iter().enumerate() {
                    if s.len() != t {
                        return Err(Error::Manifest(format!(
                            "video {:?}: reference summary {a} has length {}, features have {t}",
                            entry.id,
                            s.len()
                        )));
                    }
                }
                Some(refs)
            }
            None => None,
        };
        let group = if manifest.is_eval_id(&entry.id) {
            VideoGroup::Eval
        } else {
            VideoGroup::TrainOnly
        };
        records.push(VideoRecord { id: entry.id.clone(), features, shots, references, group });
    }
    Ok(records)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
