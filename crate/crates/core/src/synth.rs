//! Synthetic videos with planted structure for end-to-end checks.
//!
//! Each video mixes three kinds of frames on the unit sphere:
//!
//! * redundant: near-duplicates of per-video cluster themes, so their
//!   local dissimilarity is low;
//! * key: frames scattered widely around a theme, video-specific and
//!   locally distinct;
//! * background: short runs drawn from a small pool of directions shared
//!   by every video, so pooled segments of other videos sit right on top
//!   of them and their uniqueness loss is high.
//!
//! Frames are laid out in shuffled blocks (redundant clusters, key
//! chunks, background runs) so that segment pooling picks up background
//! runs. Everything is driven by one seed; regenerating with the same
//! spec is bit-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{average_ranks, EvalSetting, ReferenceSet};
use crate::featureio::{
    save_features, save_manifest, save_references, DatasetManifest, FeatureMatrix, VideoEntry,
};
use crate::metrics::ScoreSeries;

/// Angular spread of key frames around their theme; well above the
/// default per-frame noise, well below the distance between themes.
const KEY_SPREAD: f64 = 0.35;

/// Frames per key block / background run in the generated layout.
const RUN_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub frames: usize,
    pub dim: usize,
    /// Orthonormal theme directions per video.
    pub n_clusters: usize,
    /// Redundant near-duplicates planted per cluster.
    pub redundancy: usize,
    pub noise_sigma: f64,
    /// Fraction of frames that are key frames.
    pub key_fraction: f64,
    /// Size of the background direction pool shared across videos;
    /// zero disables background frames.
    pub background_pool: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_videos: 8,
            frames: 200,
            dim: 32,
            n_clusters: 4,
            redundancy: 10,
            noise_sigma: 0.05,
            key_fraction: 0.25,
            background_pool: 4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameLabel {
    Redundant,
    Key,
    Background,
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub id: String,
    pub features: FeatureMatrix,
    pub labels: Vec<FrameLabel>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub videos: Vec<SynthVideo>,
}

struct Counts {
    key: usize,
    background: usize,
}

impl SynthSpec {
    fn counts(&self) -> Result<Counts> {
        let n_red = self.n_clusters * self.redundancy;
        let key = if self.background_pool == 0 {
            self.frames.saturating_sub(n_red)
        } else {
            (self.key_fraction * self.frames as f64).round() as usize
        };
        if key == 0 {
            return Err(Error::Spec("spec yields zero key frames".into()));
        }
        if n_red + key > self.frames {
            return Err(Error::Spec(format!(
                "{} redundant + {key} key frames exceed {} total",
                n_red, self.frames
            )));
        }
        Ok(Counts { key, background: self.frames - n_red - key })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0 {
            return Err(Error::Spec("need at least one video".into()));
        }
        if self.n_videos < 2 {
            // Refinement batches need a counterpart video; one video is
            // still fine for metric-only use.
        }
        if self.dim < self.n_clusters {
            return Err(Error::Spec(format!(
                "dim {} cannot hold {} orthogonal themes",
                self.dim, self.n_clusters
            )));
        }
        if self.n_clusters == 0 || self.redundancy == 0 {
            return Err(Error::Spec("need at least one cluster with redundancy >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Spec(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.key_fraction > 0.0 && self.key_fraction <= 1.0) {
            return Err(Error::Spec(format!(
                "key fraction must be in (0, 1], got {}",
                self.key_fraction
            )));
        }
        self.counts().map(|_| ())
    }
}

fn gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

/// Gram-Schmidt over fresh Gaussian draws.
fn orthonormal_set(rng: &mut impl Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, d);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (x, c) in v.iter_mut().zip(b) {
                *x -= dot * c;
            }
        }
        if norm(&v) > 1e-8 {
            basis.push(normalized(v));
        }
    }
    basis
}

/// A unit vector at angular distance `atan(spread)` from `center`, in a
/// random tangent direction. Zero spread returns the center itself.
fn jitter(rng: &mut impl Rng, center: &[f64], spread: f64) -> Vec<f64> {
    if spread == 0.0 {
        return center.to_vec();
    }
    loop {
        let g = gaussian(rng, center.len());
        let dot: f64 = g.iter().zip(center).map(|(a, b)| a * b).sum();
        let mut tangent: Vec<f64> =
            g.iter().zip(center).map(|(a, b)| a - dot * b).collect();
        let tn = norm(&tangent);
        if tn < 1e-8 {
            continue;
        }
        for t in &mut tangent {
            *t /= tn;
        }
        let v: Vec<f64> = center
            .iter()
            .zip(&tangent)
            .map(|(c, t)| c + spread * t)
            .collect();
        return normalized(v);
    }
}

struct Block {
    label: FrameLabel,
    rows: Vec<Vec<f64>>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let counts = spec.counts()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool: Vec<Vec<f64>> = (0..spec.background_pool)
        .map(|_| normalized(gaussian(&mut master, spec.dim)))
        .collect();

    let mut videos = Vec::with_capacity(spec.n_videos);
    for idx in 0..spec.n_videos {
        let vid_seed = spec
            .seed
            .wrapping_add((idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(vid_seed);
        let themes = orthonormal_set(&mut rng, spec.n_clusters, spec.dim);

        let mut blocks: Vec<Block> = Vec::new();
        for theme in &themes {
            let rows = (0..spec.redundancy)
                .map(|_| jitter(&mut rng, theme, spec.noise_sigma))
                .collect();
            blocks.push(Block { label: FrameLabel::Redundant, rows });
        }
        let mut key_index = 0;
        while key_index < counts.key {
            let size = RUN_LEN.min(counts.key - key_index);
            let rows = (0..size)
                .map(|i| {
                    let theme = &themes[(key_index + i) % spec.n_clusters];
                    jitter(&mut rng, theme, KEY_SPREAD)
                })
                .collect();
            blocks.push(Block { label: FrameLabel::Key, rows });
            key_index += size;
        }
        if counts.background > 0 {
            let shift = rng.random_range(0..spec.background_pool);
            let mut run = 0;
            let mut placed = 0;
            while placed < counts.background {
                let size = RUN_LEN.min(counts.background - placed);
                let center = &pool[(run + shift) % spec.background_pool];
                let rows = (0..size)
                    .map(|_| jitter(&mut rng, center, spec.noise_sigma))
                    .collect();
                blocks.push(Block { label: FrameLabel::Background, rows });
                placed += size;
                run += 1;
            }
        }
        blocks.shuffle(&mut rng);

        let mut rows = Vec::with_capacity(spec.frames);
        let mut labels = Vec::with_capacity(spec.frames);
        for b in blocks {
            for r in b.rows {
                rows.push(r);
                labels.push(b.label);
            }
        }
        let mut data = Vec::with_capacity(spec.frames * spec.dim);
        for r in &rows {
            data.extend_from_slice(r);
        }
        let features = FeatureMatrix::new(spec.frames, spec.dim, data, true)?;
        videos.push(SynthVideo { id: format!("synth{idx:03}"), features, labels });
    }
    Ok(SynthDataset { spec: spec.clone(), videos })
}

/// Reference importance used when exporting a synthetic dataset.
pub fn label_score(label: FrameLabel) -> f64 {
    match label {
        FrameLabel::Key => 1.0,
        FrameLabel::Redundant => 0.25,
        FrameLabel::Background => 0.0,
    }
}

/// Writes features, references, `manifest.json` and `labels.json` under
/// `dir`. Videos are spread round-robin over up to five folds.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<()> {
    let features_dir = dir.join("features");
    let refs_dir = dir.join("references");
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    fs::create_dir_all(&refs_dir).map_err(|e| Error::io(&refs_dir, e))?;

    let mut entries = Vec::with_capacity(ds.videos.len());
    for v in &ds.videos {
        save_features(&features_dir.join(format!("{}.vfeat", v.id)), &v.features)?;
        let refs = ReferenceSet {
            scores: vec![v.labels.iter().map(|&l| label_score(l)).collect()],
            summaries: vec![],
        };
        save_references(&refs_dir.join(format!("{}.json", v.id)), &refs)?;
        entries.push(VideoEntry {
            id: v.id.clone(),
            feature_path: format!("features/{}.vfeat", v.id),
            shots: None,
            references_path: Some(format!("references/{}.json", v.id)),
        });
    }
    let folds = ds.videos.len().min(5);
    let mut splits = vec![Vec::new(); folds];
    for (i, v) in ds.videos.iter().enumerate() {
        splits[i % folds].push(v.id.clone());
    }
    let manifest = DatasetManifest {
        videos: entries,
        splits,
        setting: EvalSetting::Canonical,
        f1_aggregation: None,
    };
    save_manifest(&dir.join("manifest.json"), &manifest)?;

    let labels: BTreeMap<&str, &Vec<FrameLabel>> =
        ds.videos.iter().map(|v| (v.id.as_str(), &v.labels)).collect();
    let mut text =
        serde_json::to_string_pretty(&labels).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    let labels_path = dir.join("labels.json");
    fs::write(&labels_path, text).map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, Vec<FrameLabel>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Area under the ROC curve of `scores` for the `positive` labelling,
/// computed from tie-averaged ranks.
pub fn planted_auc(scores: &ScoreSeries, positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let ranks = average_ranks(scores.values());
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
