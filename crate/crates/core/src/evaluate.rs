//! Evaluation: summary F1 against reference annotations, rank
//! correlations against annotator scores, and cross-validated runs over a
//! dataset under the canonical, augmented or transfer settings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureio::{l2_normalize_rows, normalize_length, FeatureMatrix, VideoGroup, VideoRecord, DEFAULT_TARGET_LENGTH};
use crate::metrics::{
    combine_scores, cosine_neighbors, gaussian_smooth, global_consistency, local_dissimilarity,
    minmax_scale, ScoreKind, ScoreSeries, DEFAULT_EPSILON, DEFAULT_SMOOTH_SIGMA,
};
use crate::refine::{
    self, filter_scores, project, Checkpoint, FilterParams, ProjectorParams, TrainConfig,
};
use crate::summarize::{default_shots, make_summary, ShotSegmentation, DEFAULT_SUMMARY_RATIO, DEFAULT_SHOT_LEN};

/// Which training material each cross-validation fold may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalSetting {
    /// Train on the non-test folds of the same dataset.
    #[default]
    Canonical,
    /// Canonical plus all train-only videos.
    Augmented,
    /// Train on train-only videos, test every fold video once.
    Transfer,
}

impl std::fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EvalSetting::Canonical => "canonical",
            EvalSetting::Augmented => "augmented",
            EvalSetting::Transfer => "transfer",
        };
        f.write_str(s)
    }
}

/// How per-annotator F1 values fold into one number per video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum F1Aggregation {
    #[default]
    Mean,
    Max,
}

impl std::fmt::Display for F1Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            F1Aggregation::Mean => "mean",
            F1Aggregation::Max => "max",
        })
    }
}

/// Reference annotations for one video: per-annotator importance scores
/// and/or per-annotator binary summaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summaries: Vec<Vec<u8>>,
}

impl ReferenceSet {
    pub fn validate(&self) -> Result<()> {
        for (a, s) in self.scores.iter().enumerate() {
            if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "annotator {a} has a non-finite score at frame {i}"
                )));
            }
        }
        for (a, s) in self.summaries.iter().enumerate() {
            if let Some(i) = s.iter().position(|&v| v > 1) {
                return Err(Error::Data(format!(
                    "annotator {a} summary has value {} at frame {i}, must be 0 or 1",
                    s[i]
                )));
            }
        }
        Ok(())
    }

    /// Annotator score vectors, falling back to binary summaries read as
    /// scores when no graded annotations exist.
    pub fn score_vectors(&self) -> Vec<Vec<f64>> {
        if !self.scores.is_empty() {
            self.scores.clone()
        } else {
            self.summaries
                .iter()
                .map(|s| s.iter().map(|&v| v as f64).collect())
                .collect()
        }
    }
}

/// A metric value plus a flag marking comparisons that were degenerate
/// (empty sets, constant inputs); those report value 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

fn check_mask(name: &str, mask: &[u8]) -> Result<()> {
    if let Some(i) = mask.iter().position(|&v| v > 1) {
        return Err(Error::Domain(format!(
            "{name} mask has value {} at frame {i}, must be 0 or 1",
            mask[i]
        )));
    }
    Ok(())
}

/// F1 overlap between two binary frame masks. If either side selects
/// nothing, the comparison is degenerate and reports 0.
pub fn f1_single(pred: &[u8], reference: &[u8]) -> Result<MetricValue> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    check_mask("prediction", pred)?;
    check_mask("reference", reference)?;
    let a: f64 = reference.iter().map(|&v| v as f64).sum();
    let b: f64 = pred.iter().map(|&v| v as f64).sum();
    if a == 0.0 || b == 0.0 {
        return Ok(MetricValue { value: 0.0, degenerate: true });
    }
    let inter: f64 = pred
        .iter()
        .zip(reference)
        .map(|(&p, &r)| f64::from(p & r))
        .sum();
    let precision = inter / a;
    let recall = inter / b;
    let value = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricValue { value, degenerate: false })
}

/// F1 against several annotators, aggregated by mean or max.
pub fn f1_multi(pred: &[u8], references: &[Vec<u8>], agg: F1Aggregation) -> Result<MetricValue> {
    if references.is_empty() {
        return Err(Error::EmptyBatch("no reference summaries to compare against".into()));
    }
    let parts: Vec<MetricValue> = references
        .iter()
        .map(|r| f1_single(pred, r))
        .collect::<Result<_>>()?;
    let value = match agg {
        F1Aggregation::Mean => parts.iter().map(|p| p.value).sum::<f64>() / parts.len() as f64,
        F1Aggregation::Max => parts.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(MetricValue { value, degenerate: parts.iter().all(|p| p.degenerate) })
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::TooShort("correlation needs at least 2 values".into()));
    }
    for (name, s) in [("first", a), ("second", b)] {
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{name} series is non-finite at index {i}")));
        }
    }
    Ok(())
}

/// Kendall rank correlation with tie correction, by direct enumeration of
/// all pairs. Constant input on either side is degenerate.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<MetricValue> {
    check_pair(a, b)?;
    let n = a.len();
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut ties_a = 0u64;
    let mut ties_b = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a[i].partial_cmp(&a[j]).unwrap();
            let db = b[i].partial_cmp(&b[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                (x, y) if x == y => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let denom =
        ((concordant + discordant + ties_a) as f64 * (concordant + discordant + ties_b) as f64)
            .sqrt();
    if denom == 0.0 {
        return Ok(MetricValue { value: 0.0, degenerate: true });
    }
    let value = (concordant as f64 - discordant as f64) / denom;
    Ok(MetricValue { value, degenerate: false })
}

/// Ranks with ties assigned the average of their positions (1-based).
pub(crate) fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap().then(i.cmp(&j)));
    let mut ranks = vec![0.0; n];
    let mut s = 0;
    while s < n {
        let mut e = s;
        while e + 1 < n && x[idx[e + 1]] == x[idx[s]] {
            e += 1;
        }
        let avg = (s + e) as f64 / 2.0 + 1.0;
        for k in s..=e {
            ranks[idx[k]] = avg;
        }
        s = e + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average-tie ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<MetricValue> {
    check_pair(a, b)?;
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(MetricValue { value: 0.0, degenerate: true });
    }
    Ok(MetricValue { value: cov / (va * vb).sqrt(), degenerate: false })
}

/// Two-level correlation protocol: mean over each video's annotators,
/// then mean over videos. Returns `(kendall, spearman)`.
pub fn correlations_protocol(
    predictions: &[ScoreSeries],
    references: &[ReferenceSet],
) -> Result<(f64, f64)> {
    if predictions.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} reference sets",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyBatch("no videos to correlate".into()));
    }
    let mut tau_sum = 0.0;
    let mut rho_sum = 0.0;
    for (v, (pred, refs)) in predictions.iter().zip(references).enumerate() {
        let (tau, rho) = video_correlations(pred, refs)
            .map_err(|e| prepend_video(v, e))?;
        tau_sum += tau;
        rho_sum += rho;
    }
    let n = predictions.len() as f64;
    Ok((tau_sum / n, rho_sum / n))
}

fn prepend_video(v: usize, e: Error) -> Error {
    match e {
        Error::MissingReference(m) => Error::MissingReference(format!("video {v}: {m}")),
        other => other,
    }
}

fn video_correlations(pred: &ScoreSeries, refs: &ReferenceSet) -> Result<(f64, f64)> {
    let vectors = refs.score_vectors();
    if vectors.is_empty() {
        return Err(Error::MissingReference("no annotator scores".into()));
    }
    let mut tau = 0.0;
    let mut rho = 0.0;
    for ann in &vectors {
        tau += kendall_tau(pred.values(), ann)?.value;
        rho += spearman_rho(pred.values(), ann)?.value;
    }
    let n = vectors.len() as f64;
    Ok((tau / n, rho / n))
}

/// Anything that can assign per-frame importance, possibly after fitting
/// on training videos.
pub trait Scorer {
    fn fit(&mut self, train: &[&VideoRecord]) -> Result<()>;
    fn score(&self, video: &VideoRecord) -> Result<ScoreSeries>;
}

/// Importance from the pretrained features alone: min-max scaled local
/// dissimilarity and global consistency, multiplied, floored and
/// smoothed.
#[derive(Debug, Clone)]
pub struct TrainingFreeScorer {
    pub use_align: bool,
    pub use_uniform: bool,
    pub neighbor_ratio: f64,
    pub epsilon: f64,
    pub sigma: f64,
}

impl Default for TrainingFreeScorer {
    fn default() -> Self {
        TrainingFreeScorer {
            use_align: true,
            use_uniform: true,
            neighbor_ratio: crate::metrics::DEFAULT_NEIGHBOR_RATIO,
            epsilon: DEFAULT_EPSILON,
            sigma: DEFAULT_SMOOTH_SIGMA,
        }
    }
}

fn ensure_normalized(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.is_normalized() {
        Ok(m.clone())
    } else {
        l2_normalize_rows(m)
    }
}

impl Scorer for TrainingFreeScorer {
    fn fit(&mut self, _train: &[&VideoRecord]) -> Result<()> {
        Ok(())
    }

    fn score(&self, video: &VideoRecord) -> Result<ScoreSeries> {
        let feats = ensure_normalized(&video.features)?;
        let mut parts = Vec::new();
        if self.use_align {
            let neighbors = cosine_neighbors(&feats, self.neighbor_ratio)?;
            parts.push(minmax_scale(&local_dissimilarity(&feats, &neighbors)?));
        }
        if self.use_uniform {
            parts.push(minmax_scale(&global_consistency(&feats)?));
        }
        if parts.is_empty() {
            return Err(Error::Domain("scorer has no signal enabled".into()));
        }
        gaussian_smooth(&combine_scores(&parts, self.epsilon)?, self.sigma)
    }
}

/// Importance from refined features: the contrastive signals are computed
/// on projections (neighbor sets still come from the frozen features) and
/// multiplied with the filter head's uniqueness probability.
#[derive(Debug, Clone)]
pub struct RefinedScorer {
    pub config: TrainConfig,
    pub use_align: bool,
    pub use_uniform: bool,
    pub use_filter: bool,
    /// Min-max scale the filter probabilities like the other factors.
    pub scale_filter: bool,
    pub epsilon: f64,
    pub sigma: f64,
    /// Resample training videos to this many frames before fitting.
    pub target_length: Option<usize>,
    model: Option<(ProjectorParams, FilterParams)>,
}

impl RefinedScorer {
    pub fn new(config: TrainConfig) -> Self {
        RefinedScorer {
            config,
            use_align: true,
            use_uniform: true,
            use_filter: true,
            scale_filter: true,
            epsilon: DEFAULT_EPSILON,
            sigma: DEFAULT_SMOOTH_SIGMA,
            target_length: Some(DEFAULT_TARGET_LENGTH),
            model: None,
        }
    }

    /// Wraps already-trained parameters, e.g. from a checkpoint file.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let mut s = RefinedScorer::new(ckpt.config);
        s.model = Some((ckpt.projector, ckpt.filter));
        s
    }

    pub fn model(&self) -> Option<(&ProjectorParams, &FilterParams)> {
        self.model.as_ref().map(|(p, f)| (p, f))
    }

    pub fn into_checkpoint(self) -> Option<Checkpoint> {
        let config = self.config.clone();
        self.model.map(|(projector, filter)| Checkpoint { projector, filter, config })
    }
}

impl Scorer for RefinedScorer {
    fn fit(&mut self, train: &[&VideoRecord]) -> Result<()> {
        let mut features = Vec::with_capacity(train.len());
        for (i, v) in train.iter().enumerate() {
            let f = ensure_normalized(&v.features)?;
            let f = match self.target_length {
                Some(len) => {
                    let seed = self
                        .config
                        .seed
                        .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    normalize_length(&f, len, seed)?
                }
                None => f,
            };
            features.push(f);
        }
        let outcome = refine::train(&features, &self.config)?;
        self.model = Some((outcome.projector, outcome.filter));
        Ok(())
    }

    fn score(&self, video: &VideoRecord) -> Result<ScoreSeries> {
        let (proj, filt) = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Domain("refined scorer has not been fitted".into()))?;
        let feats = ensure_normalized(&video.features)?;
        let z = project(proj, &feats)?;
        let mut parts = Vec::new();
        if self.use_align {
            let neighbors = cosine_neighbors(&feats, self.config.neighbor_ratio)?;
            parts.push(minmax_scale(&local_dissimilarity(&z, &neighbors)?));
        }
        if self.use_uniform {
            parts.push(minmax_scale(&global_consistency(&z)?));
        }
        if self.use_filter {
            let probs = filter_scores(filt, &z)?;
            parts.push(if self.scale_filter { minmax_scale(&probs) } else { probs });
        }
        if parts.is_empty() {
            return Err(Error::Domain("scorer has no signal enabled".into()));
        }
        gaussian_smooth(&combine_scores(&parts, self.epsilon)?, self.sigma)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub summary_ratio: f64,
    pub shot_len: usize,
    pub f1_aggregation: F1Aggregation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            summary_ratio: DEFAULT_SUMMARY_RATIO,
            shot_len: DEFAULT_SHOT_LEN,
            f1_aggregation: F1Aggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerVideoResult {
    pub id: String,
    pub fold: usize,
    pub f1: f64,
    pub kendall_tau: f64,
    pub spearman_rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub num_videos: usize,
    pub f1: f64,
    pub kendall_tau: f64,
    pub spearman_rho: f64,
}

/// Overall numbers are flat means over all evaluated videos; per-fold
/// means are also reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub setting: EvalSetting,
    pub f1: f64,
    pub kendall_tau: f64,
    pub spearman_rho: f64,
    pub per_fold: Vec<FoldResult>,
    pub per_video: Vec<PerVideoResult>,
}

/// Scores one video and compares against its references.
pub fn evaluate_video(
    video: &VideoRecord,
    scores: &ScoreSeries,
    opts: &EvalOptions,
) -> Result<(f64, f64, f64)> {
    let refs = video
        .references
        .as_ref()
        .ok_or_else(|| Error::MissingReference(format!("video {:?}", video.id)))?;
    let t = video.features.frames();
    if scores.len() != t {
        return Err(Error::Shape(format!(
            "video {:?}: {} scores for {t} frames",
            video.id,
            scores.len()
        )));
    }
    let shots: ShotSegmentation = match &video.shots {
        Some(s) => s.clone(),
        None => default_shots(t, opts.shot_len)?,
    };
    let pred = make_summary(scores, &shots, opts.summary_ratio)?;
    let reference_masks: Vec<Vec<u8>> = if !refs.summaries.is_empty() {
        refs.summaries.clone()
    } else {
        refs.scores
            .iter()
            .map(|s| {
                let series = ScoreSeries::new(s.clone(), ScoreKind::Importance)?;
                Ok(make_summary(&series, &shots, opts.summary_ratio)?.frame_mask)
            })
            .collect::<Result<_>>()?
    };
    let f1 = f1_multi(&pred.frame_mask, &reference_masks, opts.f1_aggregation)?.value;
    let (tau, rho) = video_correlations(scores, refs)?;
    Ok((f1, tau, rho))
}

/// Runs cross-validated evaluation of a scorer over a dataset.
///
/// `splits` lists the test ids of each fold; every id must be present in
/// `videos` and no id may appear in two folds. In the transfer setting
/// the scorer is fitted once on the train-only videos and applied to all
/// fold videos.
pub fn run_setting(
    videos: &[VideoRecord],
    splits: &[Vec<String>],
    setting: EvalSetting,
    scorer: &mut dyn Scorer,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    if splits.is_empty() || splits.iter().all(|f| f.is_empty()) {
        return Err(Error::Manifest("no test folds defined".into()));
    }
    let by_id: BTreeMap<&str, &VideoRecord> =
        videos.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut seen = BTreeMap::new();
    for (k, fold) in splits.iter().enumerate() {
        for id in fold {
            if !by_id.contains_key(id.as_str()) {
                return Err(Error::Manifest(format!("fold {k} references unknown id {id:?}")));
            }
            if let Some(prev) = seen.insert(id.as_str(), k) {
                return Err(Error::Manifest(format!(
                    "id {id:?} appears in folds {prev} and {k}"
                )));
            }
        }
    }
    let in_any_fold = |id: &str| seen.contains_key(id);

    // (fold index, train records, test records) per pass.
    let mut passes: Vec<(usize, Vec<&VideoRecord>, Vec<&VideoRecord>)> = Vec::new();
    match setting {
        EvalSetting::Canonical | EvalSetting::Augmented => {
            for (k, fold) in splits.iter().enumerate() {
                let test: Vec<&VideoRecord> =
                    fold.iter().map(|id| by_id[id.as_str()]).collect();
                let train: Vec<&VideoRecord> = videos
                    .iter()
                    .filter(|v| match v.group {
                        VideoGroup::Eval => {
                            in_any_fold(&v.id) && !fold.contains(&v.id)
                        }
                        VideoGroup::TrainOnly => setting == EvalSetting::Augmented,
                    })
                    .collect();
                passes.push((k, train, test));
            }
        }
        EvalSetting::Transfer => {
            let test: Vec<&VideoRecord> = splits
                .iter()
                .flat_map(|fold| fold.iter().map(|id| by_id[id.as_str()]))
                .collect();
            let train: Vec<&VideoRecord> = videos
                .iter()
                .filter(|v| v.group == VideoGroup::TrainOnly)
                .collect();
            passes.push((0, train, test));
        }
    }

    let mut per_video = Vec::new();
    let mut per_fold = Vec::new();
    for (fold, train, test) in passes {
        scorer.fit(&train)?;
        let mut fold_f1 = 0.0;
        let mut fold_tau = 0.0;
        let mut fold_rho = 0.0;
        for video in &test {
            let scores = scorer.score(video)?;
            let (f1, tau, rho) = evaluate_video(video, &scores, opts)?;
            fold_f1 += f1;
            fold_tau += tau;
            fold_rho += rho;
            per_video.push(PerVideoResult {
                id: video.id.clone(),
                fold,
                f1,
                kendall_tau: tau,
                spearman_rho: rho,
            });
        }
        let n = test.len() as f64;
        per_fold.push(FoldResult {
            fold,
            num_videos: test.len(),
            f1: fold_f1 / n,
            kendall_tau: fold_tau / n,
            spearman_rho: fold_rho / n,
        });
    }

    let n = per_video.len() as f64;
    Ok(EvalResult {
        setting,
        f1: per_video.iter().map(|v| v.f1).sum::<f64>() / n,
        kendall_tau: per_video.iter().map(|v| v.kendall_tau).sum::<f64>() / n,
        spearman_rho: per_video.iter().map(|v| v.spearman_rho).sum::<f64>() / n,
        per_fold,
        per_video,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f1_matches_hand_computation_and_is_symmetric() {
        let a = vec![1u8, 1, 0, 0];
        let b = vec![1u8, 0, 1, 0];
        let v = f1_single(&a, &b).unwrap();
        assert!((v.value - 0.5).abs() < 1e-12);
        assert!(!v.degenerate);
        let w = f1_single(&b, &a).unwrap();
        assert_eq!(v.value, w.value);

        let perfect = f1_single(&a, &a).unwrap();
        assert_eq!(perfect.value, 1.0);

        let empty = f1_single(&[0, 0], &[1, 0]).unwrap();
        assert!(empty.degenerate && empty.value == 0.0);

        assert!(matches!(f1_single(&[1], &[1, 0]), Err(Error::Shape(_))));
        assert!(matches!(f1_single(&[2], &[1]), Err(Error::Domain(_))));
    }

    #[test]
    fn f1_multi_aggregates_mean_and_max() {
        let pred = vec![1u8, 1, 0, 0];
        let refs = vec![vec![1u8, 1, 0, 0], vec![0u8, 0, 1, 1]];
        let mean = f1_multi(&pred, &refs, F1Aggregation::Mean).unwrap();
        assert!((mean.value - 0.5).abs() < 1e-12);
        let max = f1_multi(&pred, &refs, F1Aggregation::Max).unwrap();
        assert_eq!(max.value, 1.0);
        assert!(matches!(
            f1_multi(&pred, &[], F1Aggregation::Mean),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn kendall_tau_exact_values() {
        let tau = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(tau.value, 2.0 / 3.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().value, 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value, -1.0);
        let constant = kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!(constant.degenerate && constant.value == 0.0);
    }

    #[test]
    fn kendall_tau_equals_inversion_count_without_ties() {
        let b = [4.0, 1.0, 7.0, 2.0, 9.0, 3.0, 5.0];
        let a: Vec<f64> = (0..b.len()).map(|i| i as f64).collect();
        let mut inversions = 0u64;
        for i in 0..b.len() {
            for j in (i + 1)..b.len() {
                if b[i] > b[j] {
                    inversions += 1;
                }
            }
        }
        let n = b.len() as f64;
        let expected = 1.0 - 4.0 * inversions as f64 / (n * (n - 1.0));
        assert!((kendall_tau(&a, &b).unwrap().value - expected).abs() < 1e-15);
    }

    #[test]
    fn spearman_exact_values_and_tie_ranks() {
        let rho = spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(rho.value, 0.5);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let constant = spearman_rho(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(constant.degenerate);
        let perfect = spearman_rho(&[1.0, 5.0, 9.0], &[2.0, 3.0, 8.0]).unwrap();
        assert_eq!(perfect.value, 1.0);
    }

    fn record(id: &str, t: usize, d: usize, seed: u64, group: VideoGroup) -> VideoRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let features = FeatureMatrix::from_rows(rows).unwrap();
        let scores: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..t).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        VideoRecord {
            id: id.into(),
            features,
            shots: None,
            references: Some(ReferenceSet { scores, summaries: vec![] }),
            group,
        }
    }

    #[test]
    fn correlations_protocol_averages_videos_and_annotators() {
        let pred = ScoreSeries::new(vec![1.0, 2.0, 3.0], ScoreKind::Importance).unwrap();
        let refs = ReferenceSet {
            scores: vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]],
            summaries: vec![],
        };
        let (tau, rho) = correlations_protocol(std::slice::from_ref(&pred), &[refs]).unwrap();
        assert!(tau.abs() < 1e-12, "opposite annotators cancel, got {tau}");
        assert!(rho.abs() < 1e-12);

        let missing = ReferenceSet::default();
        assert!(matches!(
            correlations_protocol(&[pred], &[missing]),
            Err(Error::MissingReference(_))
        ));
    }

    #[test]
    fn run_setting_reports_flat_and_per_fold_means() {
        let videos = vec![
            record("a", 24, 6, 1, VideoGroup::Eval),
            record("b", 24, 6, 2, VideoGroup::Eval),
            record("c", 24, 6, 3, VideoGroup::Eval),
            record("d", 24, 6, 4, VideoGroup::Eval),
        ];
        let splits = vec![
            vec!["a".to_string(), "b".to_string()],
            vec!["c".to_string(), "d".to_string()],
        ];
        let mut scorer = TrainingFreeScorer { sigma: 1.0, ..TrainingFreeScorer::default() };
        let opts = EvalOptions { shot_len: 4, ..EvalOptions::default() };
        let result =
            run_setting(&videos, &splits, EvalSetting::Canonical, &mut scorer, &opts).unwrap();
        assert_eq!(result.per_video.len(), 4);
        assert_eq!(result.per_fold.len(), 2);
        let mean_f1 = result.per_video.iter().map(|v| v.f1).sum::<f64>() / 4.0;
        assert!((result.f1 - mean_f1).abs() < 1e-12);
        let mean_tau =
            result.per_video.iter().map(|v| v.kendall_tau).sum::<f64>() / 4.0;
        assert!((result.kendall_tau - mean_tau).abs() < 1e-12);

        let transfer =
            run_setting(&videos, &splits, EvalSetting::Transfer, &mut scorer, &opts).unwrap();
        assert_eq!(transfer.per_fold.len(), 1);
        assert_eq!(transfer.per_video.len(), 4);
    }

    #[test]
    fn run_setting_rejects_bad_splits_and_missing_references() {
        let videos = vec![
            record("a", 16, 4, 1, VideoGroup::Eval),
            record("b", 16, 4, 2, VideoGroup::Eval),
        ];
        let mut scorer = TrainingFreeScorer::default();
        let opts = EvalOptions::default();
        let overlapping = vec![vec!["a".to_string()], vec!["a".to_string()]];
        assert!(matches!(
            run_setting(&videos, &overlapping, EvalSetting::Canonical, &mut scorer, &opts),
            Err(Error::Manifest(_))
        ));
        let unknown = vec![vec!["zz".to_string()]];
        assert!(matches!(
            run_setting(&videos, &unknown, EvalSetting::Canonical, &mut scorer, &opts),
            Err(Error::Manifest(_))
        ));
        assert!(matches!(
            run_setting(&videos, &[], EvalSetting::Canonical, &mut scorer, &opts),
            Err(Error::Manifest(_))
        ));

        let mut no_refs = videos;
        no_refs[0].references = None;
        let splits = vec![vec!["a".to_string()], vec!["b".to_string()]];
        assert!(matches!(
            run_setting(&no_refs, &splits, EvalSetting::Canonical, &mut scorer, &opts),
            Err(Error::MissingReference(_))
        ));
    }

    #[test]
    fn refined_scorer_requires_fitting() {
        let v = record("a", 16, 4, 1, VideoGroup::Eval);
        let scorer = RefinedScorer::new(TrainConfig::default());
        assert!(matches!(scorer.score(&v), Err(Error::Domain(_))));
    }
}
