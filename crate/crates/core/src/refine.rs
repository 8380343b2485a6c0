//! Contrastive refinement of frame features.
//!
//! A small residual MLP projects pretrained features onto the unit sphere
//! in a lower-dimensional space. It is trained on batches of videos with
//! four per-frame loss terms:
//!
//! * alignment: mean squared distance to the frame's nearest neighbors,
//!   where neighbor sets always come from the frozen pretrained features;
//! * uniformity: log-mean-exp of `-2 d^2` to every other projected frame
//!   of the same video;
//! * uniqueness: the same log-mean-exp form against average-pooled
//!   segments of the *other* videos in the batch;
//! * a filter head trained by binary cross-entropy to predict, from the
//!   detached projection, whether a frame is unique. Its targets are one
//!   minus the min-max scaled uniqueness loss and gradients from this
//!   term never reach the projector.
//!
//! All gradients are computed analytically; the optimizer is Adam with an
//! L2 penalty added to the gradient.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureio::FeatureMatrix;
use crate::metrics::{
    self, cosine_neighbors, global_consistency, local_dissimilarity, minmax_scale, NeighborSets,
    ScoreKind, ScoreSeries,
};

pub const DEFAULT_SEGMENT_LEN: usize = 5;

/// Hyperparameters for refinement training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub proj_dim: usize,
    pub hidden_dim: usize,
    pub filter_hidden: usize,
    /// Frames pooled into one segment for the uniqueness term.
    pub segment_len: usize,
    /// Fraction of frames retrieved as neighbors for the alignment term.
    pub neighbor_ratio: f64,
    /// Weight of the uniformity term.
    pub lambda1: f64,
    /// Weight of the uniqueness term.
    pub lambda2: f64,
    /// Weight of the filter term.
    pub lambda3: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            proj_dim: 128,
            hidden_dim: 512,
            filter_hidden: 128,
            segment_len: DEFAULT_SEGMENT_LEN,
            neighbor_ratio: metrics::DEFAULT_NEIGHBOR_RATIO,
            lambda1: 0.5,
            lambda2: 0.1,
            lambda3: 0.1,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_dim == 0 || self.hidden_dim == 0 || self.filter_hidden == 0 {
            return Err(Error::Domain("network dimensions must be at least 1".into()));
        }
        if self.segment_len == 0 {
            return Err(Error::Domain("segment length must be at least 1".into()));
        }
        if !(self.neighbor_ratio > 0.0 && self.neighbor_ratio <= 1.0) {
            return Err(Error::Domain(format!(
                "neighbor ratio must be in (0, 1], got {}",
                self.neighbor_ratio
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Domain("batch size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Residual two-layer MLP with unit-norm output.
///
/// `z = normalize(u + W_out tanh(W_h u + b_h) + b_out)` with
/// `u = W_in x + b_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    input_dim: usize,
    proj_dim: usize,
    hidden_dim: usize,
    w_in: Vec<f64>,
    b_in: Vec<f64>,
    w_h: Vec<f64>,
    b_h: Vec<f64>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

/// One hidden tanh layer and a sigmoid output in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    proj_dim: usize,
    hidden_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl ProjectorParams {
    /// Xavier-uniform weights, zero biases. Weight tensors draw from the
    /// RNG in declaration order, so a seeded RNG gives stable values.
    pub fn init(input_dim: usize, proj_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        ProjectorParams {
            input_dim,
            proj_dim,
            hidden_dim,
            w_in: xavier(rng, input_dim, proj_dim, proj_dim * input_dim),
            b_in: vec![0.0; proj_dim],
            w_h: xavier(rng, proj_dim, hidden_dim, hidden_dim * proj_dim),
            b_h: vec![0.0; hidden_dim],
            w_out: xavier(rng, hidden_dim, proj_dim, proj_dim * hidden_dim),
            b_out: vec![0.0; proj_dim],
        }
    }

    pub fn zeros(input_dim: usize, proj_dim: usize, hidden_dim: usize) -> Self {
        ProjectorParams {
            input_dim,
            proj_dim,
            hidden_dim,
            w_in: vec![0.0; proj_dim * input_dim],
            b_in: vec![0.0; proj_dim],
            w_h: vec![0.0; hidden_dim * proj_dim],
            b_h: vec![0.0; hidden_dim],
            w_out: vec![0.0; proj_dim * hidden_dim],
            b_out: vec![0.0; proj_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_params(&self) -> usize {
        self.w_in.len()
            + self.b_in.len()
            + self.w_h.len()
            + self.b_h.len()
            + self.w_out.len()
            + self.b_out.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn from_flat(
        input_dim: usize,
        proj_dim: usize,
        hidden_dim: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let mut p = ProjectorParams::zeros(input_dim, proj_dim, hidden_dim);
        if flat.len() != p.num_params() {
            return Err(Error::Shape(format!(
                "projector expects {} parameters, got {}",
                p.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in p.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(p)
    }

    fn tensors(&self) -> [&Vec<f64>; 6] {
        [&self.w_in, &self.b_in, &self.w_h, &self.b_h, &self.w_out, &self.b_out]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_h,
            &mut self.b_h,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

impl FilterParams {
    pub fn init(proj_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        FilterParams {
            proj_dim,
            hidden_dim,
            w1: xavier(rng, proj_dim, hidden_dim, hidden_dim * proj_dim),
            b1: vec![0.0; hidden_dim],
            w2: xavier(rng, hidden_dim, 1, hidden_dim),
            b2: vec![0.0; 1],
        }
    }

    pub fn zeros(proj_dim: usize, hidden_dim: usize) -> Self {
        FilterParams {
            proj_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * proj_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: vec![0.0; 1],
        }
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn from_flat(proj_dim: usize, hidden_dim: usize, flat: &[f64]) -> Result<Self> {
        let mut f = FilterParams::zeros(proj_dim, hidden_dim);
        if flat.len() != f.num_params() {
            return Err(Error::Shape(format!(
                "filter expects {} parameters, got {}",
                f.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in f.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(f)
    }

    fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// out = W x + b, with W stored row-major as `rows x cols`.
fn affine(w: &[f64], b: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

/// out += W^T y.
fn add_matvec_t(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let yr = y[r];
        for c in 0..cols {
            out[c] += row[c] * yr;
        }
    }
}

/// g += dy x^T.
fn add_outer(g: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        let row = &mut g[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += d * x[c];
        }
    }
}

fn add_scaled(out: &mut [f64], v: &[f64], s: f64) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += s * x;
    }
}

struct FrameCache {
    u: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    p_norm: f64,
}

fn project_frame(p: &ProjectorParams, x: &[f64]) -> Result<FrameCache> {
    let d = p.proj_dim;
    let hd = p.hidden_dim;
    let mut u = vec![0.0; d];
    affine(&p.w_in, &p.b_in, d, p.input_dim, x, &mut u);
    let mut h = vec![0.0; hd];
    affine(&p.w_h, &p.b_h, hd, d, &u, &mut h);
    for v in &mut h {
        *v = v.tanh();
    }
    let mut pvec = vec![0.0; d];
    affine(&p.w_out, &p.b_out, d, hd, &h, &mut pvec);
    for i in 0..d {
        pvec[i] += u[i];
    }
    let norm = pvec.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-150 {
        return Err(Error::DegenerateFeature(
            "projected vector has zero norm before normalization".into(),
        ));
    }
    let z = pvec.iter().map(|v| v / norm).collect();
    Ok(FrameCache { u, h, z, p_norm: norm })
}

/// Backpropagates `dz` (gradient at the normalized output) through one
/// frame, accumulating parameter gradients into `g`.
fn backprop_frame(
    p: &ProjectorParams,
    x: &[f64],
    cache: &FrameCache,
    dz: &[f64],
    g: &mut ProjectorParams,
) {
    let d = p.proj_dim;
    let hd = p.hidden_dim;
    // Through z = p / |p|: dp = (dz - z (z . dz)) / |p|.
    let zdot: f64 = cache.z.iter().zip(dz).map(|(a, b)| a * b).sum();
    let dp: Vec<f64> = (0..d)
        .map(|i| (dz[i] - cache.z[i] * zdot) / cache.p_norm)
        .collect();
    // p = u + v; dv = dp and du starts at dp.
    add_outer(&mut g.w_out, &dp, &cache.h);
    add_scaled(&mut g.b_out, &dp, 1.0);
    let mut dh = vec![0.0; hd];
    add_matvec_t(&p.w_out, d, hd, &dp, &mut dh);
    // Through tanh.
    let mut da = dh;
    for (v, h) in da.iter_mut().zip(&cache.h) {
        *v *= 1.0 - h * h;
    }
    add_outer(&mut g.w_h, &da, &cache.u);
    add_scaled(&mut g.b_h, &da, 1.0);
    let mut du = dp;
    add_matvec_t(&p.w_h, hd, d, &da, &mut du);
    add_outer(&mut g.w_in, &du, x);
    add_scaled(&mut g.b_in, &du, 1.0);
}

struct FilterCache {
    q: Vec<f64>,
    r: f64,
}

fn sigmoid(o: f64) -> f64 {
    if o >= 0.0 {
        1.0 / (1.0 + (-o).exp())
    } else {
        let e = o.exp();
        e / (1.0 + e)
    }
}

fn filter_frame(f: &FilterParams, z: &[f64]) -> FilterCache {
    let hd = f.hidden_dim;
    let mut q = vec![0.0; hd];
    affine(&f.w1, &f.b1, hd, f.proj_dim, z, &mut q);
    for v in &mut q {
        *v = v.tanh();
    }
    let mut o = f.b2[0];
    for i in 0..hd {
        o += f.w2[i] * q[i];
    }
    FilterCache { r: sigmoid(o), q }
}

/// Accumulates filter parameter gradients for one frame given
/// `do_` = dL/d(pre-sigmoid output).
fn backprop_filter_frame(
    f: &FilterParams,
    z: &[f64],
    cache: &FilterCache,
    do_: f64,
    g: &mut FilterParams,
) {
    add_scaled(&mut g.w2, &cache.q, do_);
    g.b2[0] += do_;
    let mut da: Vec<f64> = f.w2.iter().map(|w| w * do_).collect();
    for (v, q) in da.iter_mut().zip(&cache.q) {
        *v *= 1.0 - q * q;
    }
    add_outer(&mut g.w1, &da, z);
    add_scaled(&mut g.b1, &da, 1.0);
}

/// Projects every frame of `m` and returns the unit-norm result.
pub fn project(p: &ProjectorParams, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.dim() != p.input_dim {
        return Err(Error::Shape(format!(
            "projector expects input dim {}, features have {}",
            p.input_dim,
            m.dim()
        )));
    }
    let mut data = Vec::with_capacity(m.frames() * p.proj_dim);
    for t in 0..m.frames() {
        let cache = project_frame(p, m.row(t))?;
        data.extend_from_slice(&cache.z);
    }
    FeatureMatrix::new(m.frames(), p.proj_dim, data, true)
}

/// Alignment and uniformity series of a projected video, in that order.
/// Neighbor sets must come from the frozen pretrained features.
pub fn refined_losses(
    z: &FeatureMatrix,
    neighbors: &NeighborSets,
) -> Result<(ScoreSeries, ScoreSeries)> {
    let align = local_dissimilarity(z, neighbors)?;
    let uniform = global_consistency(z)?;
    Ok((align, uniform))
}

/// Consecutive `segment_len`-frame windows average-pooled and renormalized.
/// Trailing frames that do not fill a window are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    vectors: Vec<Vec<f64>>,
    dim: usize,
    segment_len: usize,
}

impl SegmentFeatures {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }
}

pub fn segment_features(m: &FeatureMatrix, segment_len: usize) -> Result<SegmentFeatures> {
    if segment_len == 0 {
        return Err(Error::Domain("segment length must be at least 1".into()));
    }
    let count = m.frames() / segment_len;
    if count == 0 {
        return Err(Error::TooShort(format!(
            "{} frames cannot fill a segment of {segment_len}",
            m.frames()
        )));
    }
    let d = m.dim();
    let mut vectors = Vec::with_capacity(count);
    for k in 0..count {
        let mut mu = vec![0.0; d];
        for t in k * segment_len..(k + 1) * segment_len {
            for (a, b) in mu.iter_mut().zip(m.row(t)) {
                *a += b;
            }
        }
        for v in &mut mu {
            *v /= segment_len as f64;
        }
        let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-150 {
            return Err(Error::DegenerateFeature(format!(
                "segment {k} pools to a zero vector"
            )));
        }
        for v in &mut mu {
            *v /= norm;
        }
        vectors.push(mu);
    }
    Ok(SegmentFeatures { vectors, dim: d, segment_len })
}

/// Log-mean-exp of `-2 d^2` from each frame of `z` to every segment of
/// *other* videos. Low values mean the frame resembles nothing else in
/// the batch, i.e. it is unique.
pub fn uniqueness_loss(z: &FeatureMatrix, foreign: &[&SegmentFeatures]) -> Result<ScoreSeries> {
    let total: usize = foreign.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(Error::EmptyBatch("uniqueness needs at least one foreign segment".into()));
    }
    for s in foreign {
        if s.dim() != z.dim() {
            return Err(Error::Shape(format!(
                "segment dim {} does not match projection dim {}",
                s.dim(),
                z.dim()
            )));
        }
    }
    let mut exponents = vec![0.0f64; total];
    let values = (0..z.frames())
        .map(|t| {
            let row = z.row(t);
            let mut n = 0;
            for s in foreign {
                for i in 0..s.len() {
                    exponents[n] = -2.0 * metrics::squared_distance(row, s.vector(i));
                    n += 1;
                }
            }
            log_mean_exp(&exponents)
        })
        .collect();
    ScoreSeries::new(values, ScoreKind::RawLoss)
}

fn log_mean_exp(exponents: &[f64]) -> f64 {
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exponents.iter().map(|&e| (e - max).exp()).sum();
    max + (sum / exponents.len() as f64).ln()
}

/// Filter targets: one minus the min-max scaled uniqueness loss, so the
/// most unique frame gets target 1. Constant input maps to all 0.5.
pub fn filter_targets(uniqueness: &ScoreSeries) -> ScoreSeries {
    let scaled = minmax_scale(uniqueness);
    let values = scaled.values().iter().map(|v| 1.0 - v).collect();
    ScoreSeries::new(values, ScoreKind::Scaled).expect("targets are finite")
}

/// Mean binary cross-entropy of predictions `probs` against `targets`.
pub fn filter_loss(targets: &ScoreSeries, probs: &ScoreSeries) -> Result<f64> {
    if targets.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} targets but {} predictions",
            targets.len(),
            probs.len()
        )));
    }
    for (i, &y) in targets.values().iter().enumerate() {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("target {i} is {y}, must be in [0, 1]")));
        }
    }
    for (i, &r) in probs.values().iter().enumerate() {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Domain(format!(
                "prediction {i} is {r}, must be strictly inside (0, 1)"
            )));
        }
    }
    let n = targets.len() as f64;
    let sum: f64 = targets
        .values()
        .iter()
        .zip(probs.values())
        .map(|(&y, &r)| -(y * r.ln() + (1.0 - y) * (1.0 - r).ln()))
        .sum();
    Ok(sum / n)
}

/// Filter head probabilities for every frame of a projected video.
pub fn filter_scores(f: &FilterParams, z: &FeatureMatrix) -> Result<ScoreSeries> {
    if z.dim() != f.proj_dim {
        return Err(Error::Shape(format!(
            "filter expects dim {}, projection has {}",
            f.proj_dim,
            z.dim()
        )));
    }
    let values = (0..z.frames()).map(|t| filter_frame(f, z.row(t)).r).collect();
    ScoreSeries::new(values, ScoreKind::Scaled)
}

/// One video inside a training batch: projector input plus its frozen
/// neighbor sets.
pub struct BatchVideo<'a> {
    pub features: &'a FeatureMatrix,
    pub neighbors: &'a NeighborSets,
}

/// Per-term means over all frames of the batch. `total` applies the
/// configured term weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub align: f64,
    pub uniform: f64,
    pub uniqueness: f64,
    pub filter: f64,
}

pub struct Gradients {
    pub projector: ProjectorParams,
    pub filter: FilterParams,
}

/// Evaluates the combined refinement loss and its analytic gradients on a
/// batch of at least two videos.
pub fn full_loss(
    batch: &[BatchVideo],
    proj: &ProjectorParams,
    filt: &FilterParams,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    cfg.validate()?;
    if batch.len() < 2 {
        return Err(Error::EmptyBatch(format!(
            "uniqueness training needs at least 2 videos per batch, got {}",
            batch.len()
        )));
    }
    for (i, v) in batch.iter().enumerate() {
        if v.features.dim() != proj.input_dim {
            return Err(Error::Shape(format!(
                "video {i} has dim {}, projector expects {}",
                v.features.dim(),
                proj.input_dim
            )));
        }
        if v.neighbors.len() != v.features.frames() {
            return Err(Error::Shape(format!(
                "video {i} has {} neighbor sets for {} frames",
                v.neighbors.len(),
                v.features.frames()
            )));
        }
        if v.features.frames() / cfg.segment_len == 0 {
            return Err(Error::TooShort(format!(
                "video {i} is too short for segment length {}",
                cfg.segment_len
            )));
        }
        if v.features.frames() < 2 {
            return Err(Error::TooShort(format!("video {i} has fewer than 2 frames")));
        }
    }
    let d = proj.proj_dim;
    let n_total: usize = batch.iter().map(|v| v.features.frames()).sum();
    let scale = 1.0 / n_total as f64;

    // Forward: projections and pooled segments for every video.
    let mut caches: Vec<Vec<FrameCache>> = Vec::with_capacity(batch.len());
    let mut seg_vectors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch.len());
    let mut seg_norms: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
    for v in batch {
        let t = v.features.frames();
        let mut frames = Vec::with_capacity(t);
        for i in 0..t {
            frames.push(project_frame(proj, v.features.row(i))?);
        }
        let count = t / cfg.segment_len;
        let mut vectors = Vec::with_capacity(count);
        let mut norms = Vec::with_capacity(count);
        for k in 0..count {
            let mut mu = vec![0.0; d];
            for f in &frames[k * cfg.segment_len..(k + 1) * cfg.segment_len] {
                for (a, b) in mu.iter_mut().zip(&f.z) {
                    *a += b;
                }
            }
            for x in &mut mu {
                *x /= cfg.segment_len as f64;
            }
            let norm = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-150 {
                return Err(Error::DegenerateFeature("segment pools to a zero vector".into()));
            }
            for x in &mut mu {
                *x /= norm;
            }
            vectors.push(mu);
            norms.push(norm);
        }
        caches.push(frames);
        seg_vectors.push(vectors);
        seg_norms.push(norms);
    }

    let mut dz: Vec<Vec<f64>> = batch
        .iter()
        .map(|v| vec![0.0; v.features.frames() * d])
        .collect();
    let mut dseg: Vec<Vec<f64>> = seg_vectors.iter().map(|s| vec![0.0; s.len() * d]).collect();
    let mut grad_proj = ProjectorParams::zeros(proj.input_dim, d, proj.hidden_dim);
    let mut grad_filt = FilterParams::zeros(filt.proj_dim, filt.hidden_dim);

    let mut sum_align = 0.0;
    let mut sum_uniform = 0.0;
    let mut sum_unique = 0.0;
    let mut sum_filter = 0.0;

    // Alignment and uniformity are intra-video.
    for (vi, v) in batch.iter().enumerate() {
        let t = v.features.frames();
        let frames = &caches[vi];
        let dzv = &mut dz[vi];
        let k = v.neighbors.k() as f64;
        for a in 0..t {
            let za = &frames[a].z;
            let mut acc = 0.0;
            for &j in v.neighbors.set(a) {
                let zj = &frames[j].z;
                let mut d2 = 0.0;
                for i in 0..d {
                    let diff = za[i] - zj[i];
                    d2 += diff * diff;
                    let g = scale * (2.0 / k) * diff;
                    dzv[a * d + i] += g;
                    dzv[j * d + i] -= g;
                }
                acc += d2;
            }
            sum_align += acc / k;
        }
        // Uniformity needs the full pairwise weights; one pass for the
        // losses, one to spread gradients.
        let mut exps = vec![0.0f64; t];
        for a in 0..t {
            let za = &frames[a].z;
            let mut denom = 0.0;
            for j in 0..t {
                if j == a {
                    exps[j] = 0.0;
                    continue;
                }
                let mut d2 = 0.0;
                let zj = &frames[j].z;
                for i in 0..d {
                    let diff = za[i] - zj[i];
                    d2 += diff * diff;
                }
                let e = (-2.0 * d2).exp();
                exps[j] = e;
                denom += e;
            }
            sum_uniform += (denom / (t - 1) as f64).ln();
            let coeff = scale * cfg.lambda1 * -4.0 / denom;
            for j in 0..t {
                if j == a {
                    continue;
                }
                let w = coeff * exps[j];
                let zj = &frames[j].z;
                for i in 0..d {
                    let diff = za[i] - zj[i];
                    dzv[a * d + i] += w * diff;
                    dzv[j * d + i] -= w * diff;
                }
            }
        }
    }

    // Uniqueness couples each frame to the segments of the other videos;
    // its series also yields the filter targets.
    let foreign_count: Vec<usize> = (0..batch.len())
        .map(|vi| {
            (0..batch.len())
                .filter(|&vj| vj != vi)
                .map(|vj| seg_vectors[vj].len())
                .sum()
        })
        .collect();
    for vi in 0..batch.len() {
        if foreign_count[vi] == 0 {
            return Err(Error::EmptyBatch(format!(
                "video {vi} sees no foreign segments in this batch"
            )));
        }
    }
    let mut unique_series: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
    for (vi, v) in batch.iter().enumerate() {
        let t = v.features.frames();
        let a_count = foreign_count[vi] as f64;
        let mut series = Vec::with_capacity(t);
        let mut exps: Vec<(usize, usize, f64)> = Vec::with_capacity(foreign_count[vi]);
        for a in 0..t {
            let za = &caches[vi][a].z;
            exps.clear();
            let mut denom = 0.0;
            for vj in 0..batch.len() {
                if vj == vi {
                    continue;
                }
                for (si, s) in seg_vectors[vj].iter().enumerate() {
                    let mut d2 = 0.0;
                    for i in 0..d {
                        let diff = za[i] - s[i];
                        d2 += diff * diff;
                    }
                    let e = (-2.0 * d2).exp();
                    denom += e;
                    exps.push((vj, si, e));
                }
            }
            series.push((denom / a_count).ln());
            sum_unique += (denom / a_count).ln();
            let coeff = scale * cfg.lambda2 * -4.0 / denom;
            for &(vj, si, e) in &exps {
                let w = coeff * e;
                let s = &seg_vectors[vj][si];
                for i in 0..d {
                    let diff = za[i] - s[i];
                    dz[vi][a * d + i] += w * diff;
                    dseg[vj][si * d + i] -= w * diff;
                }
            }
        }
        unique_series.push(series);
    }

    // Filter head: BCE on detached projections, so only filter parameters
    // receive gradient from this term.
    for (vi, v) in batch.iter().enumerate() {
        let t = v.features.frames();
        let u = ScoreSeries::new(unique_series[vi].clone(), ScoreKind::RawLoss)
            .map_err(|_| Error::TrainingDiverged("uniqueness loss became non-finite".into()))?;
        let targets = filter_targets(&u);
        for a in 0..t {
            let z = &caches[vi][a].z;
            let cache = filter_frame(filt, z);
            let y = targets.values()[a];
            let r = cache.r;
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::TrainingDiverged(format!(
                    "filter output saturated to {r}"
                )));
            }
            sum_filter += -(y * r.ln() + (1.0 - y) * (1.0 - r).ln());
            let do_ = scale * cfg.lambda3 * (r - y);
            backprop_filter_frame(filt, z, &cache, do_, &mut grad_filt);
        }
    }

    // Segment gradients flow back to their member frames through the
    // mean-pool and renormalization.
    for (vi, v) in batch.iter().enumerate() {
        let m = cfg.segment_len as f64;
        for si in 0..seg_vectors[vi].len() {
            let s = &seg_vectors[vi][si];
            let ds = &dseg[vi][si * d..(si + 1) * d];
            let sdot: f64 = s.iter().zip(ds).map(|(a, b)| a * b).sum();
            for i in 0..d {
                let dmu = (ds[i] - s[i] * sdot) / seg_norms[vi][si];
                let per_frame = dmu / m;
                for a in si * cfg.segment_len..(si + 1) * cfg.segment_len {
                    dz[vi][a * d + i] += per_frame;
                }
            }
        }
        let _ = v;
    }

    // Finally push per-frame gradients through the projector.
    for (vi, v) in batch.iter().enumerate() {
        for a in 0..v.features.frames() {
            backprop_frame(
                proj,
                v.features.row(a),
                &caches[vi][a],
                &dz[vi][a * d..(a + 1) * d],
                &mut grad_proj,
            );
        }
    }

    let n = n_total as f64;
    let breakdown = LossBreakdown {
        align: sum_align / n,
        uniform: sum_uniform / n,
        uniqueness: sum_unique / n,
        filter: sum_filter / n,
        total: (sum_align
            + cfg.lambda1 * sum_uniform
            + cfg.lambda2 * sum_unique
            + cfg.lambda3 * sum_filter)
            / n,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::TrainingDiverged(format!(
            "loss became non-finite: {breakdown:?}"
        )));
    }
    for t in grad_proj.tensors().into_iter().chain(grad_filt.tensors()) {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged("gradients became non-finite".into()));
        }
    }
    Ok((breakdown, Gradients { projector: grad_proj, filter: grad_filt }))
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, weight_decay: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over matched parameter/gradient tensor lists. The L2
    /// penalty is added to the raw gradient before the moment updates.
    fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (ti, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..p.len() {
                let grad = g[i] + self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

pub struct TrainOutcome {
    pub projector: ProjectorParams,
    pub filter: FilterParams,
    /// Combined loss after each optimizer step.
    pub history: Vec<f64>,
}

/// Trains projector and filter on normalized feature matrices.
///
/// Neighbor sets are computed once from the input features and stay
/// frozen. Videos are shuffled every epoch; a trailing batch with fewer
/// than two videos is skipped.
pub fn train(features: &[FeatureMatrix], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if features.len() < 2 {
        return Err(Error::EmptyBatch(format!(
            "training needs at least 2 videos, got {}",
            features.len()
        )));
    }
    let input_dim = features[0].dim();
    for (i, f) in features.iter().enumerate() {
        if f.dim() != input_dim {
            return Err(Error::Shape(format!(
                "video {i} has dim {}, expected {input_dim}",
                f.dim()
            )));
        }
    }
    let neighbor_sets: Vec<NeighborSets> = features
        .iter()
        .map(|f| cosine_neighbors(f, cfg.neighbor_ratio))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut proj = ProjectorParams::init(input_dim, cfg.proj_dim, cfg.hidden_dim, &mut rng);
    let mut filt = FilterParams::init(cfg.proj_dim, cfg.filter_hidden, &mut rng);
    let sizes: Vec<usize> = proj
        .tensors()
        .into_iter()
        .chain(filt.tensors())
        .map(|t| t.len())
        .collect();
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay, &sizes);

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::new();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<BatchVideo> = chunk
                .iter()
                .map(|&i| BatchVideo { features: &features[i], neighbors: &neighbor_sets[i] })
                .collect();
            let (loss, grads) = full_loss(&batch, &proj, &filt, cfg)?;
            let mut params: Vec<&mut Vec<f64>> = proj
                .tensors_mut()
                .into_iter()
                .chain(filt.tensors_mut())
                .collect();
            let gs: Vec<&Vec<f64>> = grads
                .projector
                .tensors()
                .into_iter()
                .chain(grads.filter.tensors())
                .collect();
            adam.step(&mut params, &gs);
            history.push(loss.total);
        }
    }
    Ok(TrainOutcome { projector: proj, filter: filt, history })
}

/// Trained parameters plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub projector: ProjectorParams,
    pub filter: FilterParams,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    input_dim: usize,
    proj_dim: usize,
    hidden_dim: usize,
    filter_hidden: usize,
    param_count: usize,
    config: TrainConfig,
}

/// Writes a checkpoint: a `u32` little-endian header length, a JSON
/// header with dimensions and config, then all parameters as
/// little-endian `f32`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let flat: Vec<f64> = ckpt
        .projector
        .to_flat()
        .into_iter()
        .chain(ckpt.filter.to_flat())
        .collect();
    let header = CheckpointHeader {
        input_dim: ckpt.projector.input_dim,
        proj_dim: ckpt.projector.proj_dim,
        hidden_dim: ckpt.projector.hidden_dim,
        filter_hidden: ckpt.filter.hidden_dim,
        param_count: flat.len(),
        config: ckpt.config.clone(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = Vec::with_capacity(4 + header_bytes.len() + flat.len() * 4);
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for v in flat {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::Format(format!("{}: checkpoint too small", path.display())));
    }
    let header_len = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    if bytes.len() < 4 + header_len {
        return Err(Error::Format(format!("{}: truncated header", path.display())));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[4..4 + header_len])
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let blob = &bytes[4 + header_len..];
    if blob.len() != header.param_count * 4 {
        return Err(Error::Format(format!(
            "{}: parameter blob holds {} bytes, header implies {}",
            path.display(),
            blob.len(),
            header.param_count * 4
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "{}: checkpoint holds non-finite parameters",
            path.display()
        )));
    }
    let proj =
        ProjectorParams::zeros(header.input_dim, header.proj_dim, header.hidden_dim);
    let filt = FilterParams::zeros(header.proj_dim, header.filter_hidden);
    let split = proj.num_params();
    if flat.len() != split + filt.num_params() {
        return Err(Error::Format(format!(
            "{}: param count {} does not match dimensions",
            path.display(),
            flat.len()
        )));
    }
    let projector = ProjectorParams::from_flat(
        header.input_dim,
        header.proj_dim,
        header.hidden_dim,
        &flat[..split],
    )?;
    let filter = FilterParams::from_flat(header.proj_dim, header.filter_hidden, &flat[split..])?;
    Ok(Checkpoint { projector, filter, config: header.config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureio::l2_normalize_rows;
    use rand::Rng;

    fn random_video(t: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        l2_normalize_rows(&FeatureMatrix::from_rows(rows).unwrap()).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            proj_dim: 4,
            hidden_dim: 6,
            filter_hidden: 5,
            segment_len: 5,
            neighbor_ratio: 0.2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn projection_outputs_unit_rows_of_the_right_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ProjectorParams::init(8, 4, 6, &mut rng);
        let m = random_video(10, 8, 1);
        let z = project(&p, &m).unwrap();
        assert_eq!(z.frames(), 10);
        assert_eq!(z.dim(), 4);
        assert!(z.is_normalized());
        for t in 0..z.frames() {
            let n: f64 = z.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let wrong = random_video(4, 5, 2);
        assert!(matches!(project(&p, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn all_zero_projector_is_degenerate() {
        let p = ProjectorParams::zeros(3, 4, 5);
        let m = random_video(2, 3, 4);
        assert!(matches!(project(&p, &m), Err(Error::DegenerateFeature(_))));
    }

    #[test]
    fn segments_pool_and_renormalize() {
        let m = random_video(11, 6, 5);
        let s = segment_features(&m, 5).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.segment_len(), 5);
        for i in 0..s.len() {
            let n: f64 = s.vector(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        // Hand-check the first pooled vector.
        let mut mu = vec![0.0; 6];
        for t in 0..5 {
            for (a, b) in mu.iter_mut().zip(m.row(t)) {
                *a += b / 5.0;
            }
        }
        let norm: f64 = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in s.vector(0).iter().zip(&mu) {
            assert!((a - b / norm).abs() < 1e-12);
        }
        assert!(matches!(segment_features(&m, 12), Err(Error::TooShort(_))));
        assert!(matches!(segment_features(&m, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn uniqueness_is_low_for_frames_far_from_other_videos() {
        // Video frames near e0; foreign segments exactly e0 vs e1.
        let z = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], true).unwrap();
        let near = SegmentFeatures {
            vectors: vec![vec![1.0, 0.0]],
            dim: 2,
            segment_len: 1,
        };
        let s = uniqueness_loss(&z, &[&near]).unwrap();
        assert!(s.values()[0] > s.values()[1], "matching frame must score higher");
        assert!((s.values()[0] - 0.0).abs() < 1e-12);
        assert!((s.values()[1] - (-4.0)).abs() < 1e-12);
        assert!(matches!(uniqueness_loss(&z, &[]), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn filter_targets_invert_uniqueness() {
        let u = ScoreSeries::new(vec![-3.0, -1.0, -2.0], ScoreKind::RawLoss).unwrap();
        let y = filter_targets(&u);
        assert_eq!(y.values(), &[1.0, 0.0, 0.5]);
        let flat = ScoreSeries::new(vec![2.0, 2.0], ScoreKind::RawLoss).unwrap();
        assert_eq!(filter_targets(&flat).values(), &[0.5, 0.5]);
    }

    #[test]
    fn filter_loss_is_mean_bce() {
        let y = ScoreSeries::new(vec![1.0, 0.0], ScoreKind::Scaled).unwrap();
        let r = ScoreSeries::new(vec![0.5, 0.5], ScoreKind::Scaled).unwrap();
        let l = filter_loss(&y, &r).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let bad = ScoreSeries::new(vec![1.0, 0.0], ScoreKind::Scaled).unwrap();
        assert!(matches!(filter_loss(&y, &bad), Err(Error::Domain(_))));
        let short = ScoreSeries::new(vec![0.5], ScoreKind::Scaled).unwrap();
        assert!(matches!(filter_loss(&y, &short), Err(Error::Shape(_))));
    }

    #[test]
    fn zeroed_filter_head_outputs_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = FilterParams::init(4, 5, &mut rng);
        f.w2 = vec![0.0; 5];
        f.b2 = vec![0.0];
        let z = random_video(6, 4, 11);
        let z = {
            let mut rng2 = ChaCha8Rng::seed_from_u64(12);
            let p = ProjectorParams::init(4, 4, 5, &mut rng2);
            project(&p, &z).unwrap()
        };
        let r = filter_scores(&f, &z).unwrap();
        for v in r.values() {
            assert_eq!(*v, 0.5);
        }
    }

    fn make_batch(seeds: &[u64], t: usize, d: usize) -> (Vec<FeatureMatrix>, Vec<NeighborSets>) {
        let feats: Vec<FeatureMatrix> =
            seeds.iter().map(|&s| random_video(t, d, s)).collect();
        let sets = feats.iter().map(|f| cosine_neighbors(f, 0.2).unwrap()).collect();
        (feats, sets)
    }

    #[test]
    fn filter_weight_never_reaches_the_projector() {
        let (feats, sets) = make_batch(&[1, 2], 12, 6);
        let batch: Vec<BatchVideo> = feats
            .iter()
            .zip(&sets)
            .map(|(f, n)| BatchVideo { features: f, neighbors: n })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_cfg();
        let p = ProjectorParams::init(6, cfg.proj_dim, cfg.hidden_dim, &mut rng);
        let f = FilterParams::init(cfg.proj_dim, cfg.filter_hidden, &mut rng);
        let mut on = cfg.clone();
        on.lambda3 = 1.0;
        let mut off = cfg;
        off.lambda3 = 0.0;
        let (_, g_on) = full_loss(&batch, &p, &f, &on).unwrap();
        let (_, g_off) = full_loss(&batch, &p, &f, &off).unwrap();
        assert_eq!(g_on.projector.to_flat(), g_off.projector.to_flat());
        assert_ne!(g_on.filter.to_flat(), g_off.filter.to_flat());
    }

    #[test]
    fn full_loss_requires_two_videos() {
        let (feats, sets) = make_batch(&[1], 12, 6);
        let batch = vec![BatchVideo { features: &feats[0], neighbors: &sets[0] }];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_cfg();
        let p = ProjectorParams::init(6, cfg.proj_dim, cfg.hidden_dim, &mut rng);
        let f = FilterParams::init(cfg.proj_dim, cfg.filter_hidden, &mut rng);
        assert!(matches!(full_loss(&batch, &p, &f, &cfg), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let (feats, _) = make_batch(&[10, 11, 12], 15, 6);
        let cfg = TrainConfig { epochs: 2, lr: 1e-3, ..small_cfg() };
        let a = train(&feats, &cfg).unwrap();
        let b = train(&feats, &cfg).unwrap();
        assert_eq!(a.projector.to_flat(), b.projector.to_flat());
        assert_eq!(a.filter.to_flat(), b.filter.to_flat());
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 2, "3 videos, batch 8: one step per epoch");
    }

    #[test]
    fn training_rejects_a_single_video() {
        let (feats, _) = make_batch(&[10], 15, 6);
        let cfg = small_cfg();
        assert!(matches!(train(&feats, &cfg), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_preserves_narrowed_params() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ckpt = Checkpoint {
            projector: ProjectorParams::init(6, 4, 5, &mut rng),
            filter: FilterParams::init(4, 3, &mut rng),
            config: small_cfg(),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, ckpt.config);
        for (a, b) in loaded
            .projector
            .to_flat()
            .iter()
            .zip(ckpt.projector.to_flat())
        {
            assert_eq!(*a, b as f32 as f64);
        }
        // A second save of the loaded checkpoint is byte-identical.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());

        let mut truncated = fs::read(&path).unwrap();
        truncated.truncate(truncated.len() - 3);
        let bad = dir.path().join("bad.ckpt");
        fs::write(&bad, truncated).unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
    }
}
