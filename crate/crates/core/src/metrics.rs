//! Training-free per-frame importance signals.
//!
//! Both signals are computed on L2-normalized features. Local dissimilarity
//! measures how far a frame sits from its nearest neighbors; frames that
//! near-duplicate their neighborhood score low. Global consistency is a
//! log-mean-exp of negative squared distances to every other frame; frames
//! in dense regions score high (close to 0), outliers score low (toward
//! -8). Scaled variants of the signals multiply into a single importance
//! score with an additive floor, which can then be smoothed over time.

use crate::error::{Error, Result};
use crate::featureio::FeatureMatrix;

pub const DEFAULT_NEIGHBOR_RATIO: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_SMOOTH_SIGMA: f64 = 2.0;

/// What a score series holds; combining and exporting care about the
/// difference between raw losses and scaled values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    RawLoss,
    Scaled,
    Importance,
}

/// A per-frame series of finite scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    values: Vec<f64>,
    kind: ScoreKind,
}

impl ScoreSeries {
    pub fn new(values: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("score series must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite score at index {i}")));
        }
        Ok(ScoreSeries { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fixed-size nearest-neighbor sets, one per frame.
#[derive(Debug, Clone)]
pub struct NeighborSets {
    sets: Vec<Vec<usize>>,
    k: usize,
    ratio: f64,
}

impl NeighborSets {
    /// Validates externally supplied sets: uniform size, no self-loops,
    /// indices in range, no duplicates.
    pub fn from_sets(sets: Vec<Vec<usize>>, ratio: f64) -> Result<Self> {
        let t = sets.len();
        if t == 0 {
            return Err(Error::Shape("neighbor sets must be non-empty".into()));
        }
        let k = sets[0].len();
        if k == 0 {
            return Err(Error::Shape("neighbor sets must hold at least one index".into()));
        }
        for (anchor, set) in sets.iter().enumerate() {
            if set.len() != k {
                return Err(Error::Shape(format!(
                    "set {anchor} has {} neighbors, expected {k}",
                    set.len()
                )));
            }
            let mut seen = vec![false; t];
            for &j in set {
                if j >= t {
                    return Err(Error::Shape(format!(
                        "set {anchor} references frame {j}, video has {t}"
                    )));
                }
                if j == anchor {
                    return Err(Error::Shape(format!("set {anchor} contains its anchor")));
                }
                if seen[j] {
                    return Err(Error::Shape(format!("set {anchor} lists frame {j} twice")));
                }
                seen[j] = true;
            }
        }
        Ok(NeighborSets { sets, k, ratio })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn set(&self, t: usize) -> &[usize] {
        &self.sets[t]
    }
}

fn require_normalized(m: &FeatureMatrix) -> Result<()> {
    if !m.is_normalized() {
        return Err(Error::Domain(
            "features must be L2-normalized (call l2_normalize_rows first)".into(),
        ));
    }
    Ok(())
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-frame cosine nearest neighbors.
///
/// The set size is `K = min(max(1, round(ratio * T)), T - 1)`, rounding
/// half away from zero. The anchor frame is never its own neighbor; ties
/// in similarity break toward the lower frame index. Sets are returned in
/// ascending index order.
pub fn cosine_neighbors(m: &FeatureMatrix, ratio: f64) -> Result<NeighborSets> {
    require_normalized(m)?;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("neighbor ratio must be in (0, 1], got {ratio}")));
    }
    let t = m.frames();
    if t < 2 {
        return Err(Error::TooShort("neighbor retrieval needs at least 2 frames".into()));
    }
    let k = ((ratio * t as f64).round() as usize).clamp(1, t - 1);
    let mut sets = Vec::with_capacity(t);
    let mut order: Vec<usize> = Vec::with_capacity(t - 1);
    for anchor in 0..t {
        let a = m.row(anchor);
        let sims: Vec<f64> = (0..t).map(|j| dot(a, m.row(j))).collect();
        order.clear();
        order.extend((0..t).filter(|&j| j != anchor));
        order.sort_by(|&i, &j| sims[j].partial_cmp(&sims[i]).unwrap().then(i.cmp(&j)));
        let mut set: Vec<usize> = order[..k].to_vec();
        set.sort_unstable();
        sets.push(set);
    }
    Ok(NeighborSets { sets, k, ratio })
}

/// Mean squared distance from each frame to its neighbor set.
pub fn local_dissimilarity(m: &FeatureMatrix, neighbors: &NeighborSets) -> Result<ScoreSeries> {
    require_normalized(m)?;
    if neighbors.len() != m.frames() {
        return Err(Error::Shape(format!(
            "{} neighbor sets for {} frames",
            neighbors.len(),
            m.frames()
        )));
    }
    let values = (0..m.frames())
        .map(|t| {
            let row = m.row(t);
            let sum: f64 = neighbors.set(t).iter().map(|&j| squared_distance(row, m.row(j))).sum();
            sum / neighbors.k() as f64
        })
        .collect();
    ScoreSeries::new(values, ScoreKind::RawLoss)
}

/// Log-mean-exp of `-2 * squared distance` from each frame to all others.
///
/// Values lie in `[-8, 0]` for unit-norm rows: 0 when every other frame is
/// identical, approaching -8 when every other frame is antipodal.
pub fn global_consistency(m: &FeatureMatrix) -> Result<ScoreSeries> {
    require_normalized(m)?;
    let t = m.frames();
    if t < 2 {
        return Err(Error::TooShort("global consistency needs at least 2 frames".into()));
    }
    let mut exponents = vec![0.0f64; t - 1];
    let values = (0..t)
        .map(|anchor| {
            let row = m.row(anchor);
            let mut n = 0;
            for j in 0..t {
                if j != anchor {
                    exponents[n] = -2.0 * squared_distance(row, m.row(j));
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

/// Affine rescaling to `[0, 1]`. A constant series maps to all 0.5.
pub fn minmax_scale(s: &ScoreSeries) -> ScoreSeries {
    let min = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = if max > min {
        let span = max - min;
        s.values.iter().map(|v| (v - min) / span).collect()
    } else {
        vec![0.5; s.values.len()]
    };
    ScoreSeries { values, kind: ScoreKind::Scaled }
}

/// Elementwise product of score series plus a floor `epsilon`.
///
/// The floor keeps frames with a zero factor selectable by the summary
/// stage instead of tying them all at exactly zero.
pub fn combine_scores(parts: &[ScoreSeries], epsilon: f64) -> Result<ScoreSeries> {
    if parts.is_empty() {
        return Err(Error::Domain("combining needs at least one score series".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let n = parts[0].len();
    for (i, p) in parts.iter().enumerate() {
        if p.len() != n {
            return Err(Error::Shape(format!(
                "series {i} has length {}, expected {n}",
                p.len()
            )));
        }
    }
    let values = (0..n)
        .map(|t| parts.iter().map(|p| p.values[t]).product::<f64>() + epsilon)
        .collect();
    ScoreSeries::new(values, ScoreKind::Importance)
}

/// Gaussian smoothing over time with symmetric-reflect boundary handling.
///
/// The kernel has radius `ceil(3 * sigma)` and is renormalized to sum to
/// one, so total mass is preserved. `sigma = 0` returns the input as is.
pub fn gaussian_smooth(s: &ScoreSeries, sigma: f64) -> Result<ScoreSeries> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(s.clone());
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= total;
    }
    let t = s.values.len() as i64;
    let values = (0..t)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(ki, w)| w * s.values[reflect(i + ki as i64 - radius, t)])
                .sum()
        })
        .collect();
    Ok(ScoreSeries { values, kind: s.kind })
}

/// Folds an index into `[0, len)` by symmetric reflection: -1 maps to 0,
/// `len` maps to `len - 1`, repeating as needed for long kernels.
fn reflect(mut i: i64, len: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= len {
            i = 2 * len - 1 - i;
        } else {
            return i as usize;
        }
    }
}
