//! Turning per-frame importance into a binary summary under a length
//! budget.
//!
//! Frames are grouped into shots, each shot gets the mean score of its
//! frames, and shots are selected by an exact 0/1 knapsack over the frame
//! budget so that total selected score is maximal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ScoreSeries;

pub const DEFAULT_SUMMARY_RATIO: f64 = 0.15;
pub const DEFAULT_SHOT_LEN: usize = 30;

/// A partition of `[0, T)` into consecutive non-empty `[start, end)`
/// intervals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSegmentation {
    intervals: Vec<(usize, usize)>,
}

impl ShotSegmentation {
    /// Validates that the intervals are non-empty, sorted and cover a
    /// prefix range `[0, T)` without gaps or overlaps.
    pub fn from_intervals(intervals: Vec<(usize, usize)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Shape("segmentation must contain at least one shot".into()));
        }
        let mut cursor = 0;
        for (i, &(start, end)) in intervals.iter().enumerate() {
            if start != cursor {
                return Err(Error::Shape(format!(
                    "shot {i} starts at {start}, expected {cursor} (gap or overlap)"
                )));
            }
            if end <= start {
                return Err(Error::Shape(format!("shot {i} is empty: [{start}, {end})")));
            }
            cursor = end;
        }
        Ok(ShotSegmentation { intervals })
    }

    pub fn intervals(&self) -> &[(usize, usize)] {
        &self.intervals
    }

    pub fn num_shots(&self) -> usize {
        self.intervals.len()
    }

    pub fn total_frames(&self) -> usize {
        self.intervals.last().map(|&(_, end)| end).unwrap_or(0)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.intervals.iter().map(|&(s, e)| e - s).collect()
    }
}

/// Fixed-length segmentation used when no shot boundaries are known; the
/// last shot absorbs the remainder and may be shorter.
pub fn default_shots(frames: usize, shot_len: usize) -> Result<ShotSegmentation> {
    if frames == 0 {
        return Err(Error::TooShort("cannot segment a zero-frame video".into()));
    }
    if shot_len == 0 {
        return Err(Error::Domain("shot length must be at least 1".into()));
    }
    let mut intervals = Vec::new();
    let mut start = 0;
    while start < frames {
        let end = (start + shot_len).min(frames);
        intervals.push((start, end));
        start = end;
    }
    Ok(ShotSegmentation { intervals })
}

/// Mean frame score per shot.
pub fn shot_scores(scores: &ScoreSeries, shots: &ShotSegmentation) -> Result<Vec<f64>> {
    if scores.len() != shots.total_frames() {
        return Err(Error::Shape(format!(
            "{} scores for a segmentation covering {} frames",
            scores.len(),
            shots.total_frames()
        )));
    }
    Ok(shots
        .intervals
        .iter()
        .map(|&(s, e)| scores.values()[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect())
}

/// Result of shot selection: which shots were taken, the frame-level
/// mask they induce, and the frame budget that was enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct SummarySelection {
    pub selected: Vec<bool>,
    pub frame_mask: Vec<u8>,
    pub budget: usize,
}

impl SummarySelection {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    pub fn total_selected_frames(&self) -> usize {
        self.frame_mask.iter().map(|&b| b as usize).sum()
    }
}

/// Exact 0/1 knapsack: maximize total value subject to total length
/// `<= budget`.
///
/// Among selections of equal value the backtrace prefers leaving an item
/// out, so the result is reproducible: it is the optimal subset whose
/// indicator bitmask, read as an integer with item 0 as bit 0, is
/// smallest.
pub fn knapsack_select(values: &[f64], lengths: &[usize], budget: usize) -> Result<SummarySelection> {
    if values.len() != lengths.len() {
        return Err(Error::Shape(format!(
            "{} values but {} lengths",
            values.len(),
            lengths.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::Shape("knapsack needs at least one item".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at index {i}")));
    }
    if let Some(i) = lengths.iter().position(|&l| l == 0) {
        return Err(Error::Domain(format!("item {i} has zero length")));
    }
    let n = values.len();
    let w = budget;
    // dp[i][c]: best value using items < i with capacity c, flattened.
    let mut dp = vec![0.0f64; (n + 1) * (w + 1)];
    for i in 1..=n {
        let len = lengths[i - 1];
        let val = values[i - 1];
        for c in 0..=w {
            let skip = dp[(i - 1) * (w + 1) + c];
            let mut best = skip;
            if len <= c {
                let take = dp[(i - 1) * (w + 1) + (c - len)] + val;
                if take > best {
                    best = take;
                }
            }
            dp[i * (w + 1) + c] = best;
        }
    }
    let mut selected = vec![false; n];
    let mut c = w;
    for i in (1..=n).rev() {
        if dp[i * (w + 1) + c] != dp[(i - 1) * (w + 1) + c] {
            selected[i - 1] = true;
            c -= lengths[i - 1];
        }
    }
    let mut frame_mask = Vec::with_capacity(lengths.iter().sum());
    for (i, &len) in lengths.iter().enumerate() {
        frame_mask.extend(std::iter::repeat_n(u8::from(selected[i]), len));
    }
    Ok(SummarySelection { selected, frame_mask, budget })
}

/// Scores a segmentation and selects shots under a `ratio` frame budget.
///
/// The budget is `floor(ratio * T)` frames; a tiny slack absorbs binary
/// rounding so that e.g. `0.15 * T` lands on the mathematical value.
pub fn make_summary(
    scores: &ScoreSeries,
    shots: &ShotSegmentation,
    ratio: f64,
) -> Result<SummarySelection> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("summary ratio must be in (0, 1], got {ratio}")));
    }
    let t = shots.total_frames();
    if scores.len() != t {
        return Err(Error::Shape(format!(
            "{} scores for a segmentation covering {t} frames",
            scores.len()
        )));
    }
    let budget = ((ratio * t as f64) + 1e-9).floor() as usize;
    let budget = budget.min(t);
    let per_shot = shot_scores(scores, shots)?;
    knapsack_select(&per_shot, &shots.lengths(), budget)
}
