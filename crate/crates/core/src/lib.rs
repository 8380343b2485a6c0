//! Frame importance for unsupervised video summarization, computed from
//! pre-extracted per-frame features.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`featureio`]: binary feature files, dataset manifests, reference
//!    annotations, L2 and length normalization.
//! 2. [`metrics`]: training-free importance from local dissimilarity and
//!    global consistency, plus scaling, combination and smoothing.
//! 3. [`refine`]: optional contrastive refinement of the features with a
//!    uniqueness-supervised filter head, trained with analytic gradients.
//! 4. [`summarize`] and [`evaluate`]: knapsack summaries under a length
//!    budget, F1 / rank-correlation metrics and cross-validated runs.
//!
//! [`synth`] generates seeded datasets with planted structure so the
//! whole pipeline can be exercised without real features.

pub mod error;
pub mod evaluate;
pub mod featureio;
pub mod metrics;
pub mod refine;
pub mod summarize;
pub mod synth;

pub use error::{Error, Result};
