//! Cross-conformal prediction and its exchangeable-combination variants.
//!
//! A fitted [`sets::CrossConformal`] holds the K fold models and their
//! cross-validation scores; [`sets::CrossConformal::at`] evaluates fold
//! p-values, combiner statistics and prediction sets at one test input.
//! Split conformal and CV+ baselines live alongside, and [`experiments`]
//! runs the Monte-Carlo and real-data protocols.

pub mod combiners;
pub mod data;
pub mod error;
pub mod experiments;
pub mod pvalues;
pub mod regression;
pub mod scores;
pub mod sets;
pub mod stats;

pub use combiners::{alpha_prime, coverage_bounds, CombinerKind, CombinerSpec, CoverageBounds, PValueKind};
pub use data::{assign_folds, Dataset, FoldAssignment, FoldMode, RandomDraws, RandomSource};
pub use error::{Error, Result};
pub use regression::{FittedModel, RegressorSpec};
pub use scores::{compute_cv_scores, CvScores, ScoreFunctionSpec};
pub use sets::{CrossConformal, Interval, Method, PredictionSet, SplitConformal};
