//! Fold-wise conformal p-values.
//!
//! For fold `k` with calibration scores `S_i` (i in the fold) and a test
//! score `s`:
//!
//! * deterministic: `(1 + #{S_i >= s}) / (m_k + 1)`
//! * randomized:    `(τ + τ·#{S_i == s} + #{S_i > s}) / (m_k + 1)`
//!
//! Equal-size folds give values on the grid `{j/(m+1)}`. Ties in the
//! randomized form are detected with exact float equality.

use serde::{Deserialize, Serialize};

use crate::data::{FoldAssignment, RandomDraws};
use crate::error::{invalid_config, Result};
use crate::scores::{test_score, CvScores, ScoreFunctionSpec};

pub fn fold_pvalue(test_s: f64, fold_scores: &[f64]) -> f64 {
    let count = fold_scores.iter().filter(|&&s| test_s <= s).count();
    (1 + count) as f64 / (fold_scores.len() + 1) as f64
}

pub fn fold_pvalue_randomized(test_s: f64, fold_scores: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid_config(format!("tau must lie in (0,1), got {tau}")));
    }
    Ok(randomized_unchecked(test_s, fold_scores, tau))
}

pub(crate) fn randomized_unchecked(test_s: f64, fold_scores: &[f64], tau: f64) -> f64 {
    let (mut ties, mut above) = (0usize, 0usize);
    for &s in fold_scores {
        if test_s == s {
            ties += 1;
        } else if test_s < s {
            above += 1;
        }
    }
    (tau + tau * ties as f64 + above as f64) / (fold_scores.len() + 1) as f64
}

/// The K fold p-values at one candidate response, in fold-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueVector {
    pub values: Vec<f64>,
    pub fold_sizes: Vec<usize>,
    pub randomized: bool,
    pub tau: Option<f64>,
}

impl PValueVector {
    /// Deterministic p-values with the given fold sizes.
    pub fn new(values: Vec<f64>, fold_sizes: Vec<usize>) -> Self {
        Self {
            values,
            fold_sizes,
            randomized: false,
            tau: None,
        }
    }

    /// Convenience for combiner tests: unit fold sizes.
    pub fn from_values(values: Vec<f64>) -> Self {
        let k = values.len();
        Self::new(values, vec![1; k])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weights(&self) -> FoldWeights {
        fold_weights(&self.fold_sizes).expect("fold sizes are positive")
    }

    /// `Σ w_k P_k` with `w_k = (m_k + 1)/(n + K)`.
    pub fn weighted_mean(&self) -> f64 {
        self.weights().weights.iter().zip(&self.values).map(|(w, p)| w * p).sum()
    }
}

/// Evaluates every fold's p-value for candidate `y` at `x`. Passing `draws`
/// switches to the randomized form with one τ shared by all folds.
pub fn all_fold_pvalues(
    x: &[f64],
    y: f64,
    cv: &CvScores,
    folds: &FoldAssignment,
    spec: &ScoreFunctionSpec,
    draws: Option<&RandomDraws>,
) -> PValueVector {
    let values = (0..folds.k())
        .map(|k| {
            let s = test_score(x, y, k, cv, spec);
            match draws {
                Some(d) => randomized_unchecked(s, cv.fold_scores(k), d.tau),
                None => fold_pvalue(s, cv.fold_scores(k)),
            }
        })
        .collect();
    PValueVector {
        values,
        fold_sizes: folds.fold_sizes(),
        randomized: draws.is_some(),
        tau: draws.map(|d| d.tau),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldWeights {
    pub weights: Vec<f64>,
}

/// `w_k = (m_k + 1) / (n + K)`; exactly `1/K` for equal sizes.
pub fn fold_weights(fold_sizes: &[usize]) -> Result<FoldWeights> {
    if fold_sizes.is_empty() || fold_sizes.contains(&0) {
        return Err(invalid_config("fold sizes must all be >= 1"));
    }
    let k = fold_sizes.len();
    if fold_sizes.windows(2).all(|w| w[0] == w[1]) {
        return Ok(FoldWeights {
            weights: vec![1.0 / k as f64; k],
        });
    }
    let denom = (fold_sizes.iter().sum::<usize>() + k) as f64;
    Ok(FoldWeights {
        weights: fold_sizes.iter().map(|&m| (m + 1) as f64 / denom).collect(),
    })
}

/// Whether a level-α set can exclude anything with folds of size `m`
/// (needs `1 < α(m+1)`).
pub fn is_informative(alpha: f64, m: usize) -> bool {
    1.0 < alpha * (m + 1) as f64
}
