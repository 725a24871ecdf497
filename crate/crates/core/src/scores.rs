//! Nonconformity scores and cross-validation scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldAssignment};
use crate::error::{invalid_config, Result};
use crate::regression::{FittedModel, RegressorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `|y - μ̂(x)|`
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreFunctionSpec {
    pub kind: ScoreKind,
    pub regressor: RegressorSpec,
}

impl ScoreFunctionSpec {
    pub fn residual(regressor: RegressorSpec) -> Self {
        Self {
            kind: ScoreKind::Residual,
            regressor,
        }
    }

    /// Score of `(x, y)` against an already fitted model.
    pub fn score(&self, model: &FittedModel, x: &[f64], y: f64) -> f64 {
        match self.kind {
            ScoreKind::Residual => (y - model.predict(x)).abs(),
        }
    }
}

/// Cross-validation scores together with the K complement models that
/// produced them.
#[derive(Debug, Clone)]
pub struct CvScores {
    models: Vec<FittedModel>,
    /// Scores of each fold's members, in the fold's member order.
    fold_scores: Vec<Vec<f64>>,
    /// Score per original index; `None` for discarded points.
    by_point: Vec<Option<f64>>,
}

impl CvScores {
    /// Assembles scores from externally fitted models. `fold_scores[k]` must
    /// follow the member order of `folds.members(k)`.
    pub fn from_parts(folds: &FoldAssignment, models: Vec<FittedModel>, fold_scores: Vec<Vec<f64>>) -> Result<Self> {
        if models.len() != folds.k() || fold_scores.len() != folds.k() {
            return Err(invalid_config("one model and one score list per fold required"));
        }
        let mut by_point = vec![None; folds.n_total()];
        for (k, scores) in fold_scores.iter().enumerate() {
            if scores.len() != folds.members(k).len() {
                return Err(invalid_config(format!("fold {k}: score count does not match fold size")));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(invalid_config(format!("fold {k}: non-finite score")));
            }
            for (&i, &s) in folds.members(k).iter().zip(scores) {
                by_point[i] = Some(s);
            }
        }
        Ok(Self {
            models,
            fold_scores,
            by_point,
        })
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, fold: usize) -> &FittedModel {
        &self.models[fold]
    }

    pub fn models(&self) -> &[FittedModel] {
        &self.models
    }

    pub fn fold_scores(&self, fold: usize) -> &[f64] {
        &self.fold_scores[fold]
    }

    pub fn score_of(&self, i: usize) -> Option<f64> {
        self.by_point[i]
    }

    /// Scores of all used points in original index order.
    pub fn used_scores(&self) -> Vec<f64> {
        self.by_point.iter().flatten().copied().collect()
    }
}

/// Fits one model per fold on the fold's complement and scores the fold's
/// members with it.
pub fn compute_cv_scores(data: &Dataset, folds: &FoldAssignment, spec: &ScoreFunctionSpec) -> Result<CvScores> {
    if folds.n_total() != data.n() {
        return Err(invalid_config(format!(
            "fold assignment covers {} points, dataset has {}",
            folds.n_total(),
            data.n()
        )));
    }
    let fitted: Vec<(FittedModel, Vec<f64>)> = (0..folds.k())
        .into_par_iter()
        .map(|k| {
            let complement = folds.complement(k);
            if complement.is_empty() {
                return Err(invalid_config(format!("fold {k} has an empty complement")));
            }
            let model = spec.regressor.fit(&data.subset(&complement))?;
            let scores = folds
                .members(k)
                .iter()
                .map(|&i| spec.score(&model, &data.row(i), data.response(i)))
                .collect();
            Ok((model, scores))
        })
        .collect::<Result<_>>()?;
    let (models, fold_scores) = fitted.into_iter().unzip();
    CvScores::from_parts(folds, models, fold_scores)
}

/// Score of a candidate test pair under fold `fold`'s cached model.
pub fn test_score(x: &[f64], y: f64, fold: usize, cv: &CvScores, spec: &ScoreFunctionSpec) -> f64 {
    spec.score(cv.model(fold), x, y)
}
