//! Classifiers, evaluation metrics and cross-validation.

mod cv;
mod gbt;
mod logreg;
mod metrics;
mod scorer;

pub use cv::{kfold_cv, stratified_folds, FoldResult};
pub use gbt::{train_gbt, GbtModel, GbtParams, Node, Tree};
pub use logreg::{
    logistic_loss, logistic_loss_grad, proximal_gradient, sigmoid, soft_threshold, train_l1_logreg,
    train_l1_logreg_traced, LogRegModel, LogRegOptions, TrainTrace,
};
pub use metrics::{cohens_kappa, evaluate, f1_score, Confusion, Metrics};
pub use scorer::{
    ExternalScorer, ExternalScorerConfig, ModelParams, ScoreCheckpoint, Scorer, ScorerHandle, ScorerKind, TextModel,
    TextScorer,
};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// A trained binary classifier returning P(hyperpartisan).
pub trait Classifier: Send + Sync {
    fn predict_proba_one(&self, x: &FeatureVector) -> f64;

    fn predict_proba(&self, x: &[FeatureVector]) -> Vec<f64> {
        x.iter().map(|xi| self.predict_proba_one(xi)).collect()
    }

    fn predict(&self, x: &[FeatureVector]) -> Vec<bool> {
        x.iter().map(|xi| self.predict_proba_one(xi) >= 0.5).collect()
    }
}

/// Validate a training set: matching lengths, at least two samples, both
/// classes present, finite values and in-range feature indices.
pub fn check_training_set(x: &[FeatureVector], n_features: usize, y: &[bool]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", x.len())));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass);
    }
    for (row, xi) in x.iter().enumerate() {
        for (j, v) in xi.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row });
            }
            if j >= n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    got: j + 1,
                });
            }
        }
    }
    Ok(())
}
