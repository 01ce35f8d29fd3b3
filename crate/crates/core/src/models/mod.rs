//! Base classifiers, plain and differentially private.
//!
//! Every learner consumes an [`EncodedMatrix`] plus an explicit label vector
//! and optional per-row weights in `[0, 1]` (the fairness reduction trains on
//! reweighted, label-flipped copies of the data). Private learners return
//! the privacy account they spent alongside the model.

mod forest;
mod gnb;
mod knn;
mod logreg;
mod stump;

pub use forest::{choose_split_private, train_forest, ForestModel, Node, Tree};
pub use gnb::{train_gnb, train_gnb_dp, GaussianNBModel, VARIANCE_FLOOR};
pub use knn::{train_knn, KnnModel};
pub use logreg::{
    clipped_example_gradients, logistic_loss, logistic_loss_gradient, sigmoid, train_logreg, train_logreg_dp,
    LinearModel,
};
pub use stump::{train_stump, StumpModel};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainingConfig;
use crate::dataset::EncodedMatrix;
use crate::dp::{DpError, PrivacyAccount, PrivacyBudget};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("private training needs bounds for every feature")]
    MissingBounds,
    #[error("depth {depth} leaves {per_level} epsilon per level (minimum depth 1, minimum 1e-3 per level)")]
    DepthTooLarge { depth: usize, per_level: f64 },
    #[error("budget exceeded: plan needs epsilon {needed}, budget is {available}")]
    BudgetExceeded { needed: f64, available: f64 },
    #[error("parameter `{0}` must be positive")]
    NonPositiveParameter(&'static str),
    #[error("{0} has no private variant")]
    NoPrivateVariant(ModelKind),
    #[error("weights must be finite and in [0, 1]")]
    InvalidWeights,
    #[error(transparent)]
    Dp(#[from] DpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Gnb,
    Forest,
    Knn,
    Stump,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Gnb => "gnb",
            ModelKind::Forest => "forest",
            ModelKind::Knn => "knn",
            ModelKind::Stump => "stump",
        }
    }

    pub fn supports_privacy(&self) -> bool {
        matches!(self, ModelKind::Logreg | ModelKind::Gnb | ModelKind::Forest)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Any trained base model behind one interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorHandle {
    Linear(LinearModel),
    GaussianNb(GaussianNBModel),
    Forest(ForestModel),
    Knn(KnnModel),
    Stump(StumpModel),
    /// Predicts one label everywhere (oracle output on one-sided weights).
    Constant { label: u8, width: usize },
}

impl PredictorHandle {
    pub fn width(&self) -> usize {
        match self {
            PredictorHandle::Linear(m) => m.weights.len(),
            PredictorHandle::GaussianNb(m) => m.means[0].len(),
            PredictorHandle::Forest(m) => m.width,
            PredictorHandle::Knn(m) => m.width(),
            PredictorHandle::Stump(m) => m.width,
            PredictorHandle::Constant { width, .. } => *width,
        }
    }

    /// Score in [0, 1] for one feature row.
    pub fn predict_score(&self, x: &[f64]) -> Result<f64, ModelError> {
        let w = self.width();
        if x.len() != w {
            return Err(ModelError::DimensionMismatch { expected: w, got: x.len() });
        }
        Ok(self.score_unchecked(x))
    }

    pub(crate) fn score_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            PredictorHandle::Linear(m) => m.score(x),
            PredictorHandle::GaussianNb(m) => m.score(x),
            PredictorHandle::Forest(m) => m.score(x),
            PredictorHandle::Knn(m) => m.score(x),
            PredictorHandle::Stump(m) => m.score(x),
            PredictorHandle::Constant { label, .. } => f64::from(*label),
        }
    }

    /// Hard label. KNN predicts 1 only on a strict positive majority, every
    /// other model at score >= 0.5.
    pub fn predict(&self, x: &[f64]) -> Result<u8, ModelError> {
        let s = self.predict_score(x)?;
        Ok(self.label_for(s))
    }

    pub(crate) fn label_for(&self, score: f64) -> u8 {
        match self {
            PredictorHandle::Knn(_) => u8::from(score > 0.5),
            _ => u8::from(score >= 0.5),
        }
    }

    /// Scores for every row of `m`.
    pub fn scores(&self, m: &EncodedMatrix) -> Result<Vec<f64>, ModelError> {
        if m.n_features() != self.width() {
            return Err(ModelError::DimensionMismatch { expected: self.width(), got: m.n_features() });
        }
        Ok((0..m.n_rows()).into_par_iter().map(|i| self.score_unchecked(m.row(i))).collect())
    }

    pub fn predictions(&self, m: &EncodedMatrix) -> Result<Vec<u8>, ModelError> {
        Ok(self.scores(m)?.into_iter().map(|s| self.label_for(s)).collect())
    }

    pub fn trained_budget(&self) -> PrivacyBudget {
        match self {
            PredictorHandle::Linear(m) => m.trained_budget,
            PredictorHandle::GaussianNb(m) => m.trained_budget,
            PredictorHandle::Forest(m) => m.trained_budget,
            _ => PrivacyBudget::NonPrivate,
        }
    }
}

/// A model and, for private training, the account it spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub model: PredictorHandle,
    pub account: Option<PrivacyAccount>,
}

/// A model kind bound to a budget and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub kind: ModelKind,
    pub budget: PrivacyBudget,
    pub config: TrainingConfig,
}

impl Learner {
    pub fn new(kind: ModelKind, budget: PrivacyBudget, config: TrainingConfig) -> Result<Self, ModelError> {
        if budget.is_private() && !kind.supports_privacy() {
            return Err(ModelError::NoPrivateVariant(kind));
        }
        Ok(Self { kind, budget, config })
    }

    pub fn is_private(&self) -> bool {
        self.budget.is_private()
    }

    /// Same learner with a different budget.
    pub fn with_budget(&self, budget: PrivacyBudget) -> Self {
        Self { budget, ..self.clone() }
    }

    pub fn fit(&self, x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>, seed: u64) -> Result<Fitted, ModelError> {
        let private = self.budget.is_private();
        match (self.kind, private) {
            (ModelKind::Logreg, false) => {
                let c = &self.config.logreg;
                let m = train_logreg(x, y, weights, c.learning_rate, c.epochs, c.l2)?;
                Ok(Fitted { model: PredictorHandle::Linear(m), account: None })
            }
            (ModelKind::Logreg, true) => {
                let (m, acct) = train_logreg_dp(x, y, weights, &self.budget, &self.config.dp_sgd, seed)?;
                Ok(Fitted { model: PredictorHandle::Linear(m), account: Some(acct) })
            }
            (ModelKind::Gnb, false) => Ok(Fitted { model: PredictorHandle::GaussianNb(train_gnb(x, y, weights)?), account: None }),
            (ModelKind::Gnb, true) => {
                let (m, acct) = train_gnb_dp(x, y, weights, &self.budget, seed)?;
                Ok(Fitted { model: PredictorHandle::GaussianNb(m), account: Some(acct) })
            }
            (ModelKind::Forest, _) => {
                let (m, acct) = train_forest(x, y, weights, &self.budget, &self.config.forest, seed)?;
                Ok(Fitted { model: PredictorHandle::Forest(m), account: acct })
            }
            (ModelKind::Knn, false) => Ok(Fitted { model: PredictorHandle::Knn(train_knn(x, y, weights, self.config.knn.k)?), account: None }),
            (ModelKind::Stump, false) => Ok(Fitted { model: train_stump(x, y, weights)?, account: None }),
            (kind, true) => Err(ModelError::NoPrivateVariant(kind)),
        }
    }
}

/// Shared argument checks: lengths, weight range, both classes present
/// with positive weight.
pub(crate) fn check_training_data(x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>) -> Result<(), ModelError> {
    if y.len() != x.n_rows() {
        return Err(ModelError::LengthMismatch(format!("{} rows, {} labels", x.n_rows(), y.len())));
    }
    if let Some(w) = weights {
        if w.len() != x.n_rows() {
            return Err(ModelError::LengthMismatch(format!("{} rows, {} weights", x.n_rows(), w.len())));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(ModelError::InvalidWeights);
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let pos = (0..y.len()).any(|i| y[i] == 1 && weight(i) > 0.0);
    let neg = (0..y.len()).any(|i| y[i] == 0 && weight(i) > 0.0);
    if !(pos && neg) {
        return Err(ModelError::SingleClassData);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_linear_model_scores_half() {
        let m = PredictorHandle::Linear(LinearModel::zeros(3));
        assert_eq!(m.predict_score(&[1.0, -2.0, 5.0]).unwrap(), 0.5);
        assert_eq!(m.predict(&[0.0, 0.0, 0.0]).unwrap(), 1);
        assert_eq!(
            m.predict_score(&[1.0]),
            Err(ModelError::DimensionMismatch { expected: 3, got: 1 })
        );
    }

    #[test]
    fn private_knn_rejected() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        assert_eq!(
            Learner::new(ModelKind::Knn, b, TrainingConfig::default()),
            Err(ModelError::NoPrivateVariant(ModelKind::Knn))
        );
    }
}
