//! Fairness interventions: the exponentiated-gradient reduction
//! (in-processing) and group-specific thresholds (post-processing).

mod reduction;
mod threshold;

pub use reduction::{cost_sensitive_oracle, exponentiated_gradient, ReductionDiagnostics, ReductionOutcome, ReductionParams};
pub use threshold::{threshold_optimize, GroupRule, GroupThresholds, Objective, ThresholdRule};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EncodedMatrix;
use crate::metrics::{majority_group, GroupId};
use crate::models::{ModelError, PredictorHandle};

#[derive(Debug, Error, PartialEq)]
pub enum FairError {
    #[error("constraint delta {0} outside [0, 1]")]
    InvalidDelta(f64),
    #[error("invalid reduction parameter: {0}")]
    InvalidParameter(String),
    #[error("data needs at least two groups and both labels")]
    DegenerateData,
    #[error("oracle failed: {0}")]
    OracleFailure(ModelError),
    #[error("all oracle weights are zero")]
    AllZeroWeights,
    #[error("group {0} has no calibration scores")]
    GroupMissingScores(GroupId),
    #[error("unknown objective `{0}`")]
    UnknownObjective(String),
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    DemographicParity,
    EqualizedOdds,
    EqualOpportunity,
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::DemographicParity => "demographic_parity",
            ConstraintKind::EqualizedOdds => "equalized_odds",
            ConstraintKind::EqualOpportunity => "equal_opportunity",
        }
    }
}

/// Fairness criterion plus allowed disparity Δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessConstraint {
    pub kind: ConstraintKind,
    pub delta: f64,
}

impl FairnessConstraint {
    pub fn new(kind: ConstraintKind, delta: f64) -> Result<Self, FairError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(FairError::InvalidDelta(delta));
        }
        Ok(Self { kind, delta })
    }
}

/// Signed linear moments `gap_j(h) = sum_i a_ji h(x_i)` comparing each
/// non-reference group against the reference group. Demographic parity
/// yields `±(SR_g - SR_ref)` per group, equal opportunity `±(TPR_g -
/// TPR_ref)`, equalized odds both TPR and FPR pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub names: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
    pub reference: GroupId,
}

impl Moments {
    pub fn build(kind: ConstraintKind, y: &[u8], groups: &[GroupId]) -> Result<Self, FairError> {
        let mut sizes: BTreeMap<GroupId, u64> = BTreeMap::new();
        for &g in groups {
            *sizes.entry(g).or_default() += 1;
        }
        if sizes.len() < 2 {
            return Err(FairError::DegenerateData);
        }
        let reference = majority_group(&sizes).expect("non-empty");
        let n = y.len();
        // (name, selector on label) pairs making up the moment family
        let parts: Vec<(&str, Option<u8>)> = match kind {
            ConstraintKind::DemographicParity => vec![("sr", None)],
            ConstraintKind::EqualOpportunity => vec![("tpr", Some(1))],
            ConstraintKind::EqualizedOdds => vec![("tpr", Some(1)), ("fpr", Some(0))],
        };
        let mut names = Vec::new();
        let mut coefficients = Vec::new();
        for (part, label) in parts {
            let in_cell = |i: usize| label.is_none_or(|l| y[i] == l);
            let mut cell_sizes: BTreeMap<GroupId, f64> = BTreeMap::new();
            for i in 0..n {
                if in_cell(i) {
                    *cell_sizes.entry(groups[i]).or_default() += 1.0;
                }
            }
            let Some(&ref_size) = cell_sizes.get(&reference) else { continue };
            for &g in sizes.keys().filter(|&&g| g != reference) {
                let Some(&g_size) = cell_sizes.get(&g) else { continue };
                let mut a = vec![0.0; n];
                for i in 0..n {
                    if in_cell(i) {
                        if groups[i] == g {
                            a[i] = 1.0 / g_size;
                        } else if groups[i] == reference {
                            a[i] = -1.0 / ref_size;
                        }
                    }
                }
                let neg: Vec<f64> = a.iter().map(|v| -v).collect();
                names.push(format!("{part}[{g}]+"));
                coefficients.push(a);
                names.push(format!("{part}[{g}]-"));
                coefficients.push(neg);
            }
        }
        if coefficients.is_empty() {
            return Err(FairError::DegenerateData);
        }
        Ok(Self { names, coefficients, reference })
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Moment values for (expected) predictions `h` in [0, 1].
    pub fn gaps(&self, h: &[f64]) -> Vec<f64> {
        self.coefficients.iter().map(|a| a.iter().zip(h).map(|(x, y)| x * y).sum()).collect()
    }
}

/// Weighted mixture of base classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedClassifier {
    pub components: Vec<(f64, PredictorHandle)>,
}

impl RandomizedClassifier {
    pub fn new(components: Vec<(f64, PredictorHandle)>) -> Self {
        assert!(!components.is_empty(), "empty mixture");
        let total: f64 = components.iter().map(|c| c.0).sum();
        Self { components: components.into_iter().map(|(w, h)| (w / total, h)).collect() }
    }

    /// Drop components lighter than `min_weight` (keeping the heaviest one)
    /// and renormalise.
    pub fn trimmed(mut self, min_weight: f64) -> Self {
        let heaviest = self
            .components
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let kept: Vec<(f64, PredictorHandle)> = self
            .components
            .drain(..)
            .enumerate()
            .filter(|(i, c)| c.0 >= min_weight || *i == heaviest)
            .map(|(_, c)| c)
            .collect();
        Self::new(kept)
    }

    /// `sum_i w_i * score_i(x)`.
    pub fn expected_score(&self, x: &[f64]) -> Result<f64, ModelError> {
        let mut s = 0.0;
        for (w, h) in &self.components {
            s += w * h.predict_score(x)?;
        }
        Ok(s)
    }

    /// Probability of a positive prediction.
    pub fn positive_probability(&self, x: &[f64]) -> Result<f64, ModelError> {
        let mut s = 0.0;
        for (w, h) in &self.components {
            s += w * f64::from(h.predict(x)?);
        }
        Ok(s)
    }
}

/// Sample a component by weight and return its prediction.
pub fn predict_randomized<R: Rng + ?Sized>(rc: &RandomizedClassifier, x: &[f64], rng: &mut R) -> Result<u8, ModelError> {
    if rc.components.len() == 1 {
        return rc.components[0].1.predict(x);
    }
    let mut u: f64 = rng.random();
    for (w, h) in &rc.components {
        if u < *w {
            return h.predict(x);
        }
        u -= w;
    }
    rc.components.last().expect("non-empty").1.predict(x)
}

/// What a frontier point deploys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeployedModel {
    Base { model: PredictorHandle },
    Randomized { mixture: RandomizedClassifier },
    PostProcessed { model: PredictorHandle, thresholds: GroupThresholds },
}

impl DeployedModel {
    /// Per-row scores: base score, mixture expected score, or the
    /// post-processed positive probability.
    pub fn scores(&self, m: &EncodedMatrix) -> Result<Vec<f64>, ModelError> {
        match self {
            DeployedModel::Base { model } => model.scores(m),
            DeployedModel::Randomized { mixture } => {
                let mut out = vec![0.0; m.n_rows()];
                for (w, h) in &mixture.components {
                    for (o, s) in out.iter_mut().zip(h.scores(m)?) {
                        *o += w * s;
                    }
                }
                Ok(out)
            }
            DeployedModel::PostProcessed { model, thresholds } => {
                let base = model.scores(m)?;
                let groups = m.joint_groups();
                Ok(base.iter().zip(&groups).map(|(s, g)| thresholds.positive_probability(*g, *s)).collect())
            }
        }
    }

    /// Hard predictions; randomised models draw from `rng`.
    pub fn predict<R: Rng + ?Sized>(&self, m: &EncodedMatrix, rng: &mut R) -> Result<Vec<u8>, ModelError> {
        match self {
            DeployedModel::Base { model } => model.predictions(m),
            DeployedModel::Randomized { mixture } => {
                let per: Vec<Vec<u8>> = mixture.components.iter().map(|(_, h)| h.predictions(m)).collect::<Result<_, _>>()?;
                Ok((0..m.n_rows())
                    .map(|i| {
                        let mut u: f64 = rng.random();
                        for (k, (w, _)) in mixture.components.iter().enumerate() {
                            if u < *w {
                                return per[k][i];
                            }
                            u -= w;
                        }
                        per[per.len() - 1][i]
                    })
                    .collect())
            }
            DeployedModel::PostProcessed { model, thresholds } => {
                let base = model.scores(m)?;
                let groups = m.joint_groups();
                Ok(base.iter().zip(&groups).map(|(s, g)| thresholds.predict(*g, *s, rng)).collect())
            }
        }
    }
}

/// Minimal LP front end: minimise `c·x` subject to `bounds` and rows
/// `(coefficients, op, rhs)`.
pub(crate) fn solve_lp(
    c: &[f64],
    bounds: &[(f64, f64)],
    rows: &[(Vec<(usize, f64)>, microlp::ComparisonOp, f64)],
) -> Result<Vec<f64>, FairError> {
    let mut p = microlp::Problem::new(microlp::OptimizationDirection::Minimize);
    let vars: Vec<microlp::Variable> = c.iter().zip(bounds).map(|(ci, b)| p.add_var(*ci, *b)).collect();
    for (coefs, op, rhs) in rows {
        let expr: Vec<(microlp::Variable, f64)> = coefs.iter().map(|(j, a)| (vars[*j], *a)).collect();
        p.add_constraint(expr.as_slice(), *op, *rhs);
    }
    let sol = p
        .solve()
        .map_err(|e| FairError::Lp(e.to_string()))?
        .into_solution()
        .map_err(|_| FairError::Lp("interrupted".into()))?;
    Ok(vars.iter().map(|v| sol.var_value(*v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp;
    use crate::models::StumpModel;

    #[test]
    fn demographic_parity_moments() {
        let y = [0, 1, 0, 1, 0];
        let g = [0, 0, 0, 1, 1];
        let m = Moments::build(ConstraintKind::DemographicParity, &y, &g).unwrap();
        assert_eq!(m.reference, 0);
        assert_eq!(m.len(), 2);
        // group 1 selects 1/2, group 0 selects 1/3
        let gaps = m.gaps(&[1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!((gaps[0] - (0.5 - 1.0 / 3.0)).abs() < 1e-12);
        assert!((gaps[1] + gaps[0]).abs() < 1e-12);
        assert_eq!(Moments::build(ConstraintKind::EqualizedOdds, &y, &g).unwrap().len(), 4);
        assert_eq!(Moments::build(ConstraintKind::DemographicParity, &y, &[0; 5]), Err(FairError::DegenerateData));
    }

    fn constant(label: u8) -> PredictorHandle {
        PredictorHandle::Constant { label, width: 1 }
    }

    #[test]
    fn randomized_prediction_rates() {
        let single = RandomizedClassifier::new(vec![(1.0, constant(1))]);
        let mut rng = dp::stream(1, "rc");
        assert_eq!(predict_randomized(&single, &[0.0], &mut rng).unwrap(), 1);
        let rc = RandomizedClassifier::new(vec![(0.5, constant(0)), (0.5, constant(1))]);
        let pos = (0..10_000).filter(|_| predict_randomized(&rc, &[0.0], &mut rng).unwrap() == 1).count();
        assert!((pos as f64 / 1e4 - 0.5).abs() <= 0.02);
        let draw = |seed| {
            let mut r = dp::stream(seed, "rc");
            (0..50).map(|_| predict_randomized(&rc, &[0.0], &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!((rc.expected_score(&[0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trimming_renormalises() {
        let s = PredictorHandle::Stump(StumpModel { feature: 0, threshold: 0.0, positive_above: true, width: 1 });
        let rc = RandomizedClassifier::new(vec![(0.9995, s), (0.0005, constant(1))]).trimmed(1e-3);
        assert_eq!(rc.components.len(), 1);
        assert_eq!(rc.components[0].0, 1.0);
    }
}
