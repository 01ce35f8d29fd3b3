//! Stakeholder policy: the tuple (F, Δ, ε band, A, M, π), translation
//! between controlled-vocabulary text and tuples, feasibility filtering,
//! selection and selection contracts.

mod contract;
mod lexicon;
mod parse;
mod render;
mod select;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use contract::{audit_contract, build_contract, issue_contract, AuditCheck, AuditReport, SelectionContract, CONTRACT_VERSION};
pub use lexicon::{FairnessDescriptor, IntentEntry, IntentLexicon, PrivacyDescriptor, DEFAULT_LEXICON};
pub use parse::{parse_policy_prompt, MatchCategory, ParsedPolicy, PhraseMatch, PromptParser};
pub use render::{percentage_points, render_explanation, render_point, render_tuple, Explainable};
pub use select::{
    check_point, filter_feasible, select_model, Candidate, CandidateSet, Condition, ConditionCheck, NearestMiss,
    PointCheck, Selection, TIE_TOLERANCE,
};

use crate::fair::ConstraintKind;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("unrecognized fairness intent in `{span}`")]
    UnrecognizedIntent { span: String, start: usize, end: usize },
    #[error("conflicting {category} descriptors: `{first}` and `{second}`")]
    ConflictingDescriptors { category: String, first: String, second: String },
    #[error("no fairness criterion given; it has no default")]
    MissingCriterion,
    #[error("disparity threshold {0} outside (0, 1]")]
    DeltaOutOfRange(f64),
    #[error("invalid privacy band: {0}")]
    InvalidBand(String),
    #[error("performance threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("attribute list is empty")]
    EmptyAttributeList,
    #[error("invalid priority policy: {0}")]
    InvalidPriority(String),
    #[error("tuple audits {tuple:?} but the frontier was built for {frontier:?}")]
    AttributeMismatch { tuple: Vec<String>, frontier: Vec<String> },
    #[error("no feasible candidates")]
    EmptyCandidates { diagnostics: Vec<NearestMiss> },
    #[error("point `{0}` is not in the frontier")]
    UnknownPoint(String),
    #[error("point `{0}` is not a feasible candidate")]
    ChoiceNotFeasible(String),
    #[error("candidate set was computed against frontier {expected}, not {found}")]
    StaleFrontier { expected: String, found: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("store error: {0}")]
    Store(#[from] crate::store::StoreError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Performance metric a tuple can threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    Precision,
    Recall,
    F1,
    Auc,
}

impl MetricName {
    pub const ALL: [MetricName; 5] =
        [MetricName::Accuracy, MetricName::Precision, MetricName::Recall, MetricName::F1, MetricName::Auc];

    pub fn name(&self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::Precision => "precision",
            MetricName::Recall => "recall",
            MetricName::F1 => "f1",
            MetricName::Auc => "auc",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRequirement {
    pub metric: MetricName,
    pub threshold: f64,
}

/// Inclusive ε range; `high = None` is open-ended and admits non-private
/// models. Serialized as `[low, high]` with `null` for an open end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonBand {
    pub low: f64,
    pub high: Option<f64>,
}

impl EpsilonBand {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high: Some(high) }
    }

    pub fn open(low: f64) -> Self {
        Self { low, high: None }
    }

    /// Whether a certified ε (infinite for non-private) lies in the band.
    pub fn contains(&self, epsilon: f64) -> bool {
        epsilon >= self.low && self.high.is_none_or(|h| epsilon <= h)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.low.is_finite() && self.low > 0.0) {
            return Err(PolicyError::InvalidBand(format!("low end {} must be positive", self.low)));
        }
        if let Some(h) = self.high {
            if !(h.is_finite() && h >= self.low) {
                return Err(PolicyError::InvalidBand(format!("high end {h} below low end {}", self.low)));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EpsilonBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.high {
            Some(h) => write!(f, "[{}, {}]", self.low, h),
            None => write!(f, "[{}, open)", self.low),
        }
    }
}

impl Serialize for EpsilonBand {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.low, self.high).serialize(s)
    }
}

impl<'de> Deserialize<'de> for EpsilonBand {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (low, high) = <(f64, Option<f64>)>::deserialize(d)?;
        Ok(Self { low, high })
    }
}

/// Axis of a lexicographic priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityAxis {
    Privacy,
    Fairness,
    Performance,
}

impl PriorityAxis {
    pub const ALL: [PriorityAxis; 3] = [PriorityAxis::Privacy, PriorityAxis::Fairness, PriorityAxis::Performance];

    pub fn name(&self) -> &'static str {
        match self {
            PriorityAxis::Privacy => "privacy",
            PriorityAxis::Fairness => "fairness",
            PriorityAxis::Performance => "performance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    ConstraintFirst,
    Lexicographic(Vec<PriorityAxis>),
}

impl Priority {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if let Priority::Lexicographic(order) = self {
            if order.is_empty() {
                return Err(PolicyError::InvalidPriority("lexicographic order is empty".into()));
            }
            let mut seen = order.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != order.len() {
                return Err(PolicyError::InvalidPriority("lexicographic order repeats an axis".into()));
            }
        }
        Ok(())
    }
}

/// The machine-readable policy a selection is judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTuple {
    pub criterion: ConstraintKind,
    pub delta: f64,
    pub epsilon_band: EpsilonBand,
    pub attributes: Vec<String>,
    pub performance: PerformanceRequirement,
    pub priority: Priority,
}

impl PolicyTuple {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(PolicyError::DeltaOutOfRange(self.delta));
        }
        self.epsilon_band.validate()?;
        if self.attributes.is_empty() {
            return Err(PolicyError::EmptyAttributeList);
        }
        let t = self.performance.threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(PolicyError::InvalidThreshold(t));
        }
        self.priority.validate()
    }
}

/// Values used for tuple fields the stakeholder left unspecified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleDefaults {
    pub delta: f64,
    pub epsilon_band: EpsilonBand,
    pub performance: PerformanceRequirement,
    pub priority: Priority,
}

impl Default for TupleDefaults {
    fn default() -> Self {
        Self {
            delta: 0.05,
            epsilon_band: EpsilonBand::new(0.5, 1.0),
            performance: PerformanceRequirement { metric: MetricName::Accuracy, threshold: 0.70 },
            priority: Priority::ConstraintFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Given,
    Defaulted,
}

/// A complete tuple plus where each field came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructedTuple {
    pub tuple: PolicyTuple,
    pub provenance: BTreeMap<String, Provenance>,
}

impl ConstructedTuple {
    pub fn defaulted(&self) -> Vec<&str> {
        self.provenance.iter().filter(|(_, p)| **p == Provenance::Defaulted).map(|(k, _)| k.as_str()).collect()
    }
}

/// Fill unspecified fields from `defaults` and validate the result.
pub fn construct_tuple(
    parsed: &ParsedPolicy,
    defaults: &TupleDefaults,
    attributes: &[String],
) -> Result<ConstructedTuple, PolicyError> {
    let criterion = parsed.criterion.ok_or(PolicyError::MissingCriterion)?;
    if attributes.is_empty() {
        return Err(PolicyError::EmptyAttributeList);
    }
    let mut provenance = BTreeMap::new();
    let mut pick = |field: &str, given: bool| {
        provenance.insert(field.to_string(), if given { Provenance::Given } else { Provenance::Defaulted });
    };
    pick("criterion", true);
    pick("attributes", true);
    pick("delta", parsed.delta.is_some());
    pick("epsilon_band", parsed.epsilon_band.is_some());
    pick("performance", parsed.performance.is_some());
    pick("priority", parsed.priority.is_some());
    let tuple = PolicyTuple {
        criterion,
        delta: parsed.delta.unwrap_or(defaults.delta),
        epsilon_band: parsed.epsilon_band.unwrap_or(defaults.epsilon_band),
        attributes: attributes.to_vec(),
        performance: parsed.performance.unwrap_or(defaults.performance),
        priority: parsed.priority.clone().unwrap_or_else(|| defaults.priority.clone()),
    };
    tuple.validate()?;
    Ok(ConstructedTuple { tuple, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs() -> Vec<String> {
        vec!["sex".to_string()]
    }

    #[test]
    fn only_criterion_gets_every_default() {
        let parsed = ParsedPolicy { criterion: Some(ConstraintKind::EqualizedOdds), ..Default::default() };
        let c = construct_tuple(&parsed, &TupleDefaults::default(), &attrs()).unwrap();
        assert_eq!(c.tuple.delta, 0.05);
        assert_eq!(c.tuple.epsilon_band, EpsilonBand::new(0.5, 1.0));
        assert_eq!(c.tuple.performance, PerformanceRequirement { metric: MetricName::Accuracy, threshold: 0.70 });
        assert_eq!(c.tuple.priority, Priority::ConstraintFirst);
        assert_eq!(c.defaulted(), vec!["delta", "epsilon_band", "performance", "priority"]);
    }

    #[test]
    fn fully_given_has_no_defaults() {
        let parsed = ParsedPolicy {
            criterion: Some(ConstraintKind::DemographicParity),
            delta: Some(0.03),
            epsilon_band: Some(EpsilonBand::new(0.1, 0.5)),
            performance: Some(PerformanceRequirement { metric: MetricName::F1, threshold: 0.6 }),
            priority: Some(Priority::Lexicographic(vec![PriorityAxis::Privacy])),
            ..Default::default()
        };
        let c = construct_tuple(&parsed, &TupleDefaults::default(), &attrs()).unwrap();
        assert!(c.defaulted().is_empty());
        assert_eq!(c.tuple.delta, 0.03);
        assert_eq!(c.tuple.performance.metric, MetricName::F1);
    }

    #[test]
    fn construction_errors() {
        let mut parsed = ParsedPolicy { delta: Some(0.05), ..Default::default() };
        assert!(matches!(construct_tuple(&parsed, &TupleDefaults::default(), &attrs()), Err(PolicyError::MissingCriterion)));
        parsed.criterion = Some(ConstraintKind::DemographicParity);
        parsed.delta = Some(1.5);
        assert!(matches!(construct_tuple(&parsed, &TupleDefaults::default(), &attrs()), Err(PolicyError::DeltaOutOfRange(_))));
        parsed.delta = None;
        assert!(matches!(construct_tuple(&parsed, &TupleDefaults::default(), &[]), Err(PolicyError::EmptyAttributeList)));
        parsed.epsilon_band = Some(EpsilonBand::new(2.0, 1.0));
        assert!(matches!(construct_tuple(&parsed, &TupleDefaults::default(), &attrs()), Err(PolicyError::InvalidBand(_))));
    }

    #[test]
    fn band_serializes_as_pair() {
        assert_eq!(serde_json::to_string(&EpsilonBand::new(0.5, 1.0)).unwrap(), "[0.5,1.0]");
        assert_eq!(serde_json::to_string(&EpsilonBand::open(1.0)).unwrap(), "[1.0,null]");
        let b: EpsilonBand = serde_json::from_str("[1,null]").unwrap();
        assert!(b.contains(f64::INFINITY));
        assert!(!EpsilonBand::new(0.5, 1.0).contains(f64::INFINITY));
    }

    #[test]
    fn priority_json() {
        let p: Priority = serde_json::from_str(r#"{"lexicographic":["privacy","fairness","performance"]}"#).unwrap();
        assert_eq!(p, Priority::Lexicographic(PriorityAxis::ALL.to_vec()));
        let c: Priority = serde_json::from_str(r#""constraint_first""#).unwrap();
        assert_eq!(c, Priority::ConstraintFirst);
        assert!(Priority::Lexicographic(vec![PriorityAxis::Privacy, PriorityAxis::Privacy]).validate().is_err());
    }
}
