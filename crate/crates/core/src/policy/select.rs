//! Feasibility filtering and model selection under a priority policy.

use serde::{Deserialize, Serialize};

use super::render::render_point;
use super::{IntentLexicon, PolicyError, PolicyTuple, Priority, PriorityAxis};
use crate::frontier::{Frontier, FrontierPoint};

/// Values within this distance tie on a lexicographic axis.
pub const TIE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Fairness,
    Privacy,
    Performance,
}

/// One condition evaluated on one point. `slack` is positive inside the
/// requirement and negative outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub passed: bool,
    /// Achieved value; `None` when undefined (non-private ε is reported as
    /// `None` with zero slack room).
    pub value: Option<f64>,
    pub target: String,
    /// Infinite when a side of the requirement is unbounded or the value is
    /// undefined; written as `"inf"` or `"-inf"`.
    #[serde(with = "extended_float")]
    pub slack: f64,
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *x {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            v if v.is_nan() => Err(serde::ser::Error::custom("slack is NaN")),
            v => s.serialize_f64(v),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Named(n) if n == "inf" => Ok(f64::INFINITY),
            Repr::Named(n) if n == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Named(n) => Err(serde::de::Error::custom(format!("expected a number, \"inf\" or \"-inf\", got `{n}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub point_id: String,
    pub feasible: bool,
    pub conditions: Vec<ConditionCheck>,
}

impl PointCheck {
    /// Total amount by which failed conditions miss their targets.
    pub fn shortfall(&self) -> f64 {
        self.conditions.iter().map(|c| (-c.slack).max(0.0)).sum()
    }

    pub fn failed(&self) -> Vec<Condition> {
        self.conditions.iter().filter(|c| !c.passed).map(|c| c.condition).collect()
    }
}

/// Evaluate the three tuple conditions on a point.
pub fn check_point(p: &FrontierPoint, t: &PolicyTuple) -> PointCheck {
    let m = p.achieved.as_ref();
    let disparity = m.and_then(|a| a.disparity(t.criterion));
    let fairness = ConditionCheck {
        condition: Condition::Fairness,
        passed: disparity.is_some_and(|d| d <= t.delta),
        value: disparity,
        target: format!("{} <= {}", t.criterion.name(), t.delta),
        slack: disparity.map_or(f64::NEG_INFINITY, |d| t.delta - d),
    };
    let eps = p.certified_epsilon();
    let in_band = m.is_some() && t.epsilon_band.contains(eps);
    let below = eps - t.epsilon_band.low;
    let above = t.epsilon_band.high.map_or(f64::INFINITY, |h| h - eps);
    let privacy = ConditionCheck {
        condition: Condition::Privacy,
        passed: in_band,
        value: eps.is_finite().then_some(eps),
        target: format!("epsilon in {}", t.epsilon_band),
        slack: if eps.is_finite() { below.min(above) } else if t.epsilon_band.high.is_none() { 0.0 } else { f64::NEG_INFINITY },
    };
    let perf_value = m.and_then(|a| a.mean(t.performance.metric.name()));
    let performance = ConditionCheck {
        condition: Condition::Performance,
        passed: perf_value.is_some_and(|v| v >= t.performance.threshold),
        value: perf_value,
        target: format!("{} >= {}", t.performance.metric.name(), t.performance.threshold),
        slack: perf_value.map_or(f64::NEG_INFINITY, |v| v - t.performance.threshold),
    };
    let conditions = vec![fairness, privacy, performance];
    PointCheck { point_id: p.id.clone(), feasible: conditions.iter().all(|c| c.passed), conditions }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point_id: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestMiss {
    pub point_id: String,
    pub failed: Vec<Condition>,
    pub conditions: Vec<ConditionCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub frontier_digest: String,
    pub candidates: Vec<Candidate>,
    /// Closest infeasible point(s) when there are no candidates.
    pub diagnostics: Vec<NearestMiss>,
}

impl CandidateSet {
    pub fn ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.point_id.clone()).collect()
    }
}

fn same_attributes(f: &Frontier, t: &PolicyTuple) -> Result<(), PolicyError> {
    let mut a = t.attributes.clone();
    let mut b = f.protected.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(PolicyError::AttributeMismatch { tuple: t.attributes.clone(), frontier: f.protected.clone() });
    }
    Ok(())
}

/// Points meeting every tuple condition, each with an explanation. When
/// none qualify, the diagnostics name the points with the smallest total
/// shortfall and their per-condition slack.
pub fn filter_feasible(f: &Frontier, t: &PolicyTuple, lexicon: &IntentLexicon) -> Result<CandidateSet, PolicyError> {
    same_attributes(f, t)?;
    t.validate()?;
    let checks: Vec<(&FrontierPoint, PointCheck)> = f.points.iter().map(|p| (p, check_point(p, t))).collect();
    let candidates: Vec<Candidate> = checks
        .iter()
        .filter(|(_, c)| c.feasible)
        .map(|(p, _)| Candidate {
            point_id: p.id.clone(),
            explanation: render_point(p, t.criterion, t.performance.metric, lexicon),
        })
        .collect();
    let mut diagnostics = Vec::new();
    if candidates.is_empty() {
        let measured: Vec<&PointCheck> =
            checks.iter().filter(|(p, _)| p.achieved.is_some()).map(|(_, c)| c).collect();
        let best = measured.iter().map(|c| c.shortfall()).fold(f64::INFINITY, f64::min);
        diagnostics = measured
            .into_iter()
            .filter(|c| c.shortfall() == best)
            .map(|c| NearestMiss { point_id: c.point_id.clone(), failed: c.failed(), conditions: c.conditions.clone() })
            .collect();
    }
    Ok(CandidateSet { frontier_digest: f.digest.clone(), candidates, diagnostics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: String,
    pub rationale: String,
}

/// Orientation: smaller is better on every axis.
fn axis_cost(p: &FrontierPoint, t: &PolicyTuple, axis: PriorityAxis) -> f64 {
    let m = p.achieved.as_ref();
    match axis {
        PriorityAxis::Privacy => p.certified_epsilon(),
        PriorityAxis::Fairness => m.and_then(|a| a.disparity(t.criterion)).unwrap_or(f64::INFINITY),
        PriorityAxis::Performance => -m.and_then(|a| a.mean(t.performance.metric.name())).unwrap_or(f64::NEG_INFINITY),
    }
}

/// Final tie-break: smaller ε, then smaller disparity, then point id.
fn tie_break<'a>(pool: &[&'a FrontierPoint], t: &PolicyTuple) -> &'a FrontierPoint {
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| {
        axis_cost(a, t, PriorityAxis::Privacy)
            .total_cmp(&axis_cost(b, t, PriorityAxis::Privacy))
            .then(axis_cost(a, t, PriorityAxis::Fairness).total_cmp(&axis_cost(b, t, PriorityAxis::Fairness)))
            .then(a.id.cmp(&b.id))
    });
    sorted[0]
}

/// Choose among the candidates.
///
/// `constraint_first` maximises the tuple's metric. `lexicographic` keeps,
/// axis by axis, the points within [`TIE_TOLERANCE`] of the best on that
/// axis, and takes the exact best on the last axis.
pub fn select_model(cands: &CandidateSet, f: &Frontier, t: &PolicyTuple) -> Result<Selection, PolicyError> {
    if cands.frontier_digest != f.digest {
        return Err(PolicyError::StaleFrontier { expected: cands.frontier_digest.clone(), found: f.digest.clone() });
    }
    if cands.candidates.is_empty() {
        return Err(PolicyError::EmptyCandidates { diagnostics: cands.diagnostics.clone() });
    }
    let mut pool: Vec<&FrontierPoint> = Vec::new();
    for c in &cands.candidates {
        pool.push(f.point(&c.point_id).ok_or_else(|| PolicyError::UnknownPoint(c.point_id.clone()))?);
    }
    let n = pool.len();
    let metric = t.performance.metric.name();
    let (order, steps): (Vec<PriorityAxis>, String) = match &t.priority {
        Priority::ConstraintFirst => (vec![PriorityAxis::Performance], format!("maximised {metric}")),
        Priority::Lexicographic(order) => {
            let words: Vec<&str> = order.iter().map(|a| a.name()).collect();
            (order.clone(), format!("ranked lexicographically by {} (tolerance {TIE_TOLERANCE})", words.join(", then ")))
        }
    };
    for (k, axis) in order.iter().enumerate() {
        let best = pool.iter().map(|p| axis_cost(p, t, *axis)).fold(f64::INFINITY, f64::min);
        let tol = if k + 1 == order.len() { 0.0 } else { TIE_TOLERANCE };
        pool.retain(|p| axis_cost(p, t, *axis) <= best + tol);
    }
    let chosen = tie_break(&pool, t);
    let policy = match t.priority {
        Priority::ConstraintFirst => "constraint_first",
        Priority::Lexicographic(_) => "lexicographic",
    };
    let rationale = format!(
        "Policy {policy}: among {n} feasible candidate(s), {steps}; remaining ties broken by smaller epsilon, then smaller {} disparity, then point id. Chosen {} with {metric} {:.4}.",
        t.criterion.name(),
        chosen.id,
        -axis_cost(chosen, t, PriorityAxis::Performance),
    );
    Ok(Selection { chosen: chosen.id.clone(), rationale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_slack_round_trips() {
        for slack in [f64::INFINITY, f64::NEG_INFINITY, -0.25] {
            let c = ConditionCheck { condition: Condition::Privacy, passed: false, value: None, target: "t".into(), slack };
            let text = crate::canonical::to_canonical_string(&c).unwrap();
            let back: ConditionCheck = serde_json::from_str(&text).unwrap();
            assert_eq!(back, c, "{text}");
        }
    }
}
