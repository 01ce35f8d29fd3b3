//! Group-specific randomised thresholds fitted on calibration data.
//!
//! For one group, sort calibration scores descending and collapse ties into
//! blocks. Selecting the first `b` blocks plus a fraction `φ` of block `b`
//! is the rule "predict 1 above the block's score, and with probability `φ`
//! at it"; these rules reach every selection rate, and every point on the
//! group's ROC polyline. Mixtures of rules reach the ROC convex hull.
//!
//! * Demographic parity: one common selection rate for every group, chosen
//!   to maximise the objective. The objective is piecewise linear in the
//!   rate, so only block boundaries need checking.
//! * Equal opportunity: one common true-positive rate, each group using the
//!   fewest selections that reach it; again only breakpoints matter.
//! * Equalized odds: one common (FPR, TPR) point inside every group's ROC
//!   hull, found by a linear program whose variables are the hull-vertex
//!   mixture weights of every group.

use std::collections::BTreeMap;

use microlp::ComparisonOp;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{solve_lp, ConstraintKind, FairError, FairnessConstraint};
use crate::dataset::EncodedMatrix;
use crate::metrics::{majority_group, GroupId};
use crate::models::PredictorHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Accuracy,
}

impl std::str::FromStr for Objective {
    type Err = FairError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(Objective::Accuracy),
            other => Err(FairError::UnknownObjective(other.to_string())),
        }
    }
}

/// Predict 1 when `score > threshold`; at `score == threshold` predict 1
/// with probability `p_at_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub threshold: f64,
    pub p_at_threshold: f64,
}

impl ThresholdRule {
    pub fn positive_probability(&self, score: f64) -> f64 {
        if score > self.threshold {
            1.0
        } else if score == self.threshold {
            self.p_at_threshold
        } else {
            0.0
        }
    }
}

/// Mixture of threshold rules for one group (a single rule except under
/// equalized odds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRule {
    pub components: Vec<(f64, ThresholdRule)>,
}

impl GroupRule {
    fn single(rule: ThresholdRule) -> Self {
        Self { components: vec![(1.0, rule)] }
    }

    pub fn positive_probability(&self, score: f64) -> f64 {
        self.components.iter().map(|(w, r)| w * r.positive_probability(score)).sum()
    }

    pub fn predict<R: Rng + ?Sized>(&self, score: f64, rng: &mut R) -> u8 {
        u8::from(rng.random::<f64>() < self.positive_probability(score))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub kind: ConstraintKind,
    pub objective: Objective,
    /// Written as `[group, rule]` pairs so the value also round-trips when
    /// nested in an internally tagged enum, where integer map keys cannot.
    #[serde(with = "rule_pairs")]
    pub rules: BTreeMap<GroupId, GroupRule>,
    /// Rule used for groups absent from calibration (the largest group).
    pub fallback_group: GroupId,
    /// Groups whose scores were constant or whose ROC curve is undefined.
    pub degenerate_groups: Vec<GroupId>,
}

mod rule_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    use super::GroupRule;
    use crate::metrics::GroupId;

    pub fn serialize<S: Serializer>(rules: &BTreeMap<GroupId, GroupRule>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(rules.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<GroupId, GroupRule>, D::Error> {
        let pairs = Vec::<(GroupId, GroupRule)>::deserialize(d)?;
        let n = pairs.len();
        let map: BTreeMap<_, _> = pairs.into_iter().collect();
        if map.len() != n {
            return Err(serde::de::Error::custom("duplicate group in threshold rules"));
        }
        Ok(map)
    }
}

impl GroupThresholds {
    fn rule(&self, g: GroupId) -> &GroupRule {
        self.rules.get(&g).unwrap_or_else(|| &self.rules[&self.fallback_group])
    }

    pub fn positive_probability(&self, g: GroupId, score: f64) -> f64 {
        self.rule(g).positive_probability(score)
    }

    pub fn predict<R: Rng + ?Sized>(&self, g: GroupId, score: f64, rng: &mut R) -> u8 {
        self.rule(g).predict(score, rng)
    }
}

/// Tie blocks of one group's scores, highest score first.
struct Blocks {
    scores: Vec<f64>,
    /// `cum_n[k]`, `cum_pos[k]`: rows and positives in the first k blocks.
    cum_n: Vec<f64>,
    cum_pos: Vec<f64>,
}

impl Blocks {
    fn new(mut rows: Vec<(f64, u8)>) -> Self {
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut scores = Vec::new();
        let mut cum_n = vec![0.0];
        let mut cum_pos = vec![0.0];
        for (s, y) in rows {
            if scores.last() != Some(&s) {
                scores.push(s);
                cum_n.push(*cum_n.last().expect("seeded"));
                cum_pos.push(*cum_pos.last().expect("seeded"));
            }
            *cum_n.last_mut().expect("seeded") += 1.0;
            *cum_pos.last_mut().expect("seeded") += f64::from(y);
        }
        Self { scores, cum_n, cum_pos }
    }

    fn n(&self) -> f64 {
        *self.cum_n.last().expect("seeded")
    }

    fn positives(&self) -> f64 {
        *self.cum_pos.last().expect("seeded")
    }

    fn negatives(&self) -> f64 {
        self.n() - self.positives()
    }

    /// Block index and fraction for selecting `m` rows.
    fn locate(&self, m: f64) -> (usize, f64) {
        let b = self.cum_n.partition_point(|&c| c <= m).saturating_sub(1).min(self.scores.len() - 1);
        let size = self.cum_n[b + 1] - self.cum_n[b];
        (b, ((m - self.cum_n[b]) / size).clamp(0.0, 1.0))
    }

    /// Expected positives among `m` selected rows.
    fn positives_at(&self, m: f64) -> f64 {
        let (b, phi) = self.locate(m);
        self.cum_pos[b] + phi * (self.cum_pos[b + 1] - self.cum_pos[b])
    }

    /// Expected correct predictions when selecting `m` rows.
    fn correct_at(&self, m: f64) -> f64 {
        let tp = self.positives_at(m);
        tp + self.negatives() - (m - tp)
    }

    fn rule_at(&self, m: f64) -> ThresholdRule {
        let (b, phi) = self.locate(m);
        ThresholdRule { threshold: self.scores[b], p_at_threshold: phi }
    }

    /// Fewest selections with expected true positives `q`.
    fn selections_for_positives(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        let b = self.cum_pos[1..].partition_point(|&c| c < q).min(self.scores.len() - 1);
        let pos_b = self.cum_pos[b + 1] - self.cum_pos[b];
        let phi = if pos_b > 0.0 { ((q - self.cum_pos[b]) / pos_b).clamp(0.0, 1.0) } else { 1.0 };
        self.cum_n[b] + phi * (self.cum_n[b + 1] - self.cum_n[b])
    }

    /// Rule selecting exactly the first `k` blocks.
    fn block_rule(&self, k: usize) -> ThresholdRule {
        if k == 0 {
            ThresholdRule { threshold: self.scores[0], p_at_threshold: 0.0 }
        } else {
            ThresholdRule { threshold: self.scores[k - 1], p_at_threshold: 1.0 }
        }
    }
}

/// Fit per-group thresholds for `model` on `calibration` so the chosen
/// criterion holds with equality in expectation on that data.
pub fn threshold_optimize(
    model: &PredictorHandle,
    calibration: &EncodedMatrix,
    constraint: &FairnessConstraint,
    objective: Objective,
) -> Result<GroupThresholds, FairError> {
    let scores = model.scores(calibration)?;
    let groups = calibration.joint_groups();
    let mut per: BTreeMap<GroupId, Vec<(f64, u8)>> = BTreeMap::new();
    for i in 0..calibration.n_rows() {
        per.entry(groups[i]).or_default().push((scores[i], calibration.labels[i]));
    }
    if per.is_empty() {
        return Err(FairError::DegenerateData);
    }
    for (&g, rows) in &per {
        if rows.iter().any(|(s, _)| !s.is_finite()) {
            return Err(FairError::GroupMissingScores(g));
        }
    }
    let sizes: BTreeMap<GroupId, u64> = per.iter().map(|(g, r)| (*g, r.len() as u64)).collect();
    let fallback_group = majority_group(&sizes).expect("non-empty");
    let blocks: BTreeMap<GroupId, Blocks> = per.into_iter().map(|(g, r)| (g, Blocks::new(r))).collect();
    let mut degenerate: Vec<GroupId> = blocks.iter().filter(|(_, b)| b.scores.len() == 1).map(|(g, _)| *g).collect();

    let rules = match constraint.kind {
        ConstraintKind::DemographicParity => common_rate(&blocks),
        ConstraintKind::EqualOpportunity => common_tpr(&blocks, &mut degenerate),
        ConstraintKind::EqualizedOdds => common_roc_point(&blocks, &mut degenerate)?,
    };
    degenerate.sort_unstable();
    degenerate.dedup();
    Ok(GroupThresholds { kind: constraint.kind, objective, rules, fallback_group, degenerate_groups: degenerate })
}

fn common_rate(blocks: &BTreeMap<GroupId, Blocks>) -> BTreeMap<GroupId, GroupRule> {
    let mut candidates = vec![0.0, 1.0];
    for b in blocks.values() {
        candidates.extend(b.cum_n.iter().map(|c| c / b.n()));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let value = |r: f64| blocks.values().map(|b| b.correct_at(r * b.n())).sum::<f64>();
    let mut best = candidates[0];
    let mut best_v = value(best);
    for &r in &candidates[1..] {
        let v = value(r);
        if v > best_v + 1e-9 {
            best = r;
            best_v = v;
        }
    }
    blocks.iter().map(|(g, b)| (*g, GroupRule::single(b.rule_at(best * b.n())))).collect()
}

fn common_tpr(blocks: &BTreeMap<GroupId, Blocks>, degenerate: &mut Vec<GroupId>) -> BTreeMap<GroupId, GroupRule> {
    let (defined, undefined): (Vec<_>, Vec<_>) = blocks.iter().partition(|(_, b)| b.positives() > 0.0);
    let mut rules = BTreeMap::new();
    // no positives: TPR is undefined, the group keeps its best rule (select none)
    for (g, b) in undefined {
        degenerate.push(*g);
        rules.insert(*g, GroupRule::single(b.rule_at(0.0)));
    }
    let mut candidates = vec![0.0, 1.0];
    for (_, b) in &defined {
        candidates.extend(b.cum_pos.iter().map(|c| c / b.positives()));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let value = |t: f64| {
        defined
            .iter()
            .map(|(_, b)| b.correct_at(b.selections_for_positives(t * b.positives())))
            .sum::<f64>()
    };
    let mut best = candidates[0];
    let mut best_v = value(best);
    for &t in &candidates[1..] {
        let v = value(t);
        if v > best_v + 1e-9 {
            best = t;
            best_v = v;
        }
    }
    for (g, b) in defined {
        rules.insert(*g, GroupRule::single(b.rule_at(b.selections_for_positives(best * b.positives()))));
    }
    rules
}

/// Indices of the convex hull of `pts` (Andrew's monotone chain).
fn convex_hull(pts: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| pts[a].0.total_cmp(&pts[b].0).then(pts[a].1.total_cmp(&pts[b].1)));
    idx.dedup_by(|a, b| pts[*a] == pts[*b]);
    if idx.len() <= 2 {
        return idx;
    }
    let cross = |o: usize, a: usize, b: usize| {
        (pts[a].0 - pts[o].0) * (pts[b].1 - pts[o].1) - (pts[a].1 - pts[o].1) * (pts[b].0 - pts[o].0)
    };
    let mut hull: Vec<usize> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let order: Vec<usize> = if pass == 0 { idx.clone() } else { idx.iter().rev().copied().collect() };
        for &p in &order {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn common_roc_point(blocks: &BTreeMap<GroupId, Blocks>, degenerate: &mut Vec<GroupId>) -> Result<BTreeMap<GroupId, GroupRule>, FairError> {
    let mut rules = BTreeMap::new();
    let mut active = Vec::new();
    for (g, b) in blocks {
        if b.positives() == 0.0 || b.negatives() == 0.0 {
            // one-label group: the constant rule matching its label is exact
            degenerate.push(*g);
            let k = if b.positives() == 0.0 { 0 } else { b.scores.len() };
            rules.insert(*g, GroupRule::single(b.block_rule(k)));
        } else {
            let pts: Vec<(f64, f64)> = (0..=b.scores.len())
                .map(|k| ((b.cum_n[k] - b.cum_pos[k]) / b.negatives(), b.cum_pos[k] / b.positives()))
                .collect();
            let hull = convex_hull(&pts);
            active.push((*g, b, pts, hull));
        }
    }
    if active.is_empty() {
        return Ok(rules);
    }
    // variables: x (fpr), y (tpr), then hull weights per group
    let total_pos: f64 = active.iter().map(|a| a.1.positives()).sum();
    let total_neg: f64 = active.iter().map(|a| a.1.negatives()).sum();
    let mut c = vec![total_neg, -total_pos];
    let mut bounds = vec![(0.0, 1.0), (0.0, 1.0)];
    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    for (_, _, pts, hull) in &active {
        let off = c.len();
        offsets.push(off);
        for _ in hull {
            c.push(0.0);
            bounds.push((0.0, 1.0));
        }
        rows.push(((0..hull.len()).map(|k| (off + k, 1.0)).collect(), ComparisonOp::Eq, 1.0));
        let mut fx: Vec<(usize, f64)> = hull.iter().enumerate().map(|(k, &h)| (off + k, pts[h].0)).collect();
        fx.push((0, -1.0));
        rows.push((fx, ComparisonOp::Eq, 0.0));
        let mut fy: Vec<(usize, f64)> = hull.iter().enumerate().map(|(k, &h)| (off + k, pts[h].1)).collect();
        fy.push((1, -1.0));
        rows.push((fy, ComparisonOp::Eq, 0.0));
    }
    let sol = solve_lp(&c, &bounds, &rows)?;
    for ((g, b, _, hull), off) in active.iter().zip(offsets) {
        let mut comps: Vec<(f64, ThresholdRule)> = hull
            .iter()
            .enumerate()
            .filter(|(k, _)| sol[off + k] > 1e-12)
            .map(|(k, &h)| (sol[off + k], b.block_rule(h)))
            .collect();
        let total: f64 = comps.iter().map(|c| c.0).sum();
        comps.iter_mut().for_each(|c| c.0 /= total);
        rules.insert(*g, GroupRule { components: comps });
    }
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearModel;

    /// Identity-score model: score = sigmoid(x0) with x0 = logit of the
    /// desired score.
    fn scorer() -> PredictorHandle {
        PredictorHandle::Linear(LinearModel { weights: vec![1.0], bias: 0.0, trained_budget: crate::dp::PrivacyBudget::NonPrivate })
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn calib(rows: &[(f64, u8, u32)]) -> EncodedMatrix {
        EncodedMatrix::from_rows(
            rows.iter().map(|r| vec![logit(r.0)]).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
        )
    }

    fn expected_rates(t: &GroupThresholds, m: &EncodedMatrix, filter: impl Fn(u8) -> bool) -> BTreeMap<u32, f64> {
        let scores = scorer().scores(m).unwrap();
        let mut acc: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for i in 0..m.n_rows() {
            if filter(m.labels[i]) {
                let e = acc.entry(m.groups[0][i]).or_default();
                e.0 += t.positive_probability(m.groups[0][i], scores[i]);
                e.1 += 1.0;
            }
        }
        acc.into_iter().map(|(g, (a, n))| (g, a / n)).collect()
    }

    fn biased() -> EncodedMatrix {
        let mut rows = Vec::new();
        for i in 0..40 {
            let s = 0.05 + 0.9 * i as f64 / 40.0;
            rows.push((s, u8::from(i % 4 != 0 && s > 0.3), 0));
            rows.push((s * 0.6, u8::from(i % 3 == 0 && s > 0.5), 1));
        }
        calib(&rows)
    }

    #[test]
    fn identical_groups_identical_rules() {
        let rows: Vec<(f64, u8, u32)> = (0..20).flat_map(|i| {
            let s = 0.1 + 0.04 * i as f64;
            [(s, u8::from(i > 9), 0), (s, u8::from(i > 9), 1)]
        }).collect();
        let m = calib(&rows);
        for kind in [ConstraintKind::DemographicParity, ConstraintKind::EqualOpportunity, ConstraintKind::EqualizedOdds] {
            let t = threshold_optimize(&scorer(), &m, &FairnessConstraint { kind, delta: 0.05 }, Objective::Accuracy).unwrap();
            assert_eq!(t.rules[&0], t.rules[&1], "{kind:?}");
        }
    }

    #[test]
    fn parity_and_opportunity_gaps_close() {
        let m = biased();
        let t = threshold_optimize(&scorer(), &m, &FairnessConstraint { kind: ConstraintKind::DemographicParity, delta: 0.05 }, Objective::Accuracy).unwrap();
        let r = expected_rates(&t, &m, |_| true);
        assert!((r[&0] - r[&1]).abs() <= 1e-9, "{r:?}");
        let t = threshold_optimize(&scorer(), &m, &FairnessConstraint { kind: ConstraintKind::EqualOpportunity, delta: 0.05 }, Objective::Accuracy).unwrap();
        let r = expected_rates(&t, &m, |y| y == 1);
        assert!((r[&0] - r[&1]).abs() <= 1e-9, "{r:?}");
        let t = threshold_optimize(&scorer(), &m, &FairnessConstraint { kind: ConstraintKind::EqualizedOdds, delta: 0.05 }, Objective::Accuracy).unwrap();
        let tpr = expected_rates(&t, &m, |y| y == 1);
        let fpr = expected_rates(&t, &m, |y| y == 0);
        assert!((tpr[&0] - tpr[&1]).abs() <= 1e-7 && (fpr[&0] - fpr[&1]).abs() <= 1e-7, "{tpr:?} {fpr:?}");
    }

    #[test]
    fn post_processed_model_round_trips_through_json() {
        let m = biased();
        let t = threshold_optimize(&scorer(), &m, &FairnessConstraint { kind: ConstraintKind::DemographicParity, delta: 0.05 }, Objective::Accuracy).unwrap();
        let deployed = super::super::DeployedModel::PostProcessed { model: scorer(), thresholds: t };
        let text = serde_json::to_string(&deployed).unwrap();
        let back: super::super::DeployedModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, deployed);
    }

    #[test]
    fn single_group_is_global_best_threshold() {
        let rows: Vec<(f64, u8, u32)> = (0..10).map(|i| (0.05 + 0.1 * i as f64, u8::from(i >= 6), 0)).collect();
        let m = calib(&rows);
        let t = threshold_optimize(&scorer(), &m, &FairnessConstraint { kind: ConstraintKind::DemographicParity, delta: 0.0 }, Objective::Accuracy).unwrap();
        let r = expected_rates(&t, &m, |_| true);
        assert!((r[&0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_flagged() {
        let rows = vec![(0.5, 1, 0), (0.5, 0, 0), (0.2, 1, 1), (0.7, 0, 1), (0.9, 1, 1)];
        let m = calib(&rows);
        let t = threshold_optimize(&scorer(), &m, &FairnessConstraint { kind: ConstraintKind::DemographicParity, delta: 0.0 }, Objective::Accuracy).unwrap();
        assert_eq!(t.degenerate_groups, vec![0]);
    }

    #[test]
    fn hull_of_square() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (0.5, 0.5), (1.0, 1.0), (0.0, 1.0)];
        let mut h = convex_hull(&pts);
        h.sort_unstable();
        assert_eq!(h, vec![0, 1, 3, 4]);
    }
}
