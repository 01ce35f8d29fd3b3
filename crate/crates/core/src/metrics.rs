//! Performance and group-fairness metrics.
//!
//! Fairness gaps are always taken against a reference group: the largest
//! group (ties to the smallest id) unless the caller names one. With two
//! groups this is the direct pairwise gap; with more, the gaps of every
//! non-reference group are averaged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type GroupId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("fairness metrics need at least two groups")]
    SingleGroup,
    #[error("reference group selection rate is zero")]
    ZeroReferenceRate,
    #[error("group {group} has an undefined {which}")]
    UndefinedRate { group: GroupId, which: &'static str },
    #[error("AUC requested without scores")]
    AucWithoutScores,
    #[error("AUC undefined when only one class is present")]
    AucUndefined,
    #[error("reference group {0} not present")]
    UnknownReference(GroupId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn selection_rate(&self) -> f64 {
        (self.tp + self.fp) as f64 / self.total() as f64
    }

    pub fn tpr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }
}

/// Per-group confusion counts; groups with no rows are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcomeCounts {
    pub groups: BTreeMap<GroupId, Confusion>,
}

impl GroupOutcomeCounts {
    pub fn total(&self) -> u64 {
        self.groups.values().map(Confusion::total).sum()
    }

    pub fn sizes(&self) -> BTreeMap<GroupId, u64> {
        self.groups.iter().map(|(&g, c)| (g, c.total())).collect()
    }

    /// Largest group; ties go to the smallest id.
    pub fn majority(&self) -> Option<GroupId> {
        majority_group(&self.sizes())
    }
}

pub fn majority_group(sizes: &BTreeMap<GroupId, u64>) -> Option<GroupId> {
    // BTreeMap iterates ascending, so the first maximum wins ties
    let mut best: Option<(GroupId, u64)> = None;
    for (&g, &n) in sizes {
        if best.map(|(_, bn)| n > bn).unwrap_or(true) {
            best = Some((g, n));
        }
    }
    best.map(|(g, _)| g)
}

pub fn confusion_by_group(y: &[u8], yhat: &[u8], groups: &[GroupId]) -> Result<GroupOutcomeCounts, MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() != groups.len() {
        return Err(MetricsError::LengthMismatch(y.len(), groups.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut out = GroupOutcomeCounts::default();
    for ((&t, &p), &g) in y.iter().zip(yhat).zip(groups) {
        let c = out.groups.entry(g).or_default();
        match (t != 0, p != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    BinaryPair,
    PairwiseVsMajority,
}

/// Mean absolute gap of every non-majority group against the majority.
pub fn aggregate_pairwise(
    per_group_values: &BTreeMap<GroupId, f64>,
    group_sizes: &BTreeMap<GroupId, u64>,
) -> Result<f64, MetricsError> {
    if per_group_values.len() < 2 {
        return Err(MetricsError::SingleGroup);
    }
    let reference = majority_group(group_sizes).ok_or(MetricsError::SingleGroup)?;
    aggregate_against(per_group_values, reference)
}

/// Mean absolute gap of every other group against `reference`.
pub fn aggregate_against(values: &BTreeMap<GroupId, f64>, reference: GroupId) -> Result<f64, MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::SingleGroup);
    }
    let r = *values.get(&reference).ok_or(MetricsError::UnknownReference(reference))?;
    let gaps: Vec<f64> = values.iter().filter(|(&g, _)| g != reference).map(|(_, v)| (v - r).abs()).collect();
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

fn resolve_reference(counts: &GroupOutcomeCounts, reference: Option<GroupId>) -> Result<GroupId, MetricsError> {
    if counts.groups.len() < 2 {
        return Err(MetricsError::SingleGroup);
    }
    match reference {
        Some(r) if counts.groups.contains_key(&r) => Ok(r),
        Some(r) => Err(MetricsError::UnknownReference(r)),
        None => counts.majority().ok_or(MetricsError::SingleGroup),
    }
}

fn rates(
    counts: &GroupOutcomeCounts,
    which: &'static str,
    f: impl Fn(&Confusion) -> Option<f64>,
) -> Result<BTreeMap<GroupId, f64>, MetricsError> {
    counts
        .groups
        .iter()
        .map(|(&g, c)| f(c).map(|v| (g, v)).ok_or(MetricsError::UndefinedRate { group: g, which }))
        .collect()
}

/// Demographic parity difference against an explicit or majority reference.
pub fn dpd_with(counts: &GroupOutcomeCounts, reference: Option<GroupId>) -> Result<f64, MetricsError> {
    let r = resolve_reference(counts, reference)?;
    let sel = rates(counts, "selection_rate", |c| Some(c.selection_rate()))?;
    aggregate_against(&sel, r)
}

pub fn metric_dpd(counts: &GroupOutcomeCounts) -> Result<f64, MetricsError> {
    dpd_with(counts, None)
}

/// Disparate impact ratio: protected rate over reference rate, averaged
/// over the non-reference groups when there are more than two.
pub fn dir_with(counts: &GroupOutcomeCounts, reference: Option<GroupId>) -> Result<f64, MetricsError> {
    let r = resolve_reference(counts, reference)?;
    let ref_rate = counts.groups[&r].selection_rate();
    if ref_rate <= 0.0 {
        return Err(MetricsError::ZeroReferenceRate);
    }
    let ratios: Vec<f64> = counts
        .groups
        .iter()
        .filter(|(&g, _)| g != r)
        .map(|(_, c)| c.selection_rate() / ref_rate)
        .collect();
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

pub fn metric_dir(counts: &GroupOutcomeCounts) -> Result<f64, MetricsError> {
    dir_with(counts, None)
}

/// Aggregated TPR and FPR gaps, kept separately.
pub fn odds_gaps(counts: &GroupOutcomeCounts, reference: Option<GroupId>) -> Result<(f64, f64), MetricsError> {
    let r = resolve_reference(counts, reference)?;
    let tpr = rates(counts, "tpr", Confusion::tpr)?;
    let fpr = rates(counts, "fpr", Confusion::fpr)?;
    Ok((aggregate_against(&tpr, r)?, aggregate_against(&fpr, r)?))
}

/// Equalized odds difference: the larger of the TPR and FPR gaps.
pub fn eo_with(counts: &GroupOutcomeCounts, reference: Option<GroupId>) -> Result<f64, MetricsError> {
    let (t, f) = odds_gaps(counts, reference)?;
    Ok(t.max(f))
}

pub fn metric_eo(counts: &GroupOutcomeCounts) -> Result<f64, MetricsError> {
    eo_with(counts, None)
}

pub fn eopp_with(counts: &GroupOutcomeCounts, reference: Option<GroupId>) -> Result<f64, MetricsError> {
    let r = resolve_reference(counts, reference)?;
    let tpr = rates(counts, "tpr", Confusion::tpr)?;
    aggregate_against(&tpr, r)
}

pub fn metric_eopp(counts: &GroupOutcomeCounts) -> Result<f64, MetricsError> {
    eopp_with(counts, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub selection_rate: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

/// All four fairness metrics for one set of predictions. A metric whose
/// rates are undefined is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dir: Option<f64>,
    pub dpd: f64,
    pub eo: Option<f64>,
    pub eopp: Option<f64>,
    pub tpr_gap: Option<f64>,
    pub fpr_gap: Option<f64>,
    pub reference_group: GroupId,
    pub per_group_rates: BTreeMap<GroupId, GroupRates>,
    pub aggregation: Aggregation,
}

pub fn fairness_report(counts: &GroupOutcomeCounts, reference: Option<GroupId>) -> Result<FairnessReport, MetricsError> {
    let r = resolve_reference(counts, reference)?;
    let gaps = odds_gaps(counts, Some(r)).ok();
    Ok(FairnessReport {
        dir: dir_with(counts, Some(r)).ok(),
        dpd: dpd_with(counts, Some(r))?,
        eo: gaps.map(|(t, f)| t.max(f)),
        eopp: eopp_with(counts, Some(r)).ok(),
        tpr_gap: gaps.map(|g| g.0),
        fpr_gap: gaps.map(|g| g.1),
        reference_group: r,
        per_group_rates: counts
            .groups
            .iter()
            .map(|(&g, c)| (g, GroupRates { selection_rate: c.selection_rate(), tpr: c.tpr(), fpr: c.fpr() }))
            .collect(),
        aggregation: if counts.groups.len() == 2 { Aggregation::BinaryPair } else { Aggregation::PairwiseVsMajority },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

/// Accuracy, precision, recall and F1 for the positive class. Precision or
/// recall with a zero denominator is 0. AUC is computed when `scores` are
/// given and both classes are present.
pub fn evaluate_performance(y: &[u8], yhat: &[u8], scores: Option<&[f64]>) -> Result<PerformanceReport, MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0u64, 0u64, 0u64, 0u64);
    for (&t, &p) in y.iter().zip(yhat) {
        let (t, p) = (t != 0, p != 0);
        correct += u64::from(t == p);
        tp += u64::from(t && p);
        fp += u64::from(!t && p);
        fn_ += u64::from(t && !p);
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let auc = match scores {
        Some(s) => match roc_auc(y, Some(s)) {
            Ok(a) => Some(a),
            Err(MetricsError::AucUndefined) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(PerformanceReport { accuracy: correct as f64 / y.len() as f64, precision, recall, f1, auc })
}

/// Mann-Whitney AUC with tied scores sharing their average rank.
pub fn roc_auc(y: &[u8], scores: Option<&[f64]>) -> Result<f64, MetricsError> {
    let scores = scores.ok_or(MetricsError::AucWithoutScores)?;
    if y.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(y.len(), scores.len()));
    }
    let n_pos = y.iter().filter(|&&v| v != 0).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::AucUndefined);
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if y[k] != 0 {
                pos_rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(spec: &[(GroupId, Confusion)]) -> GroupOutcomeCounts {
        GroupOutcomeCounts { groups: spec.iter().copied().collect() }
    }

    fn c(tp: u64, fp: u64, tn: u64, fn_: u64) -> Confusion {
        Confusion { tp, fp, tn, fn_ }
    }

    #[test]
    fn confusion_example() {
        let got = confusion_by_group(&[1, 0, 1], &[1, 0, 0], &[0, 0, 1]).unwrap();
        assert_eq!(got.groups[&0], c(1, 0, 1, 0));
        assert_eq!(got.groups[&1], c(0, 0, 0, 1));
        assert!(matches!(confusion_by_group(&[1], &[1, 0], &[0]), Err(MetricsError::LengthMismatch(..))));
        let single = confusion_by_group(&[1, 0, 1], &[1, 0, 1], &[4, 4, 4]).unwrap();
        assert_eq!(single.groups.len(), 1);
        assert_eq!(single.total(), 3);
        assert_eq!(single.groups[&4].fp + single.groups[&4].fn_, 0);
    }

    #[test]
    fn dpd_from_rates() {
        // 30 of 100 vs 45 of 100 selected; group 0 is larger so it is the reference
        let k = counts(&[(0, c(20, 10, 60, 10)), (1, c(30, 15, 45, 10))]);
        assert!((metric_dpd(&k).unwrap() - 0.15).abs() < 1e-12);
        let same = counts(&[(0, c(3, 0, 7, 0)), (1, c(3, 0, 7, 0))]);
        assert_eq!(metric_dpd(&same).unwrap(), 0.0);
        assert_eq!(metric_dpd(&counts(&[(0, c(1, 0, 0, 0))])), Err(MetricsError::SingleGroup));
    }

    #[test]
    fn dir_eighty_percent_rule() {
        // protected 4/10, reference 5/10 (reference is larger)
        let k = counts(&[(0, c(10, 0, 10, 0)), (1, c(4, 0, 6, 0))]);
        assert!((metric_dir(&k).unwrap() - 0.8).abs() < 1e-12);
        let eq = counts(&[(0, c(2, 0, 2, 0)), (1, c(1, 0, 1, 0))]);
        assert_eq!(metric_dir(&eq).unwrap(), 1.0);
        let zero = counts(&[(0, c(0, 0, 5, 1)), (1, c(1, 0, 1, 0))]);
        assert_eq!(metric_dir(&zero), Err(MetricsError::ZeroReferenceRate));
    }

    #[test]
    fn eo_and_eopp() {
        // TPR 0.9 vs 0.7, FPR 0.2 vs 0.2
        let k = counts(&[(0, c(9, 2, 8, 1)), (1, c(7, 2, 8, 3))]);
        assert!((metric_eo(&k).unwrap() - 0.2).abs() < 1e-12);
        assert!((metric_eopp(&k).unwrap() - 0.2).abs() < 1e-12);
        let eq = counts(&[(0, c(8, 1, 9, 2)), (1, c(8, 1, 9, 2))]);
        assert_eq!(metric_eo(&eq).unwrap(), 0.0);
        let k2 = counts(&[(0, c(9, 0, 5, 1)), (1, c(6, 0, 5, 4))]);
        assert!((metric_eopp(&k2).unwrap() - 0.3).abs() < 1e-12);
        let no_neg = counts(&[(0, c(1, 0, 0, 1)), (1, c(1, 0, 1, 0))]);
        assert!(matches!(metric_eo(&no_neg), Err(MetricsError::UndefinedRate { group: 0, which: "fpr" })));
    }

    #[test]
    fn performance_examples() {
        let y = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let yh = [1, 1, 1, 1, 0, 0, 0, 0, 0, 1];
        assert!((evaluate_performance(&y, &yh, None).unwrap().accuracy - 0.8).abs() < 1e-12);
        let r = evaluate_performance(&[1, 0], &[1, 1], None).unwrap();
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        let s = [0.9, 0.8, 0.7, 0.6, 0.55, 0.5, 0.4, 0.3, 0.2, 0.1];
        assert_eq!(roc_auc(&y, Some(&s)).unwrap(), 1.0);
        assert_eq!(roc_auc(&y, None), Err(MetricsError::AucWithoutScores));
        assert_eq!(roc_auc(&[1, 0], Some(&[0.5, 0.5])).unwrap(), 0.5);
    }

    #[test]
    fn pairwise_aggregation() {
        let vals: BTreeMap<_, _> = [(0, 0.5), (1, 0.4), (2, 0.3)].into_iter().collect();
        let sizes: BTreeMap<_, _> = [(0, 50), (1, 30), (2, 20)].into_iter().collect();
        assert!((aggregate_pairwise(&vals, &sizes).unwrap() - 0.15).abs() < 1e-12);
        let flat: BTreeMap<_, _> = [(0, 0.2), (1, 0.2), (2, 0.2)].into_iter().collect();
        assert_eq!(aggregate_pairwise(&flat, &sizes).unwrap(), 0.0);
        // size tie: smallest id is the majority
        let tie: BTreeMap<_, _> = [(3, 10), (5, 10)].into_iter().collect();
        assert_eq!(majority_group(&tie), Some(3));
    }
}
