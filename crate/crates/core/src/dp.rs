//! Differential-privacy primitives.
//!
//! Neighbouring datasets differ by replacing one record. Mechanisms:
//!
//! - Laplace: `Lap(0, b)` with `b = sensitivity / epsilon`, pure ε-DP.
//! - Gaussian: `N(0, σ²)` with `σ = sensitivity * sqrt(2 ln(1.25/δ)) / ε`,
//!   (ε, δ)-DP for `0 < ε <= 1`.
//! - Exponential: picks candidate `i` with probability proportional to
//!   `exp(ε u_i / (2 Δu))`.
//!
//! Every budget spent is appended to a [`PrivacyAccount`], which composes
//! its ledger under either basic or advanced composition.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Slack δ' of the advanced composition theorem.
pub const ADVANCED_DELTA_PRIME: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("parameter `{0}` must be positive and finite")]
    NonPositiveParameter(&'static str),
    #[error("delta {0} outside (0, 1)")]
    DeltaOutOfRange(f64),
    #[error("epsilon {0} above 1: the classic Gaussian bound does not hold")]
    EpsilonAboveClassicRange(f64),
    #[error("advanced composition needs identical ledger entries")]
    MixedEntriesUnderAdvanced,
    #[error("budget exceeded: need epsilon {needed}, have {available}")]
    BudgetExceeded { needed: f64, available: f64 },
    #[error("delta {delta} must be below 1/n = {limit}")]
    DeltaTooLarge { delta: f64, limit: f64 },
    #[error("a non-private budget cannot drive a private mechanism")]
    NotPrivate,
}

/// A privacy budget, or the sentinel for no privacy at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum PrivacyBudget {
    NonPrivate,
    Private { epsilon: f64, delta: f64 },
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, DpError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(DpError::NonPositiveParameter("epsilon"));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(DpError::DeltaOutOfRange(delta));
        }
        Ok(Self::Private { epsilon, delta })
    }

    /// Budget for a dataset of `n` rows with the default δ.
    pub fn for_rows(epsilon: f64, n: usize) -> Result<Self, DpError> {
        Self::new(epsilon, default_delta(n))
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Self::NonPrivate => None,
            Self::Private { epsilon, .. } => Some(*epsilon),
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            Self::NonPrivate => 0.0,
            Self::Private { delta, .. } => *delta,
        }
    }

    pub fn is_private(&self) -> bool {
        matches!(self, Self::Private { .. })
    }

    /// δ must be smaller than 1/n for a dataset of `n` rows.
    pub fn check_rows(&self, n: usize) -> Result<(), DpError> {
        if let Self::Private { delta, .. } = *self {
            let limit = 1.0 / n as f64;
            if delta >= limit {
                return Err(DpError::DeltaTooLarge { delta, limit });
            }
        }
        Ok(())
    }
}

/// 1/(10n), capped at 1e-5 for datasets of 1e5 rows or more; always
/// below 1/n.
pub fn default_delta(n: usize) -> f64 {
    let tenth = 1.0 / (10.0 * n.max(1) as f64);
    if n >= 100_000 {
        tenth.min(1e-5)
    } else {
        tenth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionRule {
    Basic,
    /// Advanced composition over identical entries with δ' = 1e-6.
    Advanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: String,
    pub epsilon: f64,
    pub delta: f64,
}

/// Total (ε, δ) spent according to a ledger.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Spent {
    pub epsilon: f64,
    pub delta: f64,
}

/// Append-only ledger of mechanism invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccount {
    pub rule: CompositionRule,
    ledger: Vec<LedgerEntry>,
    total: Spent,
}

impl PrivacyAccount {
    pub fn new(rule: CompositionRule) -> Self {
        Self { rule, ledger: Vec::new(), total: Spent::default() }
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn total(&self) -> Spent {
        self.total
    }

    /// Append an entry and recompose.
    pub fn record(&mut self, mechanism: impl Into<String>, epsilon: f64, delta: f64) -> Result<Spent, DpError> {
        self.ledger.push(LedgerEntry { mechanism: mechanism.into(), epsilon, delta });
        match compose_budget(self) {
            Ok(t) => {
                self.total = t;
                Ok(t)
            }
            Err(e) => {
                self.ledger.pop();
                Err(e)
            }
        }
    }

    /// Fold another account in as a single entry carrying its total.
    pub fn absorb(&mut self, mechanism: impl Into<String>, other: &PrivacyAccount) -> Result<Spent, DpError> {
        let t = other.total();
        self.record(mechanism, t.epsilon, t.delta)
    }
}

/// Compose a ledger. Basic sums ε and δ; advanced, for `k` identical
/// entries, gives `ε' = sqrt(2k ln(1/δ')) ε + k ε (e^ε - 1)` and
/// `δ' + k δ`. An empty ledger costs nothing.
pub fn compose_budget(account: &PrivacyAccount) -> Result<Spent, DpError> {
    let ledger = account.ledger();
    if ledger.is_empty() {
        return Ok(Spent::default());
    }
    match account.rule {
        CompositionRule::Basic => Ok(Spent {
            epsilon: ledger.iter().map(|e| e.epsilon).sum(),
            delta: ledger.iter().map(|e| e.delta).sum(),
        }),
        CompositionRule::Advanced => {
            let first = &ledger[0];
            if ledger.iter().any(|e| e.epsilon != first.epsilon || e.delta != first.delta) {
                return Err(DpError::MixedEntriesUnderAdvanced);
            }
            Ok(advanced_composition(first.epsilon, first.delta, ledger.len()))
        }
    }
}

pub fn advanced_composition(epsilon: f64, delta: f64, k: usize) -> Spent {
    let k = k as f64;
    Spent {
        epsilon: (2.0 * k * (1.0 / ADVANCED_DELTA_PRIME).ln()).sqrt() * epsilon + k * epsilon * epsilon.exp_m1(),
        delta: k * delta + ADVANCED_DELTA_PRIME,
    }
}

fn check_positive(x: f64, name: &'static str) -> Result<(), DpError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(DpError::NonPositiveParameter(name))
    }
}

/// Draw from `Lap(0, b)`.
pub fn laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    // inverse CDF on u in (-1/2, 1/2)
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

pub fn sample_laplace<R: Rng + ?Sized>(sensitivity: f64, epsilon: f64, rng: &mut R) -> Result<f64, DpError> {
    check_positive(sensitivity, "sensitivity")?;
    check_positive(epsilon, "epsilon")?;
    Ok(laplace(sensitivity / epsilon, rng))
}

pub fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

/// Classic Gaussian-mechanism σ; valid only for `0 < ε <= 1`.
pub fn calibrate_gaussian_sigma(sensitivity: f64, budget: &PrivacyBudget) -> Result<f64, DpError> {
    let PrivacyBudget::Private { epsilon, delta } = *budget else {
        return Err(DpError::NotPrivate);
    };
    check_positive(sensitivity, "sensitivity")?;
    check_positive(epsilon, "epsilon")?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::DeltaOutOfRange(delta));
    }
    if epsilon > 1.0 {
        return Err(DpError::EpsilonAboveClassicRange(epsilon));
    }
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// `v * min(1, c / ||v||)`.
pub fn clip_l2(v: &[f64], c: f64) -> Result<Vec<f64>, DpError> {
    check_positive(c, "clip norm")?;
    let mut out = v.to_vec();
    clip_l2_in_place(&mut out, c);
    Ok(out)
}

pub fn clip_l2_in_place(v: &mut [f64], c: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > c {
        let s = c / norm;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Exponential mechanism. `epsilon` of zero (or below 1e-300) samples
/// uniformly.
pub fn exponential_mechanism<R: Rng + ?Sized>(utilities: &[f64], epsilon: f64, sensitivity: f64, rng: &mut R) -> usize {
    assert!(!utilities.is_empty(), "no candidates");
    let scale = epsilon / (2.0 * sensitivity);
    let logits: Vec<f64> = utilities.iter().map(|u| u * scale).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Stable 64-bit seed for a named stream under a master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Generator for a named stream.
pub fn stream(master: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, label))
}

/// Largest per-part ε such that `k` parts summed left to right stay within
/// `epsilon`.
pub fn even_split(epsilon: f64, k: usize) -> f64 {
    let k = k.max(1);
    let mut part = epsilon / k as f64;
    while (0..k).fold(0.0, |acc, _| acc + part) > epsilon {
        part = f64::from_bits(part.to_bits() - 1);
    }
    part
}

/// Per-step budget for an iterative mechanism run `steps` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub rule: CompositionRule,
    pub epsilon: f64,
    pub delta: f64,
    pub steps: usize,
}

impl StepPlan {
    /// What the ledger will certify once all steps are recorded.
    pub fn composed(&self) -> Spent {
        let mut acct = PrivacyAccount::new(self.rule);
        acct.ledger = (0..self.steps)
            .map(|_| LedgerEntry { mechanism: String::new(), epsilon: self.epsilon, delta: self.delta })
            .collect();
        compose_budget(&acct).expect("identical entries")
    }
}

/// Split `(ε, δ)` over `steps` Gaussian steps. Picks whichever of basic or
/// advanced composition leaves the larger per-step ε, then caps that at 1
/// so the classic Gaussian bound holds. The composed total never exceeds
/// the request.
pub fn plan_gaussian_steps(budget: &PrivacyBudget, steps: usize) -> Result<StepPlan, DpError> {
    let PrivacyBudget::Private { epsilon, delta } = *budget else {
        return Err(DpError::NotPrivate);
    };
    check_positive(epsilon, "epsilon")?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::DeltaOutOfRange(delta));
    }
    let steps = steps.max(1);
    let k = steps as f64;
    let mut best = StepPlan { rule: CompositionRule::Basic, epsilon: epsilon / k, delta: delta / k, steps };
    if delta > ADVANCED_DELTA_PRIME && steps > 1 {
        // advanced composition is increasing in the per-step epsilon
        let (mut lo, mut hi) = (0.0, epsilon);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if advanced_composition(mid, 0.0, steps).epsilon <= epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo > best.epsilon {
            best = StepPlan {
                rule: CompositionRule::Advanced,
                epsilon: lo,
                delta: (delta - ADVANCED_DELTA_PRIME) / k,
                steps,
            };
        }
    }
    best.epsilon = best.epsilon.min(1.0);
    // guard against summation rounding pushing the total over the request
    while best.composed().epsilon > epsilon || best.composed().delta > delta {
        best.epsilon *= 1.0 - 1e-12;
        best.delta *= 1.0 - 1e-12;
    }
    Ok(best)
}
