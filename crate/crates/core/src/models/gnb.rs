//! Gaussian naive Bayes, exact and with Laplace-perturbed statistics.

use serde::{Deserialize, Serialize};

use super::{check_training_data, ModelError};
use crate::dataset::EncodedMatrix;
use crate::dp::{self, CompositionRule, PrivacyAccount, PrivacyBudget};

pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNBModel {
    pub class_priors: [f64; 2],
    /// `means[c][j]`: mean of feature `j` in class `c`.
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub trained_budget: PrivacyBudget,
}

impl GaussianNBModel {
    fn log_joint(&self, c: usize, x: &[f64]) -> f64 {
        let prior = self.class_priors[c];
        let mut lp = if prior > 0.0 { prior.ln() } else { f64::NEG_INFINITY };
        for ((v, m), var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
            lp -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - m) * (v - m) / var);
        }
        lp
    }

    /// Posterior probability of class 1.
    pub fn score(&self, x: &[f64]) -> f64 {
        let l0 = self.log_joint(0, x);
        let l1 = self.log_joint(1, x);
        if l0 == f64::NEG_INFINITY && l1 == f64::NEG_INFINITY {
            return 0.5;
        }
        // sigmoid(l1 - l0) without overflow
        super::sigmoid(l1 - l0)
    }
}

/// Weighted class totals, feature sums and squared sums.
struct Sufficient {
    counts: [f64; 2],
    sums: [Vec<f64>; 2],
    squares: [Vec<f64>; 2],
}

fn sufficient(x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>) -> Sufficient {
    let p = x.n_features();
    let mut s = Sufficient { counts: [0.0; 2], sums: [vec![0.0; p], vec![0.0; p]], squares: [vec![0.0; p], vec![0.0; p]] };
    for i in 0..x.n_rows() {
        let w = weights.map_or(1.0, |w| w[i]);
        let c = usize::from(y[i].min(1));
        s.counts[c] += w;
        for (j, v) in x.row(i).iter().enumerate() {
            s.sums[c][j] += w * v;
            s.squares[c][j] += w * v * v;
        }
    }
    s
}

fn finish(s: &Sufficient, budget: PrivacyBudget) -> GaussianNBModel {
    let counts = [s.counts[0].max(0.0), s.counts[1].max(0.0)];
    let total = counts[0] + counts[1];
    let class_priors = if total > 0.0 { [counts[0] / total, counts[1] / total] } else { [0.5, 0.5] };
    let p = s.sums[0].len();
    let mut means = [vec![0.0; p], vec![0.0; p]];
    let mut variances = [vec![VARIANCE_FLOOR; p], vec![VARIANCE_FLOOR; p]];
    for c in 0..2 {
        let n = counts[c].max(1e-12);
        for j in 0..p {
            let m = s.sums[c][j] / n;
            means[c][j] = m;
            variances[c][j] = (s.squares[c][j] / n - m * m).max(VARIANCE_FLOOR);
        }
    }
    GaussianNBModel { class_priors, means, variances, trained_budget: budget }
}

/// Exact weighted sample statistics (population variance).
pub fn train_gnb(x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>) -> Result<GaussianNBModel, ModelError> {
    check_training_data(x, y, weights)?;
    Ok(finish(&sufficient(x, y, weights), PrivacyBudget::NonPrivate))
}

/// Laplace-perturbed sufficient statistics, ε split evenly across class
/// counts, feature sums and squared sums (basic composition).
///
/// Sensitivities under replace-one with weights in [0, 1]: a record leaves
/// one class and joins another, so the count vector moves by at most 2 in
/// L1; the sums by `2 * sum_j max(|lo_j|, |hi_j|)`; the squares by
/// `2 * sum_j max(lo_j^2, hi_j^2)`.
pub fn train_gnb_dp(
    x: &EncodedMatrix,
    y: &[u8],
    weights: Option<&[f64]>,
    budget: &PrivacyBudget,
    seed: u64,
) -> Result<(GaussianNBModel, PrivacyAccount), ModelError> {
    let eps = budget.epsilon().ok_or(dp::DpError::NotPrivate)?;
    let bounds = x.all_bounds().ok_or(ModelError::MissingBounds)?;
    budget.check_rows(x.n_rows().max(1))?;
    let e_counts = eps / 3.0;
    let e_sums = eps / 3.0;
    let e_squares = eps - (e_counts + e_sums);
    let s_count = 2.0;
    let s_sum = 2.0 * bounds.iter().map(|[lo, hi]| lo.abs().max(hi.abs())).sum::<f64>();
    let s_square = 2.0 * bounds.iter().map(|[lo, hi]| (lo * lo).max(hi * hi)).sum::<f64>();
    let mut account = PrivacyAccount::new(CompositionRule::Basic);
    account.record("gnb_counts", e_counts, 0.0)?;
    account.record("gnb_sums", e_sums, 0.0)?;
    account.record("gnb_squares", e_squares, 0.0)?;
    if account.total().epsilon > eps {
        return Err(ModelError::BudgetExceeded { needed: account.total().epsilon, available: eps });
    }

    check_training_data(x, y, weights)?;
    let clamped = clamp_to_bounds(x, &bounds);
    let mut s = sufficient(&clamped, y, weights);
    let mut rng = dp::stream(seed, "gnb/laplace");
    for c in 0..2 {
        s.counts[c] += dp::sample_laplace(s_count, e_counts, &mut rng)?;
    }
    for c in 0..2 {
        for j in 0..x.n_features() {
            s.sums[c][j] += noise(s_sum, e_sums, &mut rng)?;
        }
    }
    for c in 0..2 {
        for j in 0..x.n_features() {
            s.squares[c][j] += noise(s_square, e_squares, &mut rng)?;
        }
    }
    // noisy sums can push a mean outside the feature range
    let mut model = finish(&s, *budget);
    for c in 0..2 {
        for (j, [lo, hi]) in bounds.iter().enumerate() {
            model.means[c][j] = model.means[c][j].clamp(*lo, *hi);
        }
    }
    Ok((model, account))
}

fn noise<R: rand::Rng>(sensitivity: f64, eps: f64, rng: &mut R) -> Result<f64, ModelError> {
    if sensitivity == 0.0 {
        return Ok(0.0);
    }
    Ok(dp::sample_laplace(sensitivity, eps, rng)?)
}

fn clamp_to_bounds(x: &EncodedMatrix, bounds: &[[f64; 2]]) -> EncodedMatrix {
    let rows: Vec<Vec<f64>> = x
        .rows()
        .map(|r| r.iter().zip(bounds).map(|(v, [lo, hi])| v.clamp(*lo, *hi)).collect())
        .collect();
    let mut m = EncodedMatrix::from_rows(rows, x.labels.clone(), vec![0; x.n_rows()]);
    m.groups = x.groups.clone();
    m.feature_bounds = x.feature_bounds.clone();
    m.feature_names = x.feature_names.clone();
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fixture(n: usize, seed: u64) -> EncodedMatrix {
        let mut rng = dp::stream(seed, "gnb-fixture");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u8;
            let base = if c == 1 { 7.0 } else { 3.0 };
            rows.push(vec![base + rng.random_range(-2.0..2.0), 5.0 + rng.random_range(-4.0..4.0)]);
            labels.push(c);
        }
        EncodedMatrix::from_rows(rows, labels, vec![0; n]).with_bounds(vec![[0.0, 10.0]; 2])
    }

    #[test]
    fn exact_statistics() {
        let x = fixture(101, 1);
        let m = train_gnb(&x, &x.labels, None).unwrap();
        for c in 0..2u8 {
            let rows: Vec<&[f64]> = (0..x.n_rows()).filter(|&i| x.labels[i] == c).map(|i| x.row(i)).collect();
            let n = rows.len() as f64;
            assert!((m.class_priors[c as usize] - n / 101.0).abs() < 1e-12);
            for j in 0..2 {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                assert!((m.means[c as usize][j] - mean).abs() < 1e-12);
                assert!((m.variances[c as usize][j] - var).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_boundary_at_zero() {
        let x = EncodedMatrix::from_rows(vec![vec![-2.0], vec![0.0], vec![2.0], vec![0.0]], vec![0, 0, 1, 1], vec![0; 4]);
        let m = train_gnb(&x, &x.labels, None).unwrap();
        assert!((m.score(&[0.0]) - 0.5).abs() < 1e-12);
        assert!(m.score(&[0.1]) > 0.5 && m.score(&[-0.1]) < 0.5);
        assert_eq!(train_gnb(&x, &[1; 4], None), Err(ModelError::SingleClassData));
    }

    #[test]
    fn private_requires_bounds_and_spends_exactly() {
        let b = PrivacyBudget::new(1.0, 0.0).unwrap();
        let unbounded = EncodedMatrix::from_rows(vec![vec![0.0], vec![1.0]], vec![0, 1], vec![0, 0]);
        assert_eq!(train_gnb_dp(&unbounded, &[0, 1], None, &b, 1).unwrap_err(), ModelError::MissingBounds);
        let x = fixture(100, 2);
        for eps in [0.1, 0.3, 1.0, 7.0] {
            let b = PrivacyBudget::new(eps, 0.0).unwrap();
            let (_, acct) = train_gnb_dp(&x, &x.labels, None, &b, 3).unwrap();
            assert_eq!(acct.total().epsilon, eps);
            assert_eq!(acct.ledger().len(), 3);
        }
    }

    #[test]
    fn large_epsilon_close_to_exact() {
        let x = fixture(1000, 4);
        let exact = train_gnb(&x, &x.labels, None).unwrap();
        let b = PrivacyBudget::new(100.0, 0.0).unwrap();
        let (noisy, _) = train_gnb_dp(&x, &x.labels, None, &b, 5).unwrap();
        for c in 0..2 {
            assert!((noisy.class_priors[c] - exact.class_priors[c]).abs() / exact.class_priors[c] < 0.01);
            for j in 0..2 {
                assert!((noisy.means[c][j] - exact.means[c][j]).abs() / exact.means[c][j] < 0.01);
            }
        }
    }
}
