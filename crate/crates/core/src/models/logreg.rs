//! Logistic regression: full-batch gradient descent and DP-SGD.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_data, ModelError};
use crate::config::DpSgdConfig;
use crate::dataset::EncodedMatrix;
use crate::dp::{self, calibrate_gaussian_sigma, clip_l2_in_place, plan_gaussian_steps, PrivacyAccount, PrivacyBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained_budget: PrivacyBudget,
}

impl LinearModel {
    pub fn zeros(p: usize) -> Self {
        Self { weights: vec![0.0; p], bias: 0.0, trained_budget: PrivacyBudget::NonPrivate }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn weight_at(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

/// Weighted mean logistic loss plus `l2/2 * |w|^2` (bias unpenalized).
pub fn logistic_loss(m: &LinearModel, x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>, l2: f64) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for i in 0..x.n_rows() {
        let w = weight_at(weights, i);
        let z = m.logit(x.row(i));
        total += w * (softplus(z) - f64::from(y[i]) * z);
        wsum += w;
    }
    let reg = 0.5 * l2 * m.weights.iter().map(|v| v * v).sum::<f64>();
    total / wsum.max(f64::MIN_POSITIVE) + reg
}

/// Gradient of [`logistic_loss`]; the last entry is the bias component.
pub fn logistic_loss_gradient(m: &LinearModel, x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>, l2: f64) -> Vec<f64> {
    let p = x.n_features();
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    let (mut g, wsum) = accumulate(m, x, y, weights, &rows, None);
    let wsum = wsum.max(f64::MIN_POSITIVE);
    g.iter_mut().for_each(|v| *v /= wsum);
    for j in 0..p {
        g[j] += l2 * m.weights[j];
    }
    g
}

const CHUNK: usize = 512;

/// Sum of per-example gradients over `rows` (optionally each clipped to
/// `clip`) and the sum of their weights. Chunks are reduced in order, so the
/// result does not depend on the thread count.
fn accumulate(
    m: &LinearModel,
    x: &EncodedMatrix,
    y: &[u8],
    weights: Option<&[f64]>,
    rows: &[usize],
    clip: Option<f64>,
) -> (Vec<f64>, f64) {
    let p = x.n_features();
    let partial: Vec<(Vec<f64>, f64)> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; p + 1];
            let mut wsum = 0.0;
            for &i in chunk {
                let w = weight_at(weights, i);
                let row = x.row(i);
                let mut r = w * (sigmoid(m.logit(row)) - f64::from(y[i]));
                if let Some(c) = clip {
                    let norm = r.abs() * (row.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt();
                    if norm > c {
                        r *= c / norm;
                    }
                }
                for (gj, xj) in g.iter_mut().zip(row) {
                    *gj += r * xj;
                }
                g[p] += r;
                wsum += w;
            }
            (g, wsum)
        })
        .collect();
    let mut g = vec![0.0; p + 1];
    let mut wsum = 0.0;
    for (pg, pw) in partial {
        g.iter_mut().zip(&pg).for_each(|(a, b)| *a += b);
        wsum += pw;
    }
    (g, wsum)
}

/// Full-batch gradient descent. `epochs = 0` returns the zero model.
pub fn train_logreg(
    x: &EncodedMatrix,
    y: &[u8],
    weights: Option<&[f64]>,
    learning_rate: f64,
    epochs: usize,
    l2: f64,
) -> Result<LinearModel, ModelError> {
    check_training_data(x, y, weights)?;
    if learning_rate <= 0.0 {
        return Err(ModelError::NonPositiveParameter("learning_rate"));
    }
    let p = x.n_features();
    let mut m = LinearModel::zeros(p);
    for epoch in 0..epochs {
        let g = logistic_loss_gradient(&m, x, y, weights, l2);
        for j in 0..p {
            m.weights[j] -= learning_rate * g[j];
        }
        m.bias -= learning_rate * g[p];
        if !(m.bias.is_finite() && m.weights.iter().all(|v| v.is_finite())) {
            return Err(ModelError::NonFiniteLoss(epoch));
        }
    }
    if epochs > 0 && !logistic_loss(&m, x, y, weights, l2).is_finite() {
        return Err(ModelError::NonFiniteLoss(epochs));
    }
    Ok(m)
}

/// Per-example gradients `w_i * grad l_i` (bias last), each clipped to `clip`.
pub fn clipped_example_gradients(
    m: &LinearModel,
    x: &EncodedMatrix,
    y: &[u8],
    weights: Option<&[f64]>,
    rows: &[usize],
    clip: f64,
) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&i| {
            let row = x.row(i);
            let r = weight_at(weights, i) * (sigmoid(m.logit(row)) - f64::from(y[i]));
            let mut g: Vec<f64> = row.iter().map(|v| r * v).collect();
            g.push(r);
            clip_l2_in_place(&mut g, clip);
            g
        })
        .collect()
}

/// DP-SGD. Each step averages clipped per-example gradients over a batch of
/// `B` rows and adds Gaussian noise calibrated to the replace-one
/// sensitivity `2C/B` of that average. The per-step budget comes from
/// [`plan_gaussian_steps`]; the whole plan is checked before any row is read.
pub fn train_logreg_dp(
    x: &EncodedMatrix,
    y: &[u8],
    weights: Option<&[f64]>,
    budget: &PrivacyBudget,
    cfg: &DpSgdConfig,
    seed: u64,
) -> Result<(LinearModel, PrivacyAccount), ModelError> {
    // pre-flight: only public quantities (n, p, hyperparameters, budget)
    if cfg.clip_norm <= 0.0 {
        return Err(ModelError::NonPositiveParameter("clip_norm"));
    }
    if cfg.learning_rate <= 0.0 {
        return Err(ModelError::NonPositiveParameter("learning_rate"));
    }
    let n = x.n_rows();
    budget.check_rows(n.max(1))?;
    let eps = budget.epsilon().ok_or(dp::DpError::NotPrivate)?;
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) }.max(1);
    let steps_per_epoch = n.div_ceil(batch);
    let steps = cfg.epochs * steps_per_epoch;
    let p = x.n_features();
    let mut model = LinearModel::zeros(p);
    model.trained_budget = *budget;
    if steps == 0 {
        return Ok((model, PrivacyAccount::new(dp::CompositionRule::Basic)));
    }
    let plan = plan_gaussian_steps(budget, steps)?;
    let planned = plan.composed();
    if planned.epsilon > eps || planned.delta > budget.delta() {
        return Err(ModelError::BudgetExceeded { needed: planned.epsilon, available: eps });
    }
    let step_budget = PrivacyBudget::Private { epsilon: plan.epsilon, delta: plan.delta };
    let unit_sigma = calibrate_gaussian_sigma(1.0, &step_budget)?;

    check_training_data(x, y, weights)?;
    let mut account = PrivacyAccount::new(plan.rule);
    let mut order_rng = dp::stream(seed, "dp_sgd/batches");
    let mut noise_rng = dp::stream(seed, "dp_sgd/noise");
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(batch) {
            let b = chunk.len() as f64;
            let sigma = unit_sigma * 2.0 * cfg.clip_norm / b;
            let (mut g, _) = accumulate(&model, x, y, weights, chunk, Some(cfg.clip_norm));
            for v in g.iter_mut() {
                *v = *v / b + dp::gaussian(sigma, &mut noise_rng);
            }
            for j in 0..p {
                model.weights[j] -= cfg.learning_rate * (g[j] + cfg.l2 * model.weights[j]);
            }
            model.bias -= cfg.learning_rate * g[p];
            account.record("dp_sgd_step", plan.epsilon, plan.delta)?;
        }
        if !(model.bias.is_finite() && model.weights.iter().all(|v| v.is_finite())) {
            return Err(ModelError::NonFiniteLoss(epoch));
        }
    }
    Ok((model, account))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainingConfig;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> EncodedMatrix {
        let mut rng = dp::stream(seed, "toy");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 0.5 } else { -0.5 };
            rows.push(vec![c + rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5)]);
            labels.push(label);
        }
        EncodedMatrix::from_rows(rows, labels, vec![0; n]).with_bounds(vec![[-1.0, 1.0]; 2])
    }

    fn accuracy(m: &LinearModel, x: &EncodedMatrix) -> f64 {
        (0..x.n_rows()).filter(|&i| u8::from(m.score(x.row(i)) >= 0.5) == x.labels[i]).count() as f64 / x.n_rows() as f64
    }

    #[test]
    fn separable_toy_fits_perfectly() {
        let x = separable(20, 1);
        let m = train_logreg(&x, &x.labels, None, 1.0, 500, 0.0).unwrap();
        assert_eq!(accuracy(&m, &x), 1.0);
    }

    #[test]
    fn zero_epochs_is_zero_model() {
        let x = separable(20, 1);
        let m = train_logreg(&x, &x.labels, None, 1.0, 0, 0.0).unwrap();
        assert_eq!(m, LinearModel::zeros(2));
    }

    #[test]
    fn errors() {
        let x = separable(20, 1);
        assert!(matches!(train_logreg(&x, &x.labels[..5], None, 1.0, 1, 0.0), Err(ModelError::LengthMismatch(_))));
        assert_eq!(train_logreg(&x, &[1; 20], None, 1.0, 1, 0.0), Err(ModelError::SingleClassData));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = separable(30, 2);
        let mut rng = dp::stream(9, "fd");
        let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..1.0)).collect();
        for _ in 0..5 {
            let m = LinearModel {
                weights: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                bias: rng.random_range(-1.0..1.0),
                trained_budget: PrivacyBudget::NonPrivate,
            };
            let g = logistic_loss_gradient(&m, &x, &x.labels, Some(&w), 0.1);
            for j in 0..3 {
                let h = 1e-6;
                let mut plus = m.clone();
                let mut minus = m.clone();
                if j < 2 {
                    plus.weights[j] += h;
                    minus.weights[j] -= h;
                } else {
                    plus.bias += h;
                    minus.bias -= h;
                }
                let fd = (logistic_loss(&plus, &x, &x.labels, Some(&w), 0.1) - logistic_loss(&minus, &x, &x.labels, Some(&w), 0.1)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn clipped_gradients_bounded() {
        let x = separable(40, 3);
        let m = LinearModel { weights: vec![5.0, -5.0], bias: 3.0, trained_budget: PrivacyBudget::NonPrivate };
        let rows: Vec<usize> = (0..40).collect();
        for g in clipped_example_gradients(&m, &x, &x.labels, None, &rows, 0.1) {
            assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn dp_sgd_accurate_at_large_epsilon() {
        let cfg = TrainingConfig::default().dp_sgd;
        let train = separable(400, 4);
        let test = separable(200, 5);
        let budget = PrivacyBudget::new(10.0, 1e-5).unwrap();
        let mut mean = 0.0;
        for seed in 0..10 {
            let (m, acct) = train_logreg_dp(&train, &train.labels, None, &budget, &cfg, seed).unwrap();
            assert!(acct.total().epsilon <= 10.0);
            assert!(acct.total().delta <= 1e-5);
            mean += accuracy(&m, &test) / 10.0;
        }
        assert!(mean >= 0.9, "{mean}");
    }

    #[test]
    fn dp_sgd_deterministic_and_preflight() {
        let cfg = TrainingConfig::default().dp_sgd;
        let x = separable(100, 6);
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let a = train_logreg_dp(&x, &x.labels, None, &b, &cfg, 7).unwrap();
        let c = train_logreg_dp(&x, &x.labels, None, &b, &cfg, 7).unwrap();
        assert_eq!(a, c);
        // delta >= 1/n is refused before the labels are inspected
        let loose = PrivacyBudget::new(1.0, 0.5).unwrap();
        assert!(matches!(
            train_logreg_dp(&x, &[1; 100], None, &loose, &cfg, 7),
            Err(ModelError::Dp(dp::DpError::DeltaTooLarge { .. }))
        ));
    }
}
