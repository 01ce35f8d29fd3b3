//! Exponentiated-gradient reduction of constrained classification to a
//! sequence of cost-sensitive problems.
//!
//! The game: the learner minimises `L(Q, λ) = err(Q) + λ·(gap(Q) - Δ)` over
//! mixtures Q; the auditor maximises over `λ >= 0, |λ|_1 <= B`. The auditor
//! plays exponentiated gradient on `θ` with `λ = B e^θ / (1 + Σ e^θ)`; the
//! learner best-responds through the cost-sensitive oracle.
//!
//! After the game, the best iterate is picked between the uniform average of
//! the oracle outputs and the solution of the restricted linear program
//! over every hypothesis seen (plus the two constant classifiers). On the
//! non-private path the LP is refined by column generation: the oracle is
//! queried at the LP's dual multipliers until no hypothesis has negative
//! reduced cost, which certifies optimality over the whole class when the
//! oracle is exact. Private runs split the budget evenly across the T
//! oracle calls, make no further calls and return the uniform average.

use microlp::ComparisonOp;
use serde::{Deserialize, Serialize};

use super::{solve_lp, FairError, FairnessConstraint, Moments, RandomizedClassifier};
use crate::config::ReductionConfig;
use crate::dataset::EncodedMatrix;
use crate::dp::{self, CompositionRule, PrivacyAccount, PrivacyBudget};
use crate::metrics::GroupId;
use crate::models::{Learner, ModelError, PredictorHandle};

const MAX_COLUMN_ROUNDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionParams {
    pub bound: f64,
    pub eta: f64,
    pub iterations: usize,
    pub nu: f64,
    pub trim_below: f64,
}

impl From<&ReductionConfig> for ReductionParams {
    fn from(c: &ReductionConfig) -> Self {
        Self { bound: c.bound, eta: c.step_size(), iterations: c.iterations, nu: c.nu, trim_below: c.trim_below }
    }
}

impl Default for ReductionParams {
    fn default() -> Self {
        Self::from(&crate::config::TrainingConfig::default().reduction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionDiagnostics {
    pub iterations: usize,
    pub oracle_calls: usize,
    pub duality_gap: Option<f64>,
    pub max_lambda_l1: f64,
    pub train_error: f64,
    /// Largest signed moment of the returned mixture, i.e. its worst gap.
    pub train_violation: f64,
    pub no_feasible_point: bool,
    /// `"lp"` or `"average"`.
    pub best_iterate: String,
    pub trimmed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionOutcome {
    pub classifier: RandomizedClassifier,
    pub account: Option<PrivacyAccount>,
    pub diagnostics: ReductionDiagnostics,
}

/// Train the learner on signed weights: a negative weight `-w` on `(x, y)`
/// trains as `(x, 1 - y)` with weight `w`. Weights are rescaled to a
/// maximum of 1. When every weighted row carries one label the result is
/// the constant classifier for that label.
pub fn cost_sensitive_oracle(
    x: &EncodedMatrix,
    y: &[u8],
    signed_weights: &[f64],
    learner: &Learner,
    seed: u64,
) -> Result<(PredictorHandle, Option<PrivacyAccount>), FairError> {
    if signed_weights.len() != y.len() || y.len() != x.n_rows() {
        return Err(FairError::OracleFailure(ModelError::LengthMismatch(format!(
            "{} rows, {} labels, {} weights",
            x.n_rows(),
            y.len(),
            signed_weights.len()
        ))));
    }
    if signed_weights.iter().any(|w| !w.is_finite()) {
        return Err(FairError::OracleFailure(ModelError::InvalidWeights));
    }
    let max = signed_weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max == 0.0 {
        return Err(FairError::AllZeroWeights);
    }
    let labels: Vec<u8> = y.iter().zip(signed_weights).map(|(&l, &w)| if w < 0.0 { 1 - l.min(1) } else { l.min(1) }).collect();
    let weights: Vec<f64> = signed_weights.iter().map(|w| w.abs() / max).collect();
    match learner.fit(x, &labels, Some(&weights), seed) {
        Ok(f) => Ok((f.model, f.account)),
        Err(ModelError::SingleClassData) => {
            let pos: f64 = (0..labels.len()).filter(|&i| labels[i] == 1).map(|i| weights[i]).sum();
            let neg: f64 = (0..labels.len()).filter(|&i| labels[i] == 0).map(|i| weights[i]).sum();
            Ok((PredictorHandle::Constant { label: u8::from(pos > neg), width: x.n_features() }, None))
        }
        Err(e) => Err(FairError::OracleFailure(e)),
    }
}

struct Hypothesis {
    model: PredictorHandle,
    preds: Vec<f64>,
    err: f64,
    gaps: Vec<f64>,
}

struct Game<'a> {
    x: &'a EncodedMatrix,
    y: &'a [u8],
    moments: Moments,
    delta: f64,
    bound: f64,
}

impl Game<'_> {
    fn evaluate(&self, model: PredictorHandle) -> Result<Hypothesis, FairError> {
        let preds: Vec<f64> = model.predictions(self.x)?.into_iter().map(f64::from).collect();
        let (err, gaps) = self.stats(&preds);
        Ok(Hypothesis { model, preds, err, gaps })
    }

    fn stats(&self, preds: &[f64]) -> (f64, Vec<f64>) {
        let n = self.y.len() as f64;
        let err = preds.iter().zip(self.y).map(|(p, &l)| (p - f64::from(l)).abs()).sum::<f64>() / n;
        (err, self.moments.gaps(preds))
    }

    fn lagrangian(&self, err: f64, gaps: &[f64], lambda: &[f64]) -> f64 {
        err + lambda.iter().zip(gaps).map(|(l, g)| l * (g - self.delta)).sum::<f64>()
    }

    /// `err + B * max(0, worst violation)`: the auditor's best response value.
    fn penalised(&self, err: f64, gaps: &[f64]) -> f64 {
        let worst = gaps.iter().fold(f64::NEG_INFINITY, |m, g| m.max(g - self.delta));
        err + self.bound * worst.max(0.0)
    }

    /// Signed oracle weights for multipliers `lambda`: the cost of predicting
    /// 1 minus the cost of predicting 0, oriented against the true label.
    fn signed_weights(&self, lambda: &[f64]) -> Vec<f64> {
        let n = self.y.len() as f64;
        (0..self.y.len())
            .map(|i| {
                let yi = f64::from(self.y[i]);
                let mut d = (1.0 - 2.0 * yi) / n;
                for (l, a) in lambda.iter().zip(&self.moments.coefficients) {
                    d += l * a[i];
                }
                (1.0 - 2.0 * yi) * d
            })
            .collect()
    }
}

fn multipliers(theta: &[f64], bound: f64) -> Vec<f64> {
    let m = theta.iter().fold(0.0f64, |a, &t| a.max(t));
    let denom = (-m).exp() + theta.iter().map(|t| (t - m).exp()).sum::<f64>();
    theta.iter().map(|t| bound * (t - m).exp() / denom).collect()
}

fn mixture_stats(pool: &[Hypothesis], weights: &[(usize, f64)], game: &Game) -> (f64, Vec<f64>) {
    let n = game.y.len();
    let mut preds = vec![0.0; n];
    for &(k, w) in weights {
        for (p, h) in preds.iter_mut().zip(&pool[k].preds) {
            *p += w * h;
        }
    }
    game.stats(&preds)
}

/// Restricted master problem over `pool`: primal mixture and dual
/// multipliers `(λ, μ)`.
#[allow(clippy::type_complexity)]
fn restricted_lp(pool: &[Hypothesis], game: &Game) -> Result<(Vec<(usize, f64)>, Vec<f64>, f64), FairError> {
    let h = pool.len();
    let m = game.moments.len();
    // primal: variables q_0..q_h, s
    let mut c: Vec<f64> = pool.iter().map(|p| p.err).collect();
    c.push(game.bound);
    let bounds = vec![(0.0, f64::INFINITY); h + 1];
    let mut rows = Vec::new();
    for j in 0..m {
        let mut coefs: Vec<(usize, f64)> = (0..h).map(|k| (k, pool[k].gaps[j])).collect();
        coefs.push((h, -1.0));
        rows.push((coefs, ComparisonOp::Le, game.delta));
    }
    rows.push(((0..h).map(|k| (k, 1.0)).collect(), ComparisonOp::Eq, 1.0));
    let q = solve_lp(&c, &bounds, &rows)?;
    let total: f64 = q[..h].iter().map(|v| v.max(0.0)).sum();
    let weights: Vec<(usize, f64)> = (0..h).filter(|&k| q[k] > 1e-12).map(|k| (k, q[k].max(0.0) / total)).collect();

    // dual: maximise mu - Δ Σλ, i.e. minimise -mu + Δ Σλ
    let mut c = vec![game.delta; m];
    c.push(-1.0);
    let mut bounds = vec![(0.0, game.bound); m];
    bounds.push((-(game.bound + 2.0), game.bound + 2.0));
    let mut rows = Vec::new();
    for p in pool {
        let mut coefs: Vec<(usize, f64)> = (0..m).map(|j| (j, -p.gaps[j])).collect();
        coefs.push((m, 1.0));
        rows.push((coefs, ComparisonOp::Le, p.err));
    }
    rows.push(((0..m).map(|j| (j, 1.0)).collect(), ComparisonOp::Le, game.bound));
    let d = solve_lp(&c, &bounds, &rows)?;
    Ok((weights, d[..m].to_vec(), d[m]))
}

/// Run the reduction. `groups` are protected-group ids per row; the
/// reference group is the largest one in this data.
pub fn exponentiated_gradient(
    x: &EncodedMatrix,
    y: &[u8],
    groups: &[GroupId],
    learner: &Learner,
    constraint: &FairnessConstraint,
    params: &ReductionParams,
    seed: u64,
) -> Result<ReductionOutcome, FairError> {
    if params.iterations == 0 || !(params.bound > 0.0) || !(params.eta > 0.0) || !(params.nu >= 0.0) {
        return Err(FairError::InvalidParameter(format!("{params:?}")));
    }
    if !(0.0..=1.0).contains(&constraint.delta) {
        return Err(FairError::InvalidDelta(constraint.delta));
    }
    if y.len() != x.n_rows() || groups.len() != x.n_rows() {
        return Err(FairError::OracleFailure(ModelError::LengthMismatch("labels or groups".into())));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(FairError::DegenerateData);
    }
    let private = learner.is_private();
    let t_max = params.iterations;
    // private runs: even split across the T oracle calls, checked up front
    let (call_learner, mut account) = match learner.budget {
        PrivacyBudget::Private { epsilon, delta } => {
            let e = dp::even_split(epsilon, t_max);
            let d = dp::even_split(delta, t_max);
            let call = PrivacyBudget::Private { epsilon: e, delta: d };
            (learner.with_budget(call), Some(PrivacyAccount::new(CompositionRule::Basic)))
        }
        PrivacyBudget::NonPrivate => (learner.clone(), None),
    };

    let game = Game { x, y, moments: Moments::build(constraint.kind, y, groups)?, delta: constraint.delta, bound: params.bound };
    let m = game.moments.len();
    let width = x.n_features();
    let mut pool: Vec<Hypothesis> = vec![
        game.evaluate(PredictorHandle::Constant { label: 0, width })?,
        game.evaluate(PredictorHandle::Constant { label: 1, width })?,
    ];
    let mut played: Vec<usize> = Vec::new();
    let mut theta = vec![0.0; m];
    let mut lambda_sum = vec![0.0; m];
    let mut max_l1 = 0.0f64;
    let mut oracle_calls = 0;
    let mut gap_estimate = None;
    let mut call = |lambda: &[f64], label: String, pool: &mut Vec<Hypothesis>, account: &mut Option<PrivacyAccount>| -> Result<usize, FairError> {
        let w = game.signed_weights(lambda);
        oracle_calls += 1;
        let model = match cost_sensitive_oracle(x, y, &w, &call_learner, dp::derive_seed(seed, &label)) {
            Ok((model, acct)) => {
                if let (Some(total), Some(a)) = (account.as_mut(), acct.as_ref()) {
                    total.absorb(label, a).map_err(|e| FairError::OracleFailure(ModelError::Dp(e)))?;
                }
                model
            }
            // every classifier costs the same; the call is still charged
            Err(FairError::AllZeroWeights) => {
                if let (Some(total), PrivacyBudget::Private { epsilon, delta }) = (account.as_mut(), call_learner.budget) {
                    total.record(label, epsilon, delta).map_err(|e| FairError::OracleFailure(ModelError::Dp(e)))?;
                }
                PredictorHandle::Constant { label: 0, width }
            }
            Err(e) => return Err(e),
        };
        pool.push(game.evaluate(model)?);
        Ok(pool.len() - 1)
    };

    let mut t_done = 0;
    for t in 0..t_max {
        let lambda = multipliers(&theta, params.bound);
        max_l1 = max_l1.max(lambda.iter().sum());
        let k = call(&lambda, format!("eg/round{t}"), &mut pool, &mut account)?;
        played.push(k);
        for j in 0..m {
            theta[j] += params.eta * (pool[k].gaps[j] - game.delta);
            lambda_sum[j] += lambda[j];
        }
        t_done = t + 1;
        if !private {
            let avg: Vec<(usize, f64)> = played.iter().map(|&k| (k, 1.0 / played.len() as f64)).collect();
            let (err, gaps) = mixture_stats(&pool, &avg, &game);
            let lambda_bar: Vec<f64> = lambda_sum.iter().map(|l| l / t_done as f64).collect();
            let l_here = game.lagrangian(err, &gaps, &lambda_bar);
            let upper = game.penalised(err, &gaps);
            let br = call(&lambda_bar, format!("eg/best_response{t}"), &mut pool, &mut account)?;
            let lower = game.lagrangian(pool[br].err, &pool[br].gaps, &lambda_bar);
            let gap = (upper - l_here).max(l_here - lower);
            gap_estimate = Some(gap);
            if gap <= params.nu {
                break;
            }
        }
    }

    let average: Vec<(usize, f64)> = {
        let mut w = vec![0.0; pool.len()];
        for &k in &played {
            w[k] += 1.0 / played.len() as f64;
        }
        (0..pool.len()).filter(|&k| w[k] > 0.0).map(|k| (k, w[k])).collect()
    };
    let mut chosen = average.clone();
    let mut best_iterate = "average";
    if !private {
        let mut lp = restricted_lp(&pool, &game)?;
        for round in 0..MAX_COLUMN_ROUNDS {
            let (_, lambda_hat, mu_hat) = &lp;
            let lambda_hat = lambda_hat.clone();
            let k = call(&lambda_hat, format!("eg/column{round}"), &mut pool, &mut account)?;
            let reduced = pool[k].err + lambda_hat.iter().zip(&pool[k].gaps).map(|(l, g)| l * g).sum::<f64>() - mu_hat;
            if reduced >= -1e-9 {
                break;
            }
            lp = restricted_lp(&pool, &game)?;
        }
        let (e_avg, g_avg) = mixture_stats(&pool, &average, &game);
        let (e_lp, g_lp) = mixture_stats(&pool, &lp.0, &game);
        if game.penalised(e_lp, &g_lp) <= game.penalised(e_avg, &g_avg) + 1e-12 {
            chosen = lp.0;
            best_iterate = "lp";
        }
    }

    let (err, gaps) = mixture_stats(&pool, &chosen, &game);
    let violation = gaps.iter().fold(f64::NEG_INFINITY, |a, &g| a.max(g));
    // trim for compactness unless that would break the constraint
    let total_kept: f64 = chosen.iter().filter(|c| c.1 >= params.trim_below).map(|c| c.1).sum();
    let mut trimmed = false;
    if total_kept > 0.0 && chosen.iter().any(|c| c.1 < params.trim_below) {
        let cand: Vec<(usize, f64)> = chosen.iter().filter(|c| c.1 >= params.trim_below).map(|&(k, w)| (k, w / total_kept)).collect();
        let (_, g2) = mixture_stats(&pool, &cand, &game);
        let v2 = g2.iter().fold(f64::NEG_INFINITY, |a, &g| a.max(g));
        if v2 <= violation.max(game.delta) + 1e-12 {
            chosen = cand;
            trimmed = true;
        }
    }
    let (err_final, gaps_final) = if trimmed { mixture_stats(&pool, &chosen, &game) } else { (err, gaps) };
    let violation = gaps_final.iter().fold(f64::NEG_INFINITY, |a, &g| a.max(g));
    let components = chosen.iter().map(|&(k, w)| (w, pool[k].model.clone())).collect();
    Ok(ReductionOutcome {
        classifier: RandomizedClassifier::new(components),
        account,
        diagnostics: ReductionDiagnostics {
            iterations: t_done,
            oracle_calls,
            duality_gap: gap_estimate,
            max_lambda_l1: max_l1,
            train_error: err_final,
            train_violation: violation,
            no_feasible_point: violation > game.delta + params.nu,
            best_iterate: best_iterate.to_string(),
            trimmed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainingConfig;
    use crate::fair::ConstraintKind;
    use crate::models::ModelKind;

    fn stump_learner() -> Learner {
        Learner::new(ModelKind::Stump, PrivacyBudget::NonPrivate, TrainingConfig::default()).unwrap()
    }

    #[test]
    fn multipliers_stay_bounded() {
        for theta in [vec![0.0, 0.0], vec![500.0, -3.0], vec![-800.0, 700.0]] {
            let l = multipliers(&theta, 100.0);
            assert!(l.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!(l.iter().sum::<f64>() <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn oracle_flips_negative_weights() {
        let x = EncodedMatrix::from_rows(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![0, 0, 1, 1], vec![0; 4]);
        let (plain, _) = cost_sensitive_oracle(&x, &x.labels, &[1.0; 4], &stump_learner(), 1).unwrap();
        let direct = stump_learner().fit(&x, &x.labels, None, 1).unwrap().model;
        assert_eq!(plain, direct);
        let (flipped, _) = cost_sensitive_oracle(&x, &x.labels, &[-1.0; 4], &stump_learner(), 1).unwrap();
        let relabelled = stump_learner().fit(&x, &[1, 1, 0, 0], None, 1).unwrap().model;
        assert_eq!(flipped, relabelled);
        assert_eq!(cost_sensitive_oracle(&x, &x.labels, &[0.0; 4], &stump_learner(), 1).unwrap_err(), FairError::AllZeroWeights);
    }

    #[test]
    fn loose_constraint_matches_unconstrained() {
        let x = EncodedMatrix::from_rows(
            (0..8).map(|i| vec![i as f64]).collect(),
            vec![0, 0, 1, 0, 1, 1, 1, 0],
            vec![0, 1, 0, 1, 0, 1, 0, 1],
        );
        let c = FairnessConstraint::new(ConstraintKind::DemographicParity, 1.0).unwrap();
        let out = exponentiated_gradient(&x, &x.labels, &x.groups[0], &stump_learner(), &c, &ReductionParams::default(), 3).unwrap();
        let best = stump_learner().fit(&x, &x.labels, None, 0).unwrap().model;
        let base_err = best.predictions(&x).unwrap().iter().zip(&x.labels).filter(|(a, b)| a != b).count() as f64 / 8.0;
        assert!(out.diagnostics.train_error <= base_err + 1e-3);
        assert!(out.diagnostics.max_lambda_l1 <= 100.0 + 1e-9);
    }
}
