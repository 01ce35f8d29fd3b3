//! Single-feature threshold classifiers, fitted by exhaustive weighted
//! search. Used as the exact oracle on small reduction instances.

use serde::{Deserialize, Serialize};

use super::{check_training_data, ModelError, PredictorHandle};
use crate::dataset::EncodedMatrix;

/// Predicts `positive_above` when `x[feature] > threshold`, else the
/// opposite label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpModel {
    pub feature: usize,
    pub threshold: f64,
    pub positive_above: bool,
    pub width: usize,
}

impl StumpModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        let above = x[self.feature] > self.threshold;
        f64::from(u8::from(above == self.positive_above))
    }
}

/// Minimise weighted 0-1 error over every threshold (midpoints between
/// distinct values) and polarity, plus both constant classifiers.
/// Ties keep the first candidate in the order: constant 0, constant 1,
/// then features ascending, thresholds ascending, `positive_above` first.
pub fn train_stump(x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>) -> Result<PredictorHandle, ModelError> {
    if y.len() != x.n_rows() {
        return Err(ModelError::LengthMismatch(format!("{} rows, {} labels", x.n_rows(), y.len())));
    }
    if let Err(e) = check_training_data(x, y, weights) {
        if e != ModelError::SingleClassData {
            return Err(e);
        }
    }
    let n = x.n_rows();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let pos: f64 = (0..n).filter(|&i| y[i] == 1).map(w).sum();
    let neg: f64 = (0..n).filter(|&i| y[i] == 0).map(w).sum();
    let width = x.n_features();
    // error of constant 0 is the positive mass
    let (mut best_err, mut best) = if pos <= neg {
        (pos, PredictorHandle::Constant { label: 0, width })
    } else {
        (neg, PredictorHandle::Constant { label: 1, width })
    };
    let tol = 1e-12;
    for f in 0..width {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x.row(a)[f].total_cmp(&x.row(b)[f]));
        // sweep: rows at or below the threshold predicted "below"
        let mut pos_below = 0.0;
        let mut neg_below = 0.0;
        let mut k = 0;
        while k < n {
            let v = x.row(order[k])[f];
            while k < n && x.row(order[k])[f] == v {
                let i = order[k];
                if y[i] == 1 {
                    pos_below += w(i);
                } else {
                    neg_below += w(i);
                }
                k += 1;
            }
            if k == n {
                break;
            }
            let t = 0.5 * (v + x.row(order[k])[f]);
            // positive above: errors are positives below + negatives above
            let err_up = pos_below + (neg - neg_below);
            let err_down = neg_below + (pos - pos_below);
            if err_up < best_err - tol {
                best_err = err_up;
                best = PredictorHandle::Stump(StumpModel { feature: f, threshold: t, positive_above: true, width });
            }
            if err_down < best_err - tol {
                best_err = err_down;
                best = PredictorHandle::Stump(StumpModel { feature: f, threshold: t, positive_above: false, width });
            }
        }
    }
    Ok(best)
}
