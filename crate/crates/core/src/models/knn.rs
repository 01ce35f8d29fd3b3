//! k-nearest-neighbours baseline (no private variant).

use serde::{Deserialize, Serialize};

use super::{check_training_data, ModelError};
use crate::dataset::EncodedMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
}

impl KnnModel {
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// Indices of the `k` nearest stored rows; equal distances go to the
    /// smaller index.
    pub fn neighbours(&self, x: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Weighted positive fraction among the neighbours.
    pub fn score(&self, x: &[f64]) -> f64 {
        let nb = self.neighbours(x);
        let total: f64 = nb.iter().map(|&i| self.weights[i]).sum();
        if total == 0.0 {
            return 0.5;
        }
        nb.iter().filter(|&&i| self.labels[i] == 1).map(|&i| self.weights[i]).sum::<f64>() / total
    }
}

pub fn train_knn(x: &EncodedMatrix, y: &[u8], weights: Option<&[f64]>, k: usize) -> Result<KnnModel, ModelError> {
    check_training_data(x, y, weights)?;
    if k == 0 || k > x.n_rows() {
        return Err(ModelError::KOutOfRange { k, n: x.n_rows() });
    }
    Ok(KnnModel {
        k,
        rows: x.rows().map(|r| r.to_vec()).collect(),
        labels: y.to_vec(),
        weights: weights.map_or_else(|| vec![1.0; x.n_rows()], |w| w.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PredictorHandle;

    fn data() -> EncodedMatrix {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![10.0]];
        EncodedMatrix::from_rows(rows, vec![0, 1, 0, 1, 1], vec![0; 5])
    }

    #[test]
    fn one_nn_memorises() {
        let x = data();
        let m = PredictorHandle::Knn(train_knn(&x, &x.labels, None, 1).unwrap());
        assert_eq!(m.predictions(&x).unwrap(), x.labels);
    }

    #[test]
    fn k_equals_n_is_global_majority() {
        let x = data();
        let m = PredictorHandle::Knn(train_knn(&x, &x.labels, None, 5).unwrap());
        assert!(m.predictions(&x).unwrap().iter().all(|&p| p == 1));
    }

    #[test]
    fn even_tie_predicts_zero_and_range_checked() {
        let x = data();
        let m = PredictorHandle::Knn(train_knn(&x, &x.labels, None, 2).unwrap());
        // neighbours of 0.5 are rows 0 and 1 (equal distance, index order)
        assert_eq!(m.predict_score(&[0.5]).unwrap(), 0.5);
        assert_eq!(m.predict(&[0.5]).unwrap(), 0);
        assert_eq!(train_knn(&x, &x.labels, None, 0).unwrap_err(), ModelError::KOutOfRange { k: 0, n: 5 });
        assert_eq!(train_knn(&x, &x.labels, None, 6).unwrap_err(), ModelError::KOutOfRange { k: 6, n: 5 });
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let x = EncodedMatrix::from_rows(vec![vec![-1.0], vec![1.0]], vec![0, 1], vec![0; 2]);
        let m = train_knn(&x, &x.labels, None, 1).unwrap();
        assert_eq!(m.neighbours(&[0.0]), vec![0]);
    }
}
