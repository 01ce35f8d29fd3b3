//! Random forest, greedy (plain) or with exponential-mechanism splits and
//! Laplace leaf counts (private).
//!
//! Private budget: each tree gets ε/n_trees (trees see the same rows, so they
//! compose sequentially), split evenly over `depth` split levels plus one
//! leaf level. Nodes on one level partition the rows.
//!
//! Sensitivity of the split utility `u = -sum_children a*b/(a+b)` (a, b the
//! weighted class counts in a child, weights in [0, 1]): with
//! `f(a, b) = ab/(a+b)`, `df/da = b²/(a+b)²` and `df/db = a²/(a+b)²`, both
//! in [0, 1], so removing or adding one row moves `f` of the child it lands
//! in by at most 1. Replacing a row is one removal plus one addition, which
//! may hit two different nodes on a level, so every node mechanism is run
//! with utility sensitivity 2 and the whole level costs ε_level. The same
//! argument gives the leaf-count vector of a level an L1 sensitivity of 2.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_data, ModelError};
use crate::config::ForestConfig;
use crate::dataset::EncodedMatrix;
use crate::dp::{self, CompositionRule, PrivacyAccount, PrivacyBudget};

const UTILITY_SENSITIVITY: f64 = 2.0;
const LEAF_SENSITIVITY: f64 = 2.0;
const MIN_LEVEL_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Class counts `[negative, positive]`, clamped at zero.
    Leaf { counts: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_fraction(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => {
                    let total = counts[0] + counts[1];
                    return if total > 0.0 { counts[1] / total } else { 0.5 };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub depth: usize,
    pub width: usize,
    pub trained_budget: PrivacyBudget,
}

impl ForestModel {
    /// Mean of the leaf positive fractions.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf_fraction(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Exponential-mechanism choice among split candidates with utility
/// sensitivity 2 (see module docs).
pub fn choose_split_private<R: Rng + ?Sized>(utilities: &[f64], epsilon: f64, rng: &mut R) -> usize {
    dp::exponential_mechanism(utilities, epsilon, UTILITY_SENSITIVITY, rng)
}

fn impurity(c: [f64; 2]) -> f64 {
    let t = c[0] + c[1];
    if t > 0.0 {
        c[0] * c[1] / t
    } else {
        0.0
    }
}

/// Data-independent thresholds from a feature's bounds; binary features
/// (bounds exactly [0, 1]) get the single midpoint.
fn grid_thresholds(bounds: [f64; 2], k: usize) -> Vec<f64> {
    let [lo, hi] = bounds;
    if lo == 0.0 && hi == 1.0 {
        return vec![0.5];
    }
    (1..=k).map(|i| lo + (hi - lo) * i as f64 / (k + 1) as f64).collect()
}

fn quantile_thresholds(values: &mut [f64], k: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (1..=k)
        .map(|i| values[((values.len() - 1) * i) / (k + 1)])
        .collect();
    out.dedup();
    out
}

struct Ctx<'a> {
    x: &'a EncodedMatrix,
    y: &'a [u8],
    w: Vec<f64>,
    cfg: &'a ForestConfig,
    depth: usize,
    per_node: usize,
    private: Option<(f64, Vec<[f64; 2]>)>,
}

impl Ctx<'_> {
    fn counts(&self, rows: &[usize]) -> [f64; 2] {
        let mut c = [0.0; 2];
        for &i in rows {
            c[usize::from(self.y[i].min(1))] += self.w[i];
        }
        c
    }

    fn grow(&self, rows: Vec<usize>, level: usize, nodes: &mut Vec<Node>, rng: &mut ChaCha20Rng) -> usize {
        let at = nodes.len();
        nodes.push(Node::Leaf { counts: [0.0; 2] });
        let exact = self.counts(&rows);
        if level == self.depth {
            nodes[at] = Node::Leaf { counts: self.leaf_counts(exact, rng) };
            return at;
        }
        if self.private.is_none() && (exact[0] == 0.0 || exact[1] == 0.0 || rows.len() < 2 * self.cfg.min_leaf_rows.max(1)) {
            nodes[at] = Node::Leaf { counts: exact };
            return at;
        }
        let p = self.x.n_features();
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(rng);
        features.truncate(self.per_node);
        features.sort_unstable();

        let mut candidates = Vec::new();
        for &f in &features {
            let thresholds = match &self.private {
                Some((_, bounds)) => grid_thresholds(bounds[f], self.cfg.thresholds_per_feature),
                None => {
                    let mut vals: Vec<f64> = rows.iter().map(|&i| self.x.row(i)[f]).collect();
                    quantile_thresholds(&mut vals, self.cfg.thresholds_per_feature)
                }
            };
            for t in thresholds {
                let mut left = [0.0; 2];
                let mut right = [0.0; 2];
                for &i in &rows {
                    let c = usize::from(self.y[i].min(1));
                    if self.x.row(i)[f] <= t {
                        left[c] += self.w[i];
                    } else {
                        right[c] += self.w[i];
                    }
                }
                candidates.push((f, t, -(impurity(left) + impurity(right)), left, right));
            }
        }
        if candidates.is_empty() {
            nodes[at] = Node::Leaf { counts: self.leaf_counts(exact, rng) };
            return at;
        }
        let pick = match &self.private {
            Some((eps_level, _)) => {
                let utilities: Vec<f64> = candidates.iter().map(|c| c.2).collect();
                choose_split_private(&utilities, *eps_level, rng)
            }
            None => {
                let mut best = 0;
                for (k, c) in candidates.iter().enumerate() {
                    if c.2 > candidates[best].2 {
                        best = k;
                    }
                }
                best
            }
        };
        let (feature, threshold, _, l, r) = candidates[pick];
        if self.private.is_none() && (l[0] + l[1] == 0.0 || r[0] + r[1] == 0.0) {
            nodes[at] = Node::Leaf { counts: exact };
            return at;
        }
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x.row(i)[feature] <= threshold);
        let left = self.grow(lrows, level + 1, nodes, rng);
        let right = self.grow(rrows, level + 1, nodes, rng);
        nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }

    fn leaf_counts(&self, exact: [f64; 2], rng: &mut ChaCha20Rng) -> [f64; 2] {
        match &self.private {
            Some((eps_level, _)) => {
                let b = LEAF_SENSITIVITY / eps_level;
                [(exact[0] + dp::laplace(b, rng)).max(0.0), (exact[1] + dp::laplace(b, rng)).max(0.0)]
            }
            None => exact,
        }
    }
}

/// Train a forest. A private budget selects the noisy variant and returns
/// its account; `NonPrivate` trains bootstrapped greedy trees.
pub fn train_forest(
    x: &EncodedMatrix,
    y: &[u8],
    weights: Option<&[f64]>,
    budget: &PrivacyBudget,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<(ForestModel, Option<PrivacyAccount>), ModelError> {
    if cfg.n_trees == 0 {
        return Err(ModelError::NonPositiveParameter("n_trees"));
    }
    let depth = cfg.depth;
    let mut account = None;
    let mut private = None;
    if let PrivacyBudget::Private { epsilon, .. } = *budget {
        let levels = cfg.n_trees * (depth + 1);
        let eps_level = dp::even_split(epsilon, levels);
        if depth == 0 || eps_level < MIN_LEVEL_EPSILON {
            return Err(ModelError::DepthTooLarge { depth, per_level: eps_level });
        }
        let bounds = x.all_bounds().ok_or(ModelError::MissingBounds)?;
        let mut acct = PrivacyAccount::new(CompositionRule::Basic);
        for t in 0..cfg.n_trees {
            for l in 0..=depth {
                acct.record(format!("forest/tree{t}/level{l}"), eps_level, 0.0)?;
            }
        }
        if acct.total().epsilon > epsilon {
            return Err(ModelError::BudgetExceeded { needed: acct.total().epsilon, available: epsilon });
        }
        account = Some(acct);
        private = Some((eps_level, bounds));
    } else if depth == 0 {
        return Err(ModelError::DepthTooLarge { depth, per_level: f64::INFINITY });
    }

    check_training_data(x, y, weights)?;
    let n = x.n_rows();
    let p = x.n_features();
    let per_node = ((p as f64).sqrt().round() as usize).clamp(1, p.max(1));
    let base_w: Vec<f64> = (0..n).map(|i| weights.map_or(1.0, |w| w[i])).collect();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = dp::stream(seed, &format!("forest/tree{t}"));
        let w = if private.is_some() {
            base_w.clone()
        } else {
            // bootstrap as multiplicities
            let mut m = vec![0.0; n];
            for _ in 0..n {
                m[rng.random_range(0..n)] += 1.0;
            }
            m.iter().zip(&base_w).map(|(a, b)| a * b).collect()
        };
        let rows: Vec<usize> = if private.is_some() { (0..n).collect() } else { (0..n).filter(|&i| w[i] > 0.0).collect() };
        let ctx = Ctx { x, y, w, cfg, depth, per_node, private: private.clone() };
        let mut nodes = Vec::new();
        ctx.grow(rows, 0, &mut nodes, &mut rng);
        trees.push(Tree { nodes });
    }
    Ok((ForestModel { trees, depth, width: p, trained_budget: *budget }, account))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainingConfig;

    fn blobs(n: usize) -> EncodedMatrix {
        let mut rng = dp::stream(1, "blobs");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u8;
            let m = if c == 1 { 0.5 } else { -0.5 };
            rows.push(vec![m + rng.random_range(-0.4..0.4), rng.random_range(-1.0..1.0)]);
            labels.push(c);
        }
        EncodedMatrix::from_rows(rows, labels, vec![0; n]).with_bounds(vec![[-1.0, 1.0]; 2])
    }

    #[test]
    fn exponential_mechanism_split_frequencies() {
        let mut rng = dp::stream(2, "em");
        let hits = (0..10_000).filter(|_| choose_split_private(&[1.0, 0.0], 50.0, &mut rng) == 0).count();
        assert!(hits as f64 / 1e4 >= 0.99, "{hits}");
        let hits = (0..10_000).filter(|_| choose_split_private(&[1.0, 0.0], 1e-12, &mut rng) == 0).count();
        assert!((hits as f64 / 1e4 - 0.5).abs() <= 0.02, "{hits}");
    }

    #[test]
    fn depth_zero_rejected() {
        let x = blobs(50);
        let mut cfg = TrainingConfig::default().forest;
        cfg.depth = 0;
        let b = PrivacyBudget::new(1.0, 0.0).unwrap();
        assert!(matches!(train_forest(&x, &x.labels, None, &b, &cfg, 1), Err(ModelError::DepthTooLarge { .. })));
        assert!(matches!(train_forest(&x, &x.labels, None, &PrivacyBudget::NonPrivate, &cfg, 1), Err(ModelError::DepthTooLarge { .. })));
        cfg.depth = 40;
        let tiny = PrivacyBudget::new(0.1, 0.0).unwrap();
        assert!(matches!(train_forest(&x, &x.labels, None, &tiny, &cfg, 1), Err(ModelError::DepthTooLarge { .. })));
    }

    #[test]
    fn plain_and_private_forests_learn() {
        let x = blobs(400);
        let cfg = TrainingConfig::default().forest;
        let (plain, acct) = train_forest(&x, &x.labels, None, &PrivacyBudget::NonPrivate, &cfg, 3).unwrap();
        assert!(acct.is_none());
        let acc = |m: &ForestModel| (0..400).filter(|&i| u8::from(m.score(x.row(i)) >= 0.5) == x.labels[i]).count() as f64 / 400.0;
        assert!(acc(&plain) > 0.9);
        let b = PrivacyBudget::new(10.0, 0.0).unwrap();
        let (private, acct) = train_forest(&x, &x.labels, None, &b, &cfg, 3).unwrap();
        let acct = acct.unwrap();
        assert!(acct.total().epsilon <= 10.0);
        assert!(acc(&private) > 0.8, "{}", acc(&private));
        for t in &private.trees {
            assert!(t.depth() <= cfg.depth);
            for n in &t.nodes {
                if let Node::Leaf { counts } = n {
                    assert!(counts[0] >= 0.0 && counts[1] >= 0.0);
                }
            }
        }
        let again = train_forest(&x, &x.labels, None, &b, &cfg, 3).unwrap().0;
        assert_eq!(private, again);
    }
}
