//! CART trees grown by greedy binary splitting.
//!
//! Candidate thresholds sit at midpoints between consecutive distinct sorted
//! feature values, so splits depend only on value order. Classification
//! trees minimize the weighted Gini impurity of the children; regression
//! trees minimize the summed squared error. Ties between candidate splits
//! resolve to the lowest feature index, then the lowest threshold.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::N_CLASSES;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Depth of the root is 0; `None` grows until pure.
    pub max_depth: Option<u32>,
    /// Nodes with fewer rows become leaves.
    pub min_rows_split: usize,
    /// Features drawn per node; `None` considers all.
    pub features_per_split: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> TreeConfig {
        TreeConfig { max_depth: None, min_rows_split: 2, features_per_split: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { probs: Vec<f64> },
}

/// Classification tree with per-class leaf probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    nodes: Vec<TreeNode>,
    /// Unnormalized weighted Gini decrease per feature.
    importance: Vec<f64>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn class_weights(labels: &[usize], weights: &[f64], rows: &[u32]) -> ([f64; N_CLASSES], f64) {
    let mut counts = [0.0; N_CLASSES];
    let mut total = 0.0;
    for &r in rows {
        let w = weights[r as usize];
        counts[labels[r as usize]] += w;
        total += w;
    }
    (counts, total)
}

/// Weighted Gini impurity scaled by its weight: `W * (1 - sum (c/W)^2)`.
fn weighted_gini(counts: &[f64; N_CLASSES], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|c| c * c).sum();
    total - sq / total
}

/// Draw `m` distinct feature indices, returned ascending.
fn sample_features(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..d).collect();
    for i in 0..m {
        let j = rng.random_range(i..d);
        pool.swap(i, j);
    }
    let mut chosen = pool[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Midpoint between adjacent values, nudged down if rounding lands on the
/// upper value (keeps both children non-empty under `<=` routing).
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

fn best_class_split(
    columns: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    rows: &[u32],
    features: &[usize],
    scratch: &mut Vec<(f64, u32)>,
) -> Option<SplitChoice> {
    let (counts, total) = class_weights(labels, weights, rows);
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        let col = &columns[f];
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (col[r as usize], r)));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0.0; N_CLASSES];
        let mut left_w = 0.0;
        for i in 0..scratch.len() - 1 {
            let (v, r) = scratch[i];
            let w = weights[r as usize];
            left[labels[r as usize]] += w;
            left_w += w;
            let v_next = scratch[i + 1].0;
            if v_next <= v {
                continue;
            }
            let mut right = [0.0; N_CLASSES];
            for k in 0..N_CLASSES {
                right[k] = counts[k] - left[k];
            }
            let score = weighted_gini(&left, left_w) + weighted_gini(&right, total - left_w);
            if best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(SplitChoice { feature: f, threshold: midpoint(v, v_next), score });
            }
        }
    }
    best
}

impl ClassTree {
    /// Grow a tree on the rows given, respecting per-row weights.
    pub fn fit(
        columns: &[Vec<f64>],
        labels: &[usize],
        weights: &[f64],
        rows: &[u32],
        config: &TreeConfig,
        rng: &mut ChaCha8Rng,
    ) -> ClassTree {
        let d = columns.len();
        let mut nodes = vec![TreeNode::Leaf { probs: vec![0.0; N_CLASSES] }];
        let mut importance = vec![0.0; d];
        let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(rows.len());
        let mut stack: Vec<(Vec<u32>, u32, usize)> = vec![(rows.to_vec(), 0, 0)];
        while let Some((node_rows, depth, slot)) = stack.pop() {
            let (counts, total) = class_weights(labels, weights, &node_rows);
            let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
            let depth_ok = config.max_depth.is_none_or(|d| depth < d);
            let split = if !pure && depth_ok && node_rows.len() >= config.min_rows_split {
                let features: Vec<usize> = match config.features_per_split {
                    Some(m) if m < d => sample_features(rng, d, m),
                    _ => (0..d).collect(),
                };
                best_class_split(columns, labels, weights, &node_rows, &features, &mut scratch)
            } else {
                None
            };
            match split {
                None => {
                    let probs = counts.iter().map(|c| c / total).collect();
                    nodes[slot] = TreeNode::Leaf { probs };
                }
                Some(choice) => {
                    importance[choice.feature] += weighted_gini(&counts, total) - choice.score;
                    let col = &columns[choice.feature];
                    let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = node_rows
                        .iter()
                        .partition(|&&r| col[r as usize] <= choice.threshold);
                    debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());
                    let left = nodes.len() as u32;
                    nodes.push(TreeNode::Leaf { probs: vec![0.0; N_CLASSES] });
                    let right = nodes.len() as u32;
                    nodes.push(TreeNode::Leaf { probs: vec![0.0; N_CLASSES] });
                    nodes[slot] = TreeNode::Split {
                        feature: choice.feature,
                        threshold: choice.threshold,
                        left,
                        right,
                    };
                    stack.push((right_rows, depth + 1, right as usize));
                    stack.push((left_rows, depth + 1, left as usize));
                }
            }
        }
        ClassTree { nodes, importance }
    }

    /// Route one sample to its leaf; `value(feature)` supplies the inputs.
    pub fn leaf_probs(&self, value: impl Fn(usize) -> f64) -> &[f64] {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if value(*feature) <= *threshold { *left as usize } else { *right as usize };
                }
                TreeNode::Leaf { probs } => return probs,
            }
        }
    }

    pub fn predict_class(&self, value: impl Fn(usize) -> f64) -> usize {
        argmax_tie_low(self.leaf_probs(value))
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }
}

/// Highest score wins; ties go to the lowest index.
pub fn argmax_tie_low(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegNode {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64 },
}

/// How a regression leaf turns its rows into a value: `factor * sum(target)
/// / sum(denom)` when a denominator column is given (a Newton step), else
/// the plain mean.
pub struct LeafRule<'a> {
    pub factor: f64,
    pub denom: Option<&'a [f64]>,
}

/// Regression tree splitting on squared-error reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<RegNode>,
    /// Unnormalized squared-error gain per feature.
    importance: Vec<f64>,
}

struct RegStats {
    sum: f64,
    sum_sq: f64,
    n: f64,
}

impl RegStats {
    fn of(targets: &[f64], rows: &[u32]) -> RegStats {
        let mut s = RegStats { sum: 0.0, sum_sq: 0.0, n: 0.0 };
        for &r in rows {
            let y = targets[r as usize];
            s.sum += y;
            s.sum_sq += y * y;
            s.n += 1.0;
        }
        s
    }

    fn sse(&self) -> f64 {
        (self.sum_sq - self.sum * self.sum / self.n).max(0.0)
    }
}

fn best_reg_split(
    columns: &[Vec<f64>],
    targets: &[f64],
    rows: &[u32],
    features: &[usize],
    scratch: &mut Vec<(f64, u32)>,
) -> Option<SplitChoice> {
    let total = RegStats::of(targets, rows);
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        let col = &columns[f];
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (col[r as usize], r)));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let mut left_n = 0.0;
        for i in 0..scratch.len() - 1 {
            let (v, r) = scratch[i];
            let y = targets[r as usize];
            left_sum += y;
            left_sq += y * y;
            left_n += 1.0;
            let v_next = scratch[i + 1].0;
            if v_next <= v {
                continue;
            }
            let right_sum = total.sum - left_sum;
            let right_sq = total.sum_sq - left_sq;
            let right_n = total.n - left_n;
            let score = (left_sq - left_sum * left_sum / left_n).max(0.0)
                + (right_sq - right_sum * right_sum / right_n).max(0.0);
            if best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(SplitChoice { feature: f, threshold: midpoint(v, v_next), score });
            }
        }
    }
    best
}

impl RegressionTree {
    pub fn fit(
        columns: &[Vec<f64>],
        targets: &[f64],
        rows: &[u32],
        config: &TreeConfig,
        leaf: &LeafRule<'_>,
    ) -> RegressionTree {
        let d = columns.len();
        let mut nodes = vec![RegNode::Leaf { value: 0.0 }];
        let mut importance = vec![0.0; d];
        let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(rows.len());
        let features: Vec<usize> = (0..d).collect();
        let mut stack: Vec<(Vec<u32>, u32, usize)> = vec![(rows.to_vec(), 0, 0)];
        while let Some((node_rows, depth, slot)) = stack.pop() {
            let stats = RegStats::of(targets, &node_rows);
            let depth_ok = config.max_depth.is_none_or(|d| depth < d);
            let split = if depth_ok
                && node_rows.len() >= config.min_rows_split
                && stats.sse() > 1e-24
            {
                best_reg_split(columns, targets, &node_rows, &features, &mut scratch)
            } else {
                None
            };
            match split {
                None => {
                    let value = match leaf.denom {
                        None => stats.sum / stats.n,
                        Some(denom) => {
                            let den: f64 =
                                node_rows.iter().map(|&r| denom[r as usize]).sum();
                            if den.abs() < 1e-150 {
                                0.0
                            } else {
                                leaf.factor * stats.sum / den
                            }
                        }
                    };
                    nodes[slot] = RegNode::Leaf { value };
                }
                Some(choice) => {
                    importance[choice.feature] += stats.sse() - choice.score;
                    let col = &columns[choice.feature];
                    let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = node_rows
                        .iter()
                        .partition(|&&r| col[r as usize] <= choice.threshold);
                    debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());
                    let left = nodes.len() as u32;
                    nodes.push(RegNode::Leaf { value: 0.0 });
                    let right = nodes.len() as u32;
                    nodes.push(RegNode::Leaf { value: 0.0 });
                    nodes[slot] = RegNode::Split {
                        feature: choice.feature,
                        threshold: choice.threshold,
                        left,
                        right,
                    };
                    stack.push((right_rows, depth + 1, right as usize));
                    stack.push((left_rows, depth + 1, left as usize));
                }
            }
        }
        RegressionTree { nodes, importance }
    }

    pub fn predict(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                RegNode::Split { feature, threshold, left, right } => {
                    node = if value(*feature) <= *threshold { *left as usize } else { *right as usize };
                }
                RegNode::Leaf { value } => return *value,
            }
        }
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn uniform_weights(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn single_class_gives_single_leaf() {
        let columns = vec![vec![1.0, 2.0, 3.0]];
        let labels = vec![4usize, 4, 4];
        let tree = ClassTree::fit(
            &columns,
            &labels,
            &uniform_weights(3),
            &[0, 1, 2],
            &TreeConfig::default(),
            &mut rng(),
        );
        assert_eq!(tree.n_nodes(), 1);
        let probs = tree.leaf_probs(|f| columns[f][0]);
        assert_eq!(probs[4], 1.0);
    }

    #[test]
    fn two_point_frame_splits_at_midpoint() {
        let columns = vec![vec![0.0, 1.0]];
        let labels = vec![0usize, 1];
        let tree = ClassTree::fit(
            &columns,
            &labels,
            &uniform_weights(2),
            &[0, 1],
            &TreeConfig::default(),
            &mut rng(),
        );
        match tree.root() {
            TreeNode::Split { feature: 0, threshold, .. } => assert_eq!(*threshold, 0.5),
            other => panic!("expected a root split, got {other:?}"),
        }
        assert_eq!(tree.predict_class(|_| 0.2), 0);
        assert_eq!(tree.predict_class(|_| 0.9), 1);
    }

    /// Exhaustive oracle: evaluate every (feature, midpoint) pair directly.
    fn oracle_root_split(
        columns: &[Vec<f64>],
        labels: &[usize],
        weights: &[f64],
    ) -> (usize, f64, f64) {
        let rows: Vec<u32> = (0..labels.len() as u32).collect();
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..columns.len() {
            let mut values: Vec<f64> = columns[f].clone();
            values.sort_unstable_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let thr = midpoint(w[0], w[1]);
                let mut left = [0.0; N_CLASSES];
                let mut right = [0.0; N_CLASSES];
                let (mut lw, mut rw) = (0.0, 0.0);
                for &r in &rows {
                    let wgt = weights[r as usize];
                    if columns[f][r as usize] <= thr {
                        left[labels[r as usize]] += wgt;
                        lw += wgt;
                    } else {
                        right[labels[r as usize]] += wgt;
                        rw += wgt;
                    }
                }
                let score = weighted_gini(&left, lw) + weighted_gini(&right, rw);
                if best.is_none_or(|(_, _, s)| score < s) {
                    best = Some((f, thr, score));
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn root_split_matches_exhaustive_gini_oracle() {
        // fixed 8-row, 2-feature fixture: feature 1 carries the cleaner split
        let columns = vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            vec![0.1, 0.2, 0.3, 0.4, 9.1, 9.2, 9.3, 0.5],
        ];
        let labels = vec![0usize, 0, 0, 1, 1, 1, 1, 0];
        let weights = uniform_weights(8);
        let tree = ClassTree::fit(
            &columns,
            &labels,
            &weights,
            &[0, 1, 2, 3, 4, 5, 6, 7],
            &TreeConfig::default(),
            &mut rng(),
        );
        let (of, othr, _) = oracle_root_split(&columns, &labels, &weights);
        match tree.root() {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, of);
                assert_eq!(*threshold, othr);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn weighted_rows_shift_the_split() {
        // same points, but weights make the minority side dominate
        let columns = vec![vec![0.0, 1.0, 2.0, 3.0]];
        let labels = vec![0usize, 0, 1, 0];
        let weights = vec![1.0, 1.0, 10.0, 0.001];
        let tree = ClassTree::fit(
            &columns,
            &labels,
            &weights,
            &[0, 1, 2, 3],
            &TreeConfig::default(),
            &mut rng(),
        );
        let (of, othr, _) = oracle_root_split(&columns, &labels, &weights);
        match tree.root() {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!((*feature, *threshold), (of, othr));
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn max_depth_zero_is_a_prior_leaf() {
        let columns = vec![vec![0.0, 1.0, 2.0]];
        let labels = vec![0usize, 1, 1];
        let config = TreeConfig { max_depth: Some(0), ..TreeConfig::default() };
        let tree = ClassTree::fit(
            &columns,
            &labels,
            &uniform_weights(3),
            &[0, 1, 2],
            &config,
            &mut rng(),
        );
        assert_eq!(tree.n_nodes(), 1);
        assert_eq!(tree.predict_class(|_| 5.0), 1);
    }

    #[test]
    fn constant_features_cannot_split() {
        let columns = vec![vec![3.0; 6]];
        let labels = vec![0usize, 1, 0, 1, 0, 1];
        let tree = ClassTree::fit(
            &columns,
            &labels,
            &uniform_weights(6),
            &[0, 1, 2, 3, 4, 5],
            &TreeConfig::default(),
            &mut rng(),
        );
        assert_eq!(tree.n_nodes(), 1);
    }

    #[test]
    fn regression_tree_fits_step_function() {
        let columns = vec![vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]];
        let targets = vec![1.0, 1.0, 1.0, 5.0, 5.0, 5.0];
        let tree = RegressionTree::fit(
            &columns,
            &targets,
            &[0, 1, 2, 3, 4, 5],
            &TreeConfig { max_depth: Some(3), ..TreeConfig::default() },
            &LeafRule { factor: 1.0, denom: None },
        );
        assert_eq!(tree.predict(|_| 0.5), 1.0);
        assert_eq!(tree.predict(|_| 11.5), 5.0);
    }

    #[test]
    fn newton_leaf_uses_denominator() {
        let columns = vec![vec![0.0, 1.0]];
        let targets = vec![0.5, 0.5];
        let denom = vec![0.25, 0.25];
        let tree = RegressionTree::fit(
            &columns,
            &targets,
            &[0, 1],
            &TreeConfig { max_depth: Some(0), ..TreeConfig::default() },
            &LeafRule { factor: 0.5, denom: Some(&denom) },
        );
        // 0.5 * (0.5 + 0.5) / (0.25 + 0.25) = 1.0
        assert_eq!(tree.predict(|_| 0.0), 1.0);
    }
}
