//! Gradient boosting with the multinomial deviance loss.
//!
//! Scores start at the log class priors. Each stage fits one depth-limited
//! regression tree per observed class to the softmax residuals `y - p`, and
//! leaves take the Newton step `((K-1)/K) * sum(r) / sum(p (1 - p))`.

use serde::{Deserialize, Serialize};

use super::tree::{LeafRule, RegressionTree, TreeConfig};
use super::{GB_LEARNING_RATE, GB_MAX_DEPTH, GB_STAGES};
use crate::features::FeatureFrame;
use crate::ingest::EntityClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMembers {
    /// Observed classes, ascending canonical order; tree `j` of every stage
    /// boosts the score of `classes[j]`.
    pub classes: Vec<EntityClass>,
    pub init_scores: Vec<f64>,
    pub learning_rate: f64,
    pub stages: Vec<Vec<RegressionTree>>,
}

fn softmax_into(scores: &[f64], probs: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (p, &s) in probs.iter_mut().zip(scores) {
        *p = (s - max).exp();
        total += *p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
}

pub(super) fn fit_gradient_members(
    columns: &[Vec<f64>],
    labels: &[usize],
) -> GradientMembers {
    let n = labels.len();
    let mut counts = [0usize; crate::ingest::N_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    let classes: Vec<EntityClass> = EntityClass::ALL
        .iter()
        .copied()
        .filter(|c| counts[c.index()] > 0)
        .collect();
    let k = classes.len();
    let init_scores: Vec<f64> = classes
        .iter()
        .map(|c| (counts[c.index()] as f64 / n as f64).ln())
        .collect();
    if k < 2 {
        return GradientMembers {
            classes,
            init_scores: vec![0.0],
            learning_rate: GB_LEARNING_RATE,
            stages: Vec::new(),
        };
    }

    let config = TreeConfig { max_depth: Some(GB_MAX_DEPTH), ..TreeConfig::default() };
    let rows: Vec<u32> = (0..n as u32).collect();
    let mut scores: Vec<Vec<f64>> = vec![init_scores.clone(); n];
    let mut probs = vec![0.0; k];
    let mut residuals = vec![0.0; n];
    let mut hessians = vec![0.0; n];
    let mut prob_matrix: Vec<Vec<f64>> = vec![vec![0.0; k]; n];
    let factor = (k as f64 - 1.0) / k as f64;
    let mut stages = Vec::with_capacity(GB_STAGES);
    for _ in 0..GB_STAGES {
        for (row, score) in scores.iter().enumerate() {
            softmax_into(score, &mut probs);
            prob_matrix[row].copy_from_slice(&probs);
        }
        let mut stage = Vec::with_capacity(k);
        for (j, class) in classes.iter().enumerate() {
            for row in 0..n {
                let p = prob_matrix[row][j];
                let y = if labels[row] == class.index() { 1.0 } else { 0.0 };
                residuals[row] = y - p;
                hessians[row] = p * (1.0 - p);
            }
            let tree = RegressionTree::fit(
                columns,
                &residuals,
                &rows,
                &config,
                &LeafRule { factor, denom: Some(&hessians) },
            );
            for (row, score) in scores.iter_mut().enumerate() {
                score[j] += GB_LEARNING_RATE * tree.predict(|f| columns[f][row]);
            }
            stage.push(tree);
        }
        stages.push(stage);
    }
    GradientMembers { classes, init_scores, learning_rate: GB_LEARNING_RATE, stages }
}

/// Accumulated per-class scores for one sample, over the first `n_stages`
/// stages (all when `None`).
pub(super) fn gradient_scores(
    members: &GradientMembers,
    value: impl Fn(usize) -> f64 + Copy,
    n_stages: Option<usize>,
) -> Vec<f64> {
    let mut scores = members.init_scores.clone();
    let upto = n_stages.unwrap_or(members.stages.len()).min(members.stages.len());
    for stage in &members.stages[..upto] {
        for (j, tree) in stage.iter().enumerate() {
            scores[j] += members.learning_rate * tree.predict(value);
        }
    }
    scores
}

/// Training multinomial log-loss after each stage (index 0 = priors only).
/// The boosting invariant checked in tests: non-increasing on separable data.
pub fn staged_train_log_loss(members: &GradientMembers, frame: &FeatureFrame) -> Vec<f64> {
    let n = frame.n_rows();
    let k = members.classes.len();
    let mut slot = [usize::MAX; crate::ingest::N_CLASSES];
    for (j, c) in members.classes.iter().enumerate() {
        slot[c.index()] = j;
    }
    let mut probs = vec![0.0; k];
    (0..=members.stages.len())
        .map(|upto| {
            let mut loss = 0.0;
            for row in 0..n {
                let scores = gradient_scores(members, |f| frame.value(row, f), Some(upto));
                softmax_into(&scores, &mut probs);
                let j = slot[frame.label(row).index()];
                loss -= probs[j].max(1e-300).ln();
            }
            loss / n as f64
        })
        .collect()
}
