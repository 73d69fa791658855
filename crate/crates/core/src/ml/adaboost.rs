//! Multiclass AdaBoost (SAMME) over depth-1 CART stumps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{argmax_tie_low, ClassTree, TreeConfig};
use super::{derive_seed, ADA_LEARNING_RATE, ADA_STAGES};
use crate::ingest::N_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub tree: ClassTree,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostMembers {
    pub stages: Vec<BoostStage>,
    /// Training class priors; prediction falls back to these if no stage
    /// was accepted (possible only when the first stump is no better than
    /// chance on perfectly balanced classes).
    pub priors: Vec<f64>,
}

/// Boost stumps with the SAMME stage weight
/// `lr * (ln((1 - err) / err) + ln(K - 1))`, stopping early on a perfect
/// stage (which is kept) or on `err >= 1 - 1/K` (which is discarded).
pub(super) fn fit_adaboost_members(
    columns: &[Vec<f64>],
    labels: &[usize],
    seed: u64,
) -> AdaBoostMembers {
    let n = labels.len();
    let mut observed = [false; N_CLASSES];
    let mut priors = vec![0.0; N_CLASSES];
    for &l in labels {
        observed[l] = true;
        priors[l] += 1.0 / n as f64;
    }
    let k = observed.iter().filter(|&&o| o).count().max(2) as f64;

    let stump_config = TreeConfig { max_depth: Some(1), ..TreeConfig::default() };
    let mut weights = vec![1.0 / n as f64; n];
    let mut stages = Vec::new();
    let rows: Vec<u32> = (0..n as u32).collect();
    for stage in 0..ADA_STAGES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ada-stage", stage));
        let tree = ClassTree::fit(columns, labels, &weights, &rows, &stump_config, &mut rng);
        let predictions: Vec<usize> = (0..n)
            .map(|r| tree.predict_class(|f| columns[f][r]))
            .collect();
        let err: f64 = predictions
            .iter()
            .zip(labels)
            .zip(&weights)
            .filter(|((p, l), _)| p != l)
            .map(|(_, &w)| w)
            .sum();
        if err <= 0.0 {
            stages.push(BoostStage { tree, weight: 1.0 });
            break;
        }
        if err >= 1.0 - 1.0 / k {
            break;
        }
        let alpha = ADA_LEARNING_RATE * (((1.0 - err) / err).ln() + (k - 1.0).ln());
        for (w, (p, l)) in weights.iter_mut().zip(predictions.iter().zip(labels)) {
            if p != l {
                *w *= alpha.exp();
            }
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        stages.push(BoostStage { tree, weight: alpha });
    }
    AdaBoostMembers { stages, priors }
}

pub(super) fn adaboost_scores(
    members: &AdaBoostMembers,
    value: impl Fn(usize) -> f64 + Copy,
) -> Vec<f64> {
    if members.stages.is_empty() {
        return members.priors.clone();
    }
    let mut scores = vec![0.0; N_CLASSES];
    for stage in &members.stages {
        scores[argmax_tie_low(stage.tree.leaf_probs(value))] += stage.weight;
    }
    scores
}
