//! Random forest: bagged CART trees with per-node feature subsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{ClassTree, TreeConfig};
use super::{derive_seed, RF_TREES};

/// Train the forest members. Tree `i` draws a bootstrap sample (as row
/// weights) and examines `floor(sqrt(d))` features per node, growing without
/// a depth limit. Per-tree seeds derive from the master seed by index, so
/// parallel training yields exactly the sequential result.
pub(super) fn fit_forest_trees(
    columns: &[Vec<f64>],
    labels: &[usize],
    seed: u64,
) -> Vec<ClassTree> {
    let n = labels.len();
    let d = columns.len();
    let m = ((d as f64).sqrt().floor() as usize).max(1);
    let config = TreeConfig { features_per_split: Some(m), ..TreeConfig::default() };
    (0..RF_TREES as u64)
        .into_par_iter()
        .map(|i| {
            let mut boot_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rf-bootstrap", i));
            let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rf-split", i));
            let mut weights = vec![0.0f64; n];
            for _ in 0..n {
                weights[boot_rng.random_range(0..n)] += 1.0;
            }
            let rows: Vec<u32> =
                (0..n as u32).filter(|&r| weights[r as usize] > 0.0).collect();
            ClassTree::fit(columns, labels, &weights, &rows, &config, &mut split_rng)
        })
        .collect()
}

/// Average the member leaf distributions for one sample.
pub(super) fn forest_scores(trees: &[ClassTree], value: impl Fn(usize) -> f64 + Copy) -> Vec<f64> {
    let mut scores = vec![0.0; crate::ingest::N_CLASSES];
    for tree in trees {
        for (s, p) in scores.iter_mut().zip(tree.leaf_probs(value)) {
            *s += p;
        }
    }
    for s in scores.iter_mut() {
        *s /= trees.len() as f64;
    }
    scores
}
