//! Stratified K-fold cross-validation and multiclass metrics.
//!
//! Accuracy is reported as a percentage. Precision, recall and F1 are
//! per-class with a zero convention for empty denominators. The Matthews
//! correlation coefficient generalizes to K classes as
//!
//! ```text
//!         c*s - sum_k t_k p_k
//! MCC = ------------------------------------------------
//!       sqrt(s^2 - sum_k p_k^2) * sqrt(s^2 - sum_k t_k^2)
//! ```
//!
//! with `s` the sample count, `c` the correct count, `t_k` the true and
//! `p_k` the predicted occurrences of class `k`; either root degenerating to
//! zero yields MCC 0.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureFrame;
use crate::ingest::{EntityClass, N_CLASSES};
use crate::ml::{derive_seed, fit_model, MlError, ModelKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} has only {count} samples, need at least {needed}")]
    ClassTooSmall { class: EntityClass, count: usize, needed: usize },
    #[error("label vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error(transparent)]
    Ml(#[from] MlError),
}

/// K x K count matrix in canonical class order: `counts[k][l]` is the number
/// of samples of true class `k` predicted as class `l`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    pub fn record(&mut self, truth: EntityClass, predicted: EntityClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        self.counts.iter().map(|row| row[predicted]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (mine, theirs) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *mine += theirs;
        }
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(EntityClass::ALL.iter().map(|c| c.name().to_string()));
        wtr.write_record(&header)?;
        for (k, class) in EntityClass::ALL.iter().enumerate() {
            let mut record = vec![class.name().to_string()];
            record.extend(self.counts[k].iter().map(u64::to_string));
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Tally predictions against ground truth.
pub fn confusion(
    truth: &[EntityClass],
    predicted: &[EntityClass],
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { left: truth.len(), right: predicted.len() });
    }
    let mut cm = ConfusionMatrix::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub accuracy_pct: f64,
    pub per_class: [ClassMetrics; N_CLASSES],
    pub mcc: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Multiclass MCC; 0 when either square-root factor degenerates.
///
/// The moments are exact integers, so perfect and perfectly inverted
/// predictions hit the +1/-1 endpoints exactly instead of within an ulp.
pub fn matthews_correlation(cm: &ConfusionMatrix) -> f64 {
    let s: u128 = cm.total() as u128;
    let c: u128 = (0..N_CLASSES).map(|k| cm.get(k, k) as u128).sum();
    let mut tp_dot: u128 = 0;
    let mut t_sq: u128 = 0;
    let mut p_sq: u128 = 0;
    for k in 0..N_CLASSES {
        let t_k = cm.row_sum(k) as u128;
        let p_k = cm.col_sum(k) as u128;
        tp_dot += t_k * p_k;
        t_sq += t_k * t_k;
        p_sq += p_k * p_k;
    }
    let d1 = s * s - p_sq;
    let d2 = s * s - t_sq;
    if d1 == 0 || d2 == 0 {
        return 0.0;
    }
    let num = c as i128 * s as i128 - tp_dot as i128;
    if let (Some(n_sq), Some(d_prod)) = (num.unsigned_abs().checked_pow(2), d1.checked_mul(d2)) {
        if n_sq == d_prod {
            return if num >= 0 { 1.0 } else { -1.0 };
        }
    }
    (num as f64 / ((d1 as f64).sqrt() * (d2 as f64).sqrt())).clamp(-1.0, 1.0)
}

/// Accuracy, per-class precision/recall/F1 and MCC from one matrix.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsBundle, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let correct: u64 = (0..N_CLASSES).map(|k| cm.get(k, k)).sum();
    let per_class = std::array::from_fn(|k| {
        let precision = ratio(cm.get(k, k), cm.col_sum(k));
        let recall = ratio(cm.get(k, k), cm.row_sum(k));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics { precision, recall, f1 }
    });
    Ok(MetricsBundle {
        accuracy_pct: 100.0 * correct as f64 / total as f64,
        per_class,
        mcc: matthews_correlation(cm),
    })
}

/// Stratified K-fold assignment over `labels`, returned as `k` disjoint,
/// sorted index sets covering everything.
///
/// Per class, fold sizes differ by at most one; the per-class remainders are
/// handed to folds in a rotating order so total fold sizes also differ by at
/// most one. Shuffling is seeded per class.
pub fn stratified_kfold(
    labels: &[EntityClass],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    assert!(k >= 2, "need at least two folds");
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for (ci, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(EvalError::ClassTooSmall {
                class: EntityClass::from_index(ci).unwrap(),
                count: members.len(),
                needed: k,
            });
        }
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next_extra = 0usize;
    for (ci, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut shuffled = members.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, "stratified-fold", ci as u64));
        shuffled.shuffle(&mut rng);
        let base = shuffled.len() / k;
        let extra = shuffled.len() % k;
        let mut cursor = 0;
        for j in 0..k {
            let mut take = base;
            if (j + k - next_extra) % k < extra {
                take += 1;
            }
            folds[j].extend(&shuffled[cursor..cursor + take]);
            cursor += take;
        }
        next_extra = (next_extra + extra) % k;
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Averages over folds plus per-class metrics pooled across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub per_fold: Vec<MetricsBundle>,
    /// Mean of the per-fold accuracies, in percent.
    pub mean_accuracy_pct: f64,
    /// Population standard deviation of the per-fold accuracies.
    pub std_accuracy_pct: f64,
    /// Mean of the per-fold MCCs.
    pub mean_mcc: f64,
    /// Metrics of the pooled cross-fold confusion matrix; rare classes can
    /// be absent from a single fold's predictions, pooling avoids that.
    pub pooled: MetricsBundle,
    pub pooled_confusion: ConfusionMatrix,
}

/// Stratified K-fold cross-validation of one model kind on one frame.
///
/// Rows are handled in the frame's canonical order, so the report is
/// invariant under a permutation of the input rows. Folds train and
/// evaluate independently (in parallel) with per-fold derived seeds.
pub fn cross_validate(
    frame: &FeatureFrame,
    kind: ModelKind,
    k: usize,
    seed: u64,
) -> Result<CvReport, EvalError> {
    let canonical = frame.canonical_order();
    let canonical_labels: Vec<EntityClass> =
        canonical.iter().map(|&r| frame.label(r)).collect();
    let folds = stratified_kfold(&canonical_labels, k, seed)?;

    let results: Vec<Result<(MetricsBundle, ConfusionMatrix), EvalError>> = folds
        .par_iter()
        .enumerate()
        .map(|(fold_idx, test)| {
            let train: Vec<usize> = (0..canonical.len())
                .filter(|i| test.binary_search(i).is_err())
                .map(|i| canonical[i])
                .collect();
            let test_rows: Vec<usize> = test.iter().map(|&i| canonical[i]).collect();
            let train_frame = frame.subset(&train);
            let test_frame = frame.subset(&test_rows);
            let model = fit_model(
                kind,
                &train_frame,
                derive_seed(seed, "cv-model", fold_idx as u64),
            )?;
            let predictions = model.predict(&test_frame)?;
            let cm = confusion(test_frame.labels(), &predictions)?;
            Ok((metrics(&cm)?, cm))
        })
        .collect();

    let mut per_fold = Vec::with_capacity(k);
    let mut pooled_confusion = ConfusionMatrix::new();
    for r in results {
        let (bundle, cm) = r?;
        pooled_confusion.merge(&cm);
        per_fold.push(bundle);
    }
    let kf = per_fold.len() as f64;
    let mean_accuracy_pct = per_fold.iter().map(|m| m.accuracy_pct).sum::<f64>() / kf;
    let variance = per_fold
        .iter()
        .map(|m| (m.accuracy_pct - mean_accuracy_pct).powi(2))
        .sum::<f64>()
        / kf;
    let mean_mcc = per_fold.iter().map(|m| m.mcc).sum::<f64>() / kf;
    Ok(CvReport {
        per_fold,
        mean_accuracy_pct,
        std_accuracy_pct: variance.sqrt(),
        mean_mcc,
        pooled: metrics(&pooled_confusion)?,
        pooled_confusion,
    })
}
