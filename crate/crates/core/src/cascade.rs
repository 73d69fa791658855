//! The two experiments: the C_entity baseline and the enrichment cascade.
//!
//! The cascade splits each source frame (address, 1-motif, 2-motif) 70/30
//! into an A set and a B set, stratified by class. First-level classifiers
//! train on A (and are cross-validated there); their predictions on the
//! unseen B rows are grouped per owning entity, counted per class and
//! normalized to percentages. The three six-column blocks extend the
//! 7-feature entity frame to the 25-feature enriched frame that C_final is
//! cross-validated on. A and B never overlap, so no first-level training
//! row ever feeds enrichment.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::EntityId;
use crate::eval::{cross_validate, ClassMetrics, CvReport, EvalError, MetricsBundle};
use crate::features::{Feature, FeatureFrame};
use crate::ingest::{EntityClass, N_CLASSES};
use crate::ml::{derive_seed, fit_model, MlError, ModelKind};

pub const CV_FOLDS: usize = 5;
/// A-set share of each source frame.
pub const AB_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("class {class} has only {count} rows; the 70/30 split needs at least 2")]
    ClassTooSmall { class: EntityClass, count: usize },
    #[error("prediction references entity {entity} absent from the entity frame")]
    UnknownEntity { entity: EntityId },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ml(#[from] MlError),
}

/// Disjoint stratified 70/30 row split of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbSplit {
    pub a_rows: Vec<usize>,
    pub b_rows: Vec<usize>,
}

/// Stratified, seeded 70/30 split. Per class, the A side takes
/// `round(0.7 * n)` rows (clamped so both sides stay non-empty); shuffling
/// happens in the frame's canonical order, so the split is invariant under
/// a permutation of the input rows.
pub fn split_ab(frame: &FeatureFrame, seed: u64) -> Result<AbSplit, CascadeError> {
    let counts = frame.class_counts();
    for (ci, &count) in counts.iter().enumerate() {
        if count == 1 {
            return Err(CascadeError::ClassTooSmall {
                class: EntityClass::from_index(ci).unwrap(),
                count,
            });
        }
    }
    let canonical = frame.canonical_order();
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for &row in &canonical {
        by_class[frame.label(row).index()].push(row);
    }
    let mut a_rows = Vec::new();
    let mut b_rows = Vec::new();
    for (ci, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut shuffled = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ab-class", ci as u64));
        shuffled.shuffle(&mut rng);
        let n = shuffled.len();
        let n_a = ((AB_TRAIN_FRACTION * n as f64).round() as usize).clamp(1, n - 1);
        a_rows.extend_from_slice(&shuffled[..n_a]);
        b_rows.extend_from_slice(&shuffled[n_a..]);
    }
    a_rows.sort_unstable();
    b_rows.sort_unstable();
    Ok(AbSplit { a_rows, b_rows })
}

/// Per entity of the entity frame: six percentages, one per class.
///
/// For an entity with at least one prediction the six values sum to 100;
/// an entity with no prediction keeps an all-zero block (distinguishable
/// from a uniform one).
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentBlock {
    per_row: Vec<[f64; N_CLASSES]>,
}

impl EnrichmentBlock {
    pub fn row(&self, row: usize) -> &[f64; N_CLASSES] {
        &self.per_row[row]
    }

    pub fn n_rows(&self) -> usize {
        self.per_row.len()
    }
}

/// Group predictions per owning entity, count per class and normalize:
/// `100 * count(class j for entity) / count(all predictions for entity)`.
pub fn enrich(
    entity_frame: &FeatureFrame,
    predictions: &[(EntityId, EntityClass)],
) -> Result<EnrichmentBlock, CascadeError> {
    let mut row_of: HashMap<EntityId, usize> = HashMap::with_capacity(entity_frame.n_rows());
    for (row, &owner) in entity_frame.owners().iter().enumerate() {
        row_of.insert(owner, row);
    }
    let mut counts = vec![[0u64; N_CLASSES]; entity_frame.n_rows()];
    for &(entity, class) in predictions {
        let &row = row_of
            .get(&entity)
            .ok_or(CascadeError::UnknownEntity { entity })?;
        counts[row][class.index()] += 1;
    }
    let per_row = counts
        .into_iter()
        .map(|row_counts| {
            let total: u64 = row_counts.iter().sum();
            if total == 0 {
                [0.0; N_CLASSES]
            } else {
                std::array::from_fn(|j| 100.0 * row_counts[j] as f64 / total as f64)
            }
        })
        .collect();
    Ok(EnrichmentBlock { per_row })
}

/// Source frames feeding the first level of the cascade.
pub const ENRICHMENT_SOURCES: [&str; 3] = ["address", "motif1", "motif2"];

/// Append the three enrichment blocks to the entity frame, producing the
/// 25-feature enriched frame. Block columns are named `<source>_pct_<class>`.
pub fn build_enriched_frame(
    entity_frame: &FeatureFrame,
    blocks: &[&EnrichmentBlock; 3],
) -> FeatureFrame {
    let mut features = Vec::with_capacity(3 * N_CLASSES);
    let mut columns = Vec::with_capacity(3 * N_CLASSES);
    for (source, block) in ENRICHMENT_SOURCES.iter().zip(blocks) {
        assert_eq!(block.n_rows(), entity_frame.n_rows());
        for (j, class) in EntityClass::ALL.iter().enumerate() {
            features.push(Feature::numeric(&format!("{source}_pct_{}", class.name())));
            columns.push(block.per_row.iter().map(|r| r[j]).collect());
        }
    }
    entity_frame.with_columns(features, columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Baseline,
    Cascade,
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Experiment, String> {
        match s {
            "baseline" => Ok(Experiment::Baseline),
            "cascade" => Ok(Experiment::Cascade),
            other => Err(format!("unknown experiment {other:?} (expected baseline or cascade)")),
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::Baseline => "baseline",
            Experiment::Cascade => "cascade",
        })
    }
}

/// Score/std/MCC triple as reported per classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub score_pct: f64,
    pub std_pct: f64,
    pub mcc: f64,
}

impl From<&CvReport> for CvSummary {
    fn from(r: &CvReport) -> CvSummary {
        CvSummary {
            score_pct: r.mean_accuracy_pct,
            std_pct: r.std_accuracy_pct,
            mcc: r.mean_mcc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub score: f64,
}

/// Benchmark values measured on the full Bitcoin blockchain (561,620 blocks,
/// February 2019) with WalletExplorer ground truth. Desk-scale synthetic
/// runs are directional only and never reproduce these numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResults {
    pub note: String,
    pub baseline: BTreeMap<String, CvSummary>,
    pub cascade: BTreeMap<String, CvSummary>,
    /// First-level 5-fold CV accuracy (%) per model and source frame.
    pub first_level_accuracy_pct: BTreeMap<String, BTreeMap<String, f64>>,
}

pub fn reference_results() -> ReferenceResults {
    let triple = |score, std, mcc| CvSummary { score_pct: score, std_pct: std, mcc };
    let baseline = BTreeMap::from([
        ("adaboost".to_string(), triple(45.63, 6.34, 0.22)),
        ("rf".to_string(), triple(59.71, 1.82, 0.41)),
        ("gb".to_string(), triple(61.90, 1.36, 0.44)),
    ]);
    let cascade = BTreeMap::from([
        ("adaboost".to_string(), triple(78.84, 1.76, 0.76)),
        ("rf".to_string(), triple(98.04, 1.22, 0.97)),
        ("gb".to_string(), triple(99.68, 0.63, 0.99)),
    ]);
    let fl = |a, m1, m2| {
        BTreeMap::from([
            ("address".to_string(), a),
            ("motif1".to_string(), m1),
            ("motif2".to_string(), m2),
        ])
    };
    let first_level_accuracy_pct = BTreeMap::from([
        ("adaboost".to_string(), fl(61.54, 72.69, 78.27)),
        ("rf".to_string(), fl(95.73, 94.14, 90.88)),
        ("gb".to_string(), fl(83.23, 83.52, 83.54)),
    ]);
    ReferenceResults {
        note: "Reference values from the full Bitcoin blockchain (561,620 blocks, Feb 2019) \
               with WalletExplorer ground truth; desk-scale synthetic results are directional \
               and do not reproduce them."
            .to_string(),
        baseline,
        cascade,
        first_level_accuracy_pct,
    }
}

/// Everything one experiment run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub experiment: Experiment,
    pub final_model: ModelKind,
    pub first_level_model: Option<ModelKind>,
    pub seed: u64,
    pub per_fold: Vec<MetricsBundle>,
    pub averages: CvSummary,
    /// Pooled cross-fold per-class metrics, keyed by class name.
    pub per_class: BTreeMap<String, ClassMetrics>,
    /// First-level CV summaries keyed by source frame (cascade only).
    pub first_level_cv: Option<BTreeMap<String, CvSummary>>,
    /// Importances of the final model refit on the full frame, descending.
    pub importances: Vec<ImportanceEntry>,
    pub reference_full_chain: ReferenceResults,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<EvaluationReport, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn per_class_map(bundle: &MetricsBundle) -> BTreeMap<String, ClassMetrics> {
    EntityClass::ALL
        .iter()
        .map(|c| (c.name().to_string(), bundle.per_class[c.index()]))
        .collect()
}

/// Fit `kind` on the whole frame (canonical row order) and rank importances.
fn full_fit_importances(
    frame: &FeatureFrame,
    kind: ModelKind,
    seed: u64,
) -> Result<Vec<ImportanceEntry>, MlError> {
    let canonical = frame.subset(&frame.canonical_order());
    let model = fit_model(kind, &canonical, seed)?;
    Ok(model
        .feature_importance()
        .into_iter()
        .map(|(feature, score)| ImportanceEntry { feature, score })
        .collect())
}

/// First experiment: 5-fold CV of one classifier on the raw entity frame.
pub fn run_baseline(
    entity_frame: &FeatureFrame,
    kind: ModelKind,
    seed: u64,
) -> Result<EvaluationReport, CascadeError> {
    let cv = cross_validate(entity_frame, kind, CV_FOLDS, derive_seed(seed, "final-cv", 0))?;
    let importances = full_fit_importances(entity_frame, kind, derive_seed(seed, "importance-fit", 0))?;
    Ok(EvaluationReport {
        experiment: Experiment::Baseline,
        final_model: kind,
        first_level_model: None,
        seed,
        averages: CvSummary::from(&cv),
        per_class: per_class_map(&cv.pooled),
        per_fold: cv.per_fold,
        first_level_cv: None,
        importances,
        reference_full_chain: reference_results(),
    })
}

/// The four frames the cascade consumes. All must share the entity universe
/// and labels of the entity frame.
pub struct CascadeFrames<'a> {
    pub entity: &'a FeatureFrame,
    pub address: &'a FeatureFrame,
    pub motif1: &'a FeatureFrame,
    pub motif2: &'a FeatureFrame,
}

/// Second experiment: first-level classifiers on A sets, enrichment from
/// their B-set predictions, then 5-fold CV of C_final on the enriched frame.
///
/// The C_final folds derive from the same seed tag as [`run_baseline`], so
/// a baseline/cascade pair with one seed is compared on identical folds.
pub fn run_cascade(
    frames: &CascadeFrames<'_>,
    first_level_kind: ModelKind,
    final_kind: ModelKind,
    seed: u64,
) -> Result<EvaluationReport, CascadeError> {
    let sources = [frames.address, frames.motif1, frames.motif2];
    let mut first_level_cv = BTreeMap::new();
    let mut blocks = Vec::with_capacity(3);
    for (i, (name, frame)) in ENRICHMENT_SOURCES.iter().zip(sources).enumerate() {
        let split = split_ab(frame, derive_seed(seed, "ab-split", i as u64))?;
        debug_assert!(split.a_rows.iter().all(|r| split.b_rows.binary_search(r).is_err()));
        let a_frame = frame.subset(&split.a_rows);
        let b_frame = frame.subset(&split.b_rows);
        let cv = cross_validate(
            &a_frame,
            first_level_kind,
            CV_FOLDS,
            derive_seed(seed, "first-level-cv", i as u64),
        )?;
        first_level_cv.insert(name.to_string(), CvSummary::from(&cv));
        let a_canonical = a_frame.subset(&a_frame.canonical_order());
        let model = fit_model(
            first_level_kind,
            &a_canonical,
            derive_seed(seed, "first-level-fit", i as u64),
        )?;
        let predicted = model.predict(&b_frame)?;
        let predictions: Vec<(EntityId, EntityClass)> = b_frame
            .owners()
            .iter()
            .copied()
            .zip(predicted)
            .collect();
        blocks.push(enrich(frames.entity, &predictions)?);
    }
    let enriched = build_enriched_frame(frames.entity, &[&blocks[0], &blocks[1], &blocks[2]]);
    let cv = cross_validate(&enriched, final_kind, CV_FOLDS, derive_seed(seed, "final-cv", 0))?;
    let importances =
        full_fit_importances(&enriched, final_kind, derive_seed(seed, "importance-fit", 0))?;
    Ok(EvaluationReport {
        experiment: Experiment::Cascade,
        final_model: final_kind,
        first_level_model: Some(first_level_kind),
        seed,
        averages: CvSummary::from(&cv),
        per_class: per_class_map(&cv.pooled),
        per_fold: cv.per_fold,
        first_level_cv: Some(first_level_cv),
        importances,
        reference_full_chain: reference_results(),
    })
}

fn classifier_name(report: &EvaluationReport) -> &'static str {
    match report.experiment {
        Experiment::Baseline => "C_entity",
        Experiment::Cascade => "C_final",
    }
}

/// Render reports as fixed-width comparison tables: one row per
/// model/experiment, a first-level accuracy table when present, per-class
/// precision/recall/F1, the top importances and the full-chain reference.
pub fn render_reports_table(reports: &[EvaluationReport]) -> String {
    use std::fmt::Write;
    let mut out = String::new();

    writeln!(out, "{:<20} {:<10} {:>8} {:>7} {:>6}", "Model", "Classifier", "Score %", "Std %", "MCC")
        .unwrap();
    for r in reports {
        writeln!(
            out,
            "{:<20} {:<10} {:>8.2} {:>7.2} {:>6.2}",
            r.final_model.long_name(),
            classifier_name(r),
            r.averages.score_pct,
            r.averages.std_pct,
            r.averages.mcc
        )
        .unwrap();
    }

    for r in reports {
        if let Some(fl) = &r.first_level_cv {
            writeln!(
                out,
                "\nFirst-level 5-fold CV accuracy ({} on A sets):",
                r.first_level_model.unwrap_or(r.final_model).long_name()
            )
            .unwrap();
            writeln!(
                out,
                "{:<20} {:>11} {:>11} {:>11}",
                "Model", "C_address %", "C_motif1 %", "C_motif2 %"
            )
            .unwrap();
            let get = |s: &str| fl.get(s).map(|c| c.score_pct).unwrap_or(f64::NAN);
            writeln!(
                out,
                "{:<20} {:>11.2} {:>11.2} {:>11.2}",
                r.first_level_model.unwrap_or(r.final_model).long_name(),
                get("address"),
                get("motif1"),
                get("motif2")
            )
            .unwrap();
        }
    }

    writeln!(out, "\nPer-class metrics (pooled over folds):").unwrap();
    writeln!(
        out,
        "{:<13} {:<20} {:<10} {:>9} {:>7} {:>9}",
        "Class", "Model", "Classifier", "Precision", "Recall", "F1-score"
    )
    .unwrap();
    for r in reports {
        for class in EntityClass::ALL {
            let m = &r.per_class[class.name()];
            writeln!(
                out,
                "{:<13} {:<20} {:<10} {:>9.2} {:>7.2} {:>9.2}",
                class.name(),
                r.final_model.long_name(),
                classifier_name(r),
                m.precision,
                m.recall,
                m.f1
            )
            .unwrap();
        }
    }

    for r in reports {
        if r.experiment == Experiment::Cascade {
            writeln!(out, "\nTop 15 features by importance ({}):", r.final_model.long_name())
                .unwrap();
            for entry in r.importances.iter().take(15) {
                writeln!(out, "  {:<28} {:.4}", entry.feature, entry.score).unwrap();
            }
        }
    }

    let reference = reference_results();
    writeln!(out, "\n{}", reference.note).unwrap();
    writeln!(out, "{:<20} {:<10} {:>8} {:>7} {:>6}", "Model", "Classifier", "Score %", "Std %", "MCC")
        .unwrap();
    for kind in ModelKind::ALL {
        let b = &reference.baseline[kind.flag()];
        writeln!(
            out,
            "{:<20} {:<10} {:>8.2} {:>7.2} {:>6.2}",
            kind.long_name(),
            "C_entity",
            b.score_pct,
            b.std_pct,
            b.mcc
        )
        .unwrap();
    }
    for kind in ModelKind::ALL {
        let c = &reference.cascade[kind.flag()];
        writeln!(
            out,
            "{:<20} {:<10} {:>8.2} {:>7.2} {:>6.2}",
            kind.long_name(),
            "C_final",
            c.score_pct,
            c.std_pct,
            c.mcc
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Feature;

    fn frame_with_classes(spec: &[(EntityClass, usize)]) -> FeatureFrame {
        let mut frame = FeatureFrame::new(vec![Feature::numeric("x"), Feature::numeric("y")]);
        let mut row = 0u32;
        for &(class, count) in spec {
            for i in 0..count {
                let x = class.index() as f64 * 50.0 + i as f64;
                frame.push_row(EntityId(row), class, &[x, -x]);
                row += 1;
            }
        }
        frame
    }

    #[test]
    fn ten_rows_split_seven_three() {
        let frame = frame_with_classes(&[(EntityClass::Exchange, 10)]);
        let split = split_ab(&frame, 1).unwrap();
        assert_eq!(split.a_rows.len(), 7);
        assert_eq!(split.b_rows.len(), 3);
    }

    #[test]
    fn hundred_rows_two_classes_split_35_15_each() {
        let frame =
            frame_with_classes(&[(EntityClass::Exchange, 50), (EntityClass::Mixer, 50)]);
        let split = split_ab(&frame, 9).unwrap();
        for class in [EntityClass::Exchange, EntityClass::Mixer] {
            let a = split.a_rows.iter().filter(|&&r| frame.label(r) == class).count();
            let b = split.b_rows.iter().filter(|&&r| frame.label(r) == class).count();
            assert_eq!((a, b), (35, 15));
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let frame =
            frame_with_classes(&[(EntityClass::Exchange, 23), (EntityClass::Gambling, 11)]);
        let s1 = split_ab(&frame, 42).unwrap();
        let s2 = split_ab(&frame, 42).unwrap();
        assert_eq!(s1, s2);
        let mut all = s1.a_rows.clone();
        all.extend(&s1.b_rows);
        all.sort_unstable();
        assert_eq!(all, (0..frame.n_rows()).collect::<Vec<_>>());
    }

    #[test]
    fn undersized_class_is_rejected() {
        let frame =
            frame_with_classes(&[(EntityClass::Exchange, 5), (EntityClass::Mixer, 1)]);
        assert!(matches!(
            split_ab(&frame, 0),
            Err(CascadeError::ClassTooSmall { class: EntityClass::Mixer, count: 1 })
        ));
    }

    #[test]
    fn enrichment_matches_group_by_count() {
        use EntityClass::*;
        let frame = frame_with_classes(&[(Exchange, 2)]);
        // entity 0: [Ex, Ex, Mxr, Ex] -> (75, 0, 0, 0, 25, 0)
        let predictions = vec![
            (EntityId(0), Exchange),
            (EntityId(0), Exchange),
            (EntityId(0), Mixer),
            (EntityId(0), Exchange),
            (EntityId(1), Gambling),
        ];
        let block = enrich(&frame, &predictions).unwrap();
        assert_eq!(block.row(0), &[75.0, 0.0, 0.0, 0.0, 25.0, 0.0]);
        assert_eq!(block.row(1), &[0.0, 100.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_prediction_entities_get_zero_blocks() {
        let frame = frame_with_classes(&[(EntityClass::Exchange, 2)]);
        let block = enrich(&frame, &[(EntityId(0), EntityClass::Service)]).unwrap();
        assert_eq!(block.row(1), &[0.0; N_CLASSES]);
        let sum: f64 = block.row(0).iter().sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_entities_are_rejected() {
        let frame = frame_with_classes(&[(EntityClass::Exchange, 2)]);
        assert!(matches!(
            enrich(&frame, &[(EntityId(99), EntityClass::Mixer)]),
            Err(CascadeError::UnknownEntity { entity: EntityId(99) })
        ));
    }

    #[test]
    fn enriched_frame_has_25_named_columns() {
        let entity = frame_with_classes(&[(EntityClass::Exchange, 3)]);
        // widen to the real 7-feature entity schema
        let entity = entity.with_columns(
            (0..5).map(|i| Feature::numeric(&format!("pad{i}"))).collect(),
            vec![vec![0.0; 3]; 5],
        );
        let block = enrich(&entity, &[(EntityId(0), EntityClass::Exchange)]).unwrap();
        let enriched = build_enriched_frame(&entity, &[&block, &block, &block]);
        assert_eq!(enriched.n_features(), 25);
        let names = enriched.feature_names().join(",");
        assert!(names.contains("address_pct_Exchange"));
        assert!(names.contains("motif1_pct_MiningPool"));
        assert!(names.contains("motif2_pct_Service"));
        // same rows, same order
        assert_eq!(enriched.owners(), entity.owners());
    }

    #[test]
    fn baseline_on_degenerate_single_class_frame_fails_fold_construction() {
        let frame = frame_with_classes(&[(EntityClass::Exchange, 3)]);
        match run_baseline(&frame, ModelKind::RandomForest, 0) {
            Err(CascadeError::Eval(EvalError::ClassTooSmall { .. })) => {}
            other => panic!("expected ClassTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn report_json_round_trips() {
        let frame = frame_with_classes(&[
            (EntityClass::Exchange, 8),
            (EntityClass::Mixer, 8),
            (EntityClass::Service, 8),
        ]);
        let report = run_baseline(&frame, ModelKind::GradientBoosting, 5).unwrap();
        let back = EvaluationReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert!(report.averages.score_pct > 100.0 / 6.0);
        let rendered = render_reports_table(&[report]);
        assert!(rendered.contains("C_entity"));
    }
}
