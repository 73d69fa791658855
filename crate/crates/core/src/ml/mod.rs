//! CART ensembles: random forest, AdaBoost (SAMME) and gradient boosting.
//!
//! Hyperparameters are fixed: 10 unlimited-depth trees for the forest, up to
//! 50 stump stages at learning rate 1 for AdaBoost, and 100 stages of
//! depth-3 per-class trees at learning rate 0.1 for gradient boosting.
//!
//! All randomness flows from one 64-bit seed through [`derive_seed`], a
//! domain-tagged splitmix64 chain: each consumer (bootstrap of tree `i`,
//! split sampling of tree `i`, fold `j`, ...) gets its own stream keyed by a
//! string tag and an index, never by scheduling order. Training the members
//! in parallel therefore reproduces the sequential result bit for bit.

mod adaboost;
mod forest;
mod gradient;
mod tree;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adaboost::{AdaBoostMembers, BoostStage};
pub use gradient::{staged_train_log_loss, GradientMembers};
pub use tree::{argmax_tie_low, ClassTree, LeafRule, RegNode, RegressionTree, TreeConfig, TreeNode};

use crate::features::FeatureFrame;
use crate::ingest::EntityClass;

pub const RF_TREES: usize = 10;
pub const ADA_STAGES: usize = 50;
pub const ADA_LEARNING_RATE: f64 = 1.0;
pub const GB_STAGES: usize = 100;
pub const GB_LEARNING_RATE: f64 = 0.1;
pub const GB_MAX_DEPTH: u32 = 3;

const MODEL_FORMAT: &str = "cascade-ensemble/v1";

#[derive(Debug, Error)]
pub enum MlError {
    #[error("cannot fit a model on an empty frame")]
    EmptyFrame,
    #[error("frame schema {found:?} does not match the model's {expected:?}")]
    SchemaMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("bad model document: {0}")]
    BadFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "adaboost")]
    AdaBoost,
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "gb")]
    GradientBoosting,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] =
        [ModelKind::AdaBoost, ModelKind::RandomForest, ModelKind::GradientBoosting];

    /// Short flag name, as used on the command line and in reports.
    pub fn flag(self) -> &'static str {
        match self {
            ModelKind::AdaBoost => "adaboost",
            ModelKind::RandomForest => "rf",
            ModelKind::GradientBoosting => "gb",
        }
    }

    /// Human-readable name for rendered tables.
    pub fn long_name(self) -> &'static str {
        match self {
            ModelKind::AdaBoost => "Adaboost",
            ModelKind::RandomForest => "Random Forest",
            ModelKind::GradientBoosting => "Gradient Boosting",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<ModelKind, String> {
        match s {
            "adaboost" => Ok(ModelKind::AdaBoost),
            "rf" => Ok(ModelKind::RandomForest),
            "gb" => Ok(ModelKind::GradientBoosting),
            other => Err(format!("unknown model kind {other:?} (expected adaboost, rf or gb)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.flag())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed from `(master, domain, index)`.
///
/// The domain tag is folded byte-wise through splitmix64, then the index is
/// mixed in; equal masters with different tags or indices give unrelated
/// streams, and the mapping is identical on every platform.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut state = splitmix64(master);
    for &byte in domain.as_bytes() {
        state = splitmix64(state ^ u64::from(byte));
    }
    splitmix64(state ^ index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ModelPayload {
    Forest { trees: Vec<ClassTree> },
    AdaBoost(AdaBoostMembers),
    Gradient(GradientMembers),
}

/// A trained ensemble: members, hyperparameter record (the kind), the seed
/// it was trained with and the schema it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: ModelKind,
    pub seed: u64,
    pub feature_names: Vec<String>,
    payload: ModelPayload,
}

fn frame_labels(frame: &FeatureFrame) -> Vec<usize> {
    frame.labels().iter().map(|l| l.index()).collect()
}

fn check_not_empty(frame: &FeatureFrame) -> Result<(), MlError> {
    if frame.n_rows() == 0 || frame.n_features() == 0 {
        Err(MlError::EmptyFrame)
    } else {
        Ok(())
    }
}

fn schema_of(frame: &FeatureFrame) -> Vec<String> {
    frame.feature_names().into_iter().map(str::to_string).collect()
}

/// Grow a single CART tree on the frame. Exposed mostly for diagnostics and
/// tests; the ensembles call the tree layer directly.
pub fn fit_tree(
    frame: &FeatureFrame,
    row_weights: &[f64],
    config: &TreeConfig,
    seed: u64,
) -> Result<ClassTree, MlError> {
    check_not_empty(frame)?;
    assert_eq!(row_weights.len(), frame.n_rows());
    let labels = frame_labels(frame);
    let rows: Vec<u32> = (0..frame.n_rows() as u32)
        .filter(|&r| row_weights[r as usize] > 0.0)
        .collect();
    if rows.is_empty() {
        return Err(MlError::EmptyFrame);
    }
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, "single-tree", 0));
    Ok(ClassTree::fit(frame.columns(), &labels, row_weights, &rows, config, &mut rng))
}

pub fn fit_random_forest(frame: &FeatureFrame, seed: u64) -> Result<EnsembleModel, MlError> {
    check_not_empty(frame)?;
    let labels = frame_labels(frame);
    let trees = forest::fit_forest_trees(frame.columns(), &labels, seed);
    Ok(EnsembleModel {
        kind: ModelKind::RandomForest,
        seed,
        feature_names: schema_of(frame),
        payload: ModelPayload::Forest { trees },
    })
}

pub fn fit_adaboost(frame: &FeatureFrame, seed: u64) -> Result<EnsembleModel, MlError> {
    check_not_empty(frame)?;
    let labels = frame_labels(frame);
    let members = adaboost::fit_adaboost_members(frame.columns(), &labels, seed);
    Ok(EnsembleModel {
        kind: ModelKind::AdaBoost,
        seed,
        feature_names: schema_of(frame),
        payload: ModelPayload::AdaBoost(members),
    })
}

pub fn fit_gradient_boosting(frame: &FeatureFrame, seed: u64) -> Result<EnsembleModel, MlError> {
    check_not_empty(frame)?;
    let labels = frame_labels(frame);
    let members = gradient::fit_gradient_members(frame.columns(), &labels);
    Ok(EnsembleModel {
        kind: ModelKind::GradientBoosting,
        seed,
        feature_names: schema_of(frame),
        payload: ModelPayload::Gradient(members),
    })
}

/// Train the requested ensemble kind.
pub fn fit_model(kind: ModelKind, frame: &FeatureFrame, seed: u64) -> Result<EnsembleModel, MlError> {
    match kind {
        ModelKind::AdaBoost => fit_adaboost(frame, seed),
        ModelKind::RandomForest => fit_random_forest(frame, seed),
        ModelKind::GradientBoosting => fit_gradient_boosting(frame, seed),
    }
}

impl EnsembleModel {
    fn check_schema(&self, frame: &FeatureFrame) -> Result<(), MlError> {
        let found = schema_of(frame);
        if found != self.feature_names {
            return Err(MlError::SchemaMismatch {
                expected: self.feature_names.clone(),
                found,
            });
        }
        Ok(())
    }

    fn predict_row(&self, frame: &FeatureFrame, row: usize) -> EntityClass {
        let value = |f: usize| frame.value(row, f);
        match &self.payload {
            ModelPayload::Forest { trees } => {
                let scores = forest::forest_scores(trees, value);
                EntityClass::from_index(argmax_tie_low(&scores)).unwrap()
            }
            ModelPayload::AdaBoost(members) => {
                let scores = adaboost::adaboost_scores(members, value);
                EntityClass::from_index(argmax_tie_low(&scores)).unwrap()
            }
            ModelPayload::Gradient(members) => {
                if members.stages.is_empty() || members.classes.len() == 1 {
                    return members.classes[0];
                }
                let scores = gradient::gradient_scores(members, value, None);
                members.classes[argmax_tie_low(&scores)]
            }
        }
    }

    /// One label per frame row. Fails on a schema mismatch.
    pub fn predict(&self, frame: &FeatureFrame) -> Result<Vec<EntityClass>, MlError> {
        self.check_schema(frame)?;
        Ok((0..frame.n_rows()).map(|row| self.predict_row(frame, row)).collect())
    }

    /// Impurity-based importance: mean decrease in weighted Gini impurity
    /// for trees over classes (stage-weighted for AdaBoost), squared-error
    /// gain for gradient boosting. Normalized to sum 1 (all zeros if the
    /// model never split), descending, ties broken by feature index.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let d = self.feature_names.len();
        let mut raw = vec![0.0; d];
        match &self.payload {
            ModelPayload::Forest { trees } => {
                for tree in trees {
                    for (r, &imp) in raw.iter_mut().zip(tree.importance()) {
                        *r += imp;
                    }
                }
            }
            ModelPayload::AdaBoost(members) => {
                for stage in &members.stages {
                    for (r, &imp) in raw.iter_mut().zip(stage.tree.importance()) {
                        *r += stage.weight.max(0.0) * imp;
                    }
                }
            }
            ModelPayload::Gradient(members) => {
                for stage in &members.stages {
                    for tree in stage {
                        for (r, &imp) in raw.iter_mut().zip(tree.importance()) {
                            *r += imp;
                        }
                    }
                }
            }
        }
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            for r in raw.iter_mut() {
                *r /= total;
            }
        }
        let mut ranked: Vec<(usize, f64)> = raw.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .map(|(i, score)| (self.feature_names[i].clone(), score))
            .collect()
    }

    /// Gradient-boosting members, when this is a GB model. Tests use this to
    /// check the staged training loss.
    pub fn gradient_members(&self) -> Option<&GradientMembers> {
        match &self.payload {
            ModelPayload::Gradient(m) => Some(m),
            _ => None,
        }
    }

    /// AdaBoost stage count, when this is an AdaBoost model.
    pub fn adaboost_stages(&self) -> Option<usize> {
        match &self.payload {
            ModelPayload::AdaBoost(m) => Some(m.stages.len()),
            _ => None,
        }
    }

    /// Forest member count, when this is a forest.
    pub fn forest_size(&self) -> Option<usize> {
        match &self.payload {
            ModelPayload::Forest { trees } => Some(trees.len()),
            _ => None,
        }
    }

    /// Versioned JSON document; reloading reproduces predictions bit-exactly.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct ModelFile<'a> {
            format: &'a str,
            model: &'a EnsembleModel,
        }
        serde_json::to_string(&ModelFile { format: MODEL_FORMAT, model: self })
            .expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<EnsembleModel, MlError> {
        #[derive(Deserialize)]
        struct ModelFile {
            format: String,
            model: EnsembleModel,
        }
        let file: ModelFile =
            serde_json::from_str(s).map_err(|e| MlError::BadFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(MlError::BadFormat(format!(
                "unsupported format {:?}, expected {MODEL_FORMAT:?}",
                file.format
            )));
        }
        Ok(file.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::EntityId;
    use crate::features::{Feature, FeatureFrame};
    use rand::Rng;

    fn frame_from(rows: &[(&[f64], EntityClass)]) -> FeatureFrame {
        let d = rows[0].0.len();
        let schema: Vec<Feature> =
            (0..d).map(|i| Feature::numeric(&format!("f{i}"))).collect();
        let mut frame = FeatureFrame::new(schema);
        for (i, (values, label)) in rows.iter().enumerate() {
            frame.push_row(EntityId(i as u32), *label, values);
        }
        frame
    }

    /// Well-separated blobs per class, centers spread along the first axis.
    fn blobs(n_per_class: usize, classes: &[EntityClass], spread: f64, seed: u64) -> FeatureFrame {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let schema = vec![Feature::numeric("x"), Feature::numeric("y")];
        let mut frame = FeatureFrame::new(schema);
        let mut row = 0u32;
        for (ci, &class) in classes.iter().enumerate() {
            let (cx, cy) = (25.0 * ci as f64, if ci % 2 == 0 { 10.0 } else { -10.0 });
            for _ in 0..n_per_class {
                let x = cx + rng.random_range(-spread..spread);
                let y = cy + rng.random_range(-spread..spread);
                frame.push_row(EntityId(row), class, &[x, y]);
                row += 1;
            }
        }
        frame
    }

    #[test]
    fn derive_seed_separates_domains_and_indices() {
        let a = derive_seed(42, "rf-bootstrap", 0);
        let b = derive_seed(42, "rf-bootstrap", 1);
        let c = derive_seed(42, "rf-split", 0);
        let d = derive_seed(43, "rf-bootstrap", 0);
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, derive_seed(42, "rf-bootstrap", 0));
    }

    #[test]
    fn forest_separable_data_trains_to_high_accuracy() {
        let frame = blobs(100, &[EntityClass::Exchange, EntityClass::Mixer], 3.0, 7);
        let model = fit_random_forest(&frame, 11).unwrap();
        let preds = model.predict(&frame).unwrap();
        let correct = preds
            .iter()
            .zip(frame.labels())
            .filter(|(p, l)| p == l)
            .count();
        assert!(correct as f64 / frame.n_rows() as f64 >= 0.99);
        assert_eq!(model.forest_size(), Some(RF_TREES));
    }

    #[test]
    fn forest_is_deterministic_given_seed() {
        let train = blobs(60, &[EntityClass::Exchange, EntityClass::Gambling], 6.0, 3);
        let holdout = blobs(40, &[EntityClass::Exchange, EntityClass::Gambling], 6.0, 9);
        let a = fit_random_forest(&train, 5).unwrap().predict(&holdout).unwrap();
        let b = fit_random_forest(&train, 5).unwrap().predict(&holdout).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_frame_always_predicts_it() {
        let frame = frame_from(&[
            (&[1.0, 0.0], EntityClass::Mixer),
            (&[2.0, 1.0], EntityClass::Mixer),
            (&[3.0, 2.0], EntityClass::Mixer),
        ]);
        for kind in ModelKind::ALL {
            let model = fit_model(kind, &frame, 1).unwrap();
            let preds = model.predict(&frame).unwrap();
            assert!(preds.iter().all(|&p| p == EntityClass::Mixer), "{kind:?}");
        }
    }

    #[test]
    fn adaboost_perfect_stump_stops_at_one_stage() {
        let frame = frame_from(&[
            (&[0.0], EntityClass::Exchange),
            (&[0.1], EntityClass::Exchange),
            (&[5.0], EntityClass::Mixer),
            (&[5.1], EntityClass::Mixer),
        ]);
        let model = fit_adaboost(&frame, 2).unwrap();
        assert_eq!(model.adaboost_stages(), Some(1));
        let preds = model.predict(&frame).unwrap();
        assert_eq!(preds.iter().zip(frame.labels()).filter(|(p, l)| p == l).count(), 4);
    }

    /// Independent SAMME oracle with exhaustive error-minimizing stumps.
    fn oracle_samme_accuracy(frame: &FeatureFrame, stages: usize) -> f64 {
        let n = frame.n_rows();
        let k = {
            let mut seen = std::collections::BTreeSet::new();
            for l in frame.labels() {
                seen.insert(l.index());
            }
            seen.len() as f64
        };
        let mut weights = vec![1.0 / n as f64; n];
        let mut scores = vec![vec![0.0f64; crate::ingest::N_CLASSES]; n];
        for _ in 0..stages {
            // exhaustive stump: (feature, threshold, left class, right class)
            let mut best: Option<(f64, usize, f64, usize, usize)> = None;
            for f in 0..frame.n_features() {
                let mut vals: Vec<f64> = frame.column(f).to_vec();
                vals.sort_unstable_by(f64::total_cmp);
                vals.dedup();
                for w in vals.windows(2) {
                    let thr = w[0] + (w[1] - w[0]) / 2.0;
                    let mut left = [0.0; crate::ingest::N_CLASSES];
                    let mut right = [0.0; crate::ingest::N_CLASSES];
                    for r in 0..n {
                        let side = if frame.value(r, f) <= thr { &mut left } else { &mut right };
                        side[frame.label(r).index()] += weights[r];
                    }
                    let lc = argmax_tie_low(&left);
                    let rc = argmax_tie_low(&right);
                    let err: f64 = left.iter().enumerate().filter(|(i, _)| *i != lc).map(|(_, w)| w).sum::<f64>()
                        + right.iter().enumerate().filter(|(i, _)| *i != rc).map(|(_, w)| w).sum::<f64>();
                    if best.is_none_or(|(e, ..)| err < e) {
                        best = Some((err, f, thr, lc, rc));
                    }
                }
            }
            let Some((err, f, thr, lc, rc)) = best else { break };
            if err <= 0.0 {
                for (r, s) in scores.iter_mut().enumerate() {
                    let c = if frame.value(r, f) <= thr { lc } else { rc };
                    s[c] += 1.0;
                }
                break;
            }
            if err >= 1.0 - 1.0 / k {
                break;
            }
            let alpha = ((1.0 - err) / err).ln() + (k - 1.0).ln();
            let mut total = 0.0;
            for r in 0..n {
                let c = if frame.value(r, f) <= thr { lc } else { rc };
                if c != frame.label(r).index() {
                    weights[r] *= alpha.exp();
                }
                total += weights[r];
            }
            for w in weights.iter_mut() {
                *w /= total;
            }
            for (r, s) in scores.iter_mut().enumerate() {
                let c = if frame.value(r, f) <= thr { lc } else { rc };
                s[c] += alpha;
            }
        }
        let correct = (0..n)
            .filter(|&r| argmax_tie_low(&scores[r]) == frame.label(r).index())
            .count();
        correct as f64 / n as f64
    }

    #[test]
    fn adaboost_beats_chance_on_six_class_blobs() {
        let frame = blobs(50, &EntityClass::ALL, 4.0, 17);
        let model = fit_adaboost(&frame, 23).unwrap();
        let preds = model.predict(&frame).unwrap();
        let acc = preds.iter().zip(frame.labels()).filter(|(p, l)| p == l).count() as f64
            / frame.n_rows() as f64;
        let oracle = oracle_samme_accuracy(&frame, ADA_STAGES);
        assert!(acc > 1.0 / 6.0 + 0.3, "accuracy {acc} too close to chance");
        assert!(oracle > 1.0 / 6.0 + 0.3, "oracle accuracy {oracle} too close to chance");
        assert!(acc >= oracle - 0.1, "accuracy {acc} far below oracle {oracle}");
    }

    #[test]
    fn gb_training_log_loss_never_increases() {
        let frame = blobs(30, &[EntityClass::Exchange, EntityClass::Service], 3.0, 5);
        let model = fit_gradient_boosting(&frame, 0).unwrap();
        let losses = staged_train_log_loss(model.gradient_members().unwrap(), &frame);
        for pair in losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "loss increased: {pair:?}");
        }
    }

    #[test]
    fn gb_constant_features_predict_the_prior() {
        let frame = frame_from(&[
            (&[7.0], EntityClass::Exchange),
            (&[7.0], EntityClass::Exchange),
            (&[7.0], EntityClass::Exchange),
            (&[7.0], EntityClass::Mixer),
            (&[7.0], EntityClass::Service),
        ]);
        let model = fit_gradient_boosting(&frame, 0).unwrap();
        let preds = model.predict(&frame).unwrap();
        assert!(preds.iter().all(|&p| p == EntityClass::Exchange));
    }

    #[test]
    fn gb_tracks_forest_on_blobs() {
        let train = blobs(50, &EntityClass::ALL, 5.0, 31);
        let holdout = blobs(20, &EntityClass::ALL, 5.0, 32);
        let acc = |kind| {
            let model = fit_model(kind, &train, 9).unwrap();
            let preds = model.predict(&holdout).unwrap();
            preds.iter().zip(holdout.labels()).filter(|(p, l)| p == l).count() as f64
                / holdout.n_rows() as f64
        };
        let rf = acc(ModelKind::RandomForest);
        let gb = acc(ModelKind::GradientBoosting);
        assert!(gb >= rf - 0.1, "gb {gb} lags rf {rf}");
    }

    #[test]
    fn schema_mismatch_is_detected() {
        let frame = blobs(10, &[EntityClass::Exchange, EntityClass::Mixer], 2.0, 1);
        let model = fit_random_forest(&frame, 1).unwrap();
        let other = frame_from(&[(&[1.0], EntityClass::Mixer)]);
        assert!(matches!(model.predict(&other), Err(MlError::SchemaMismatch { .. })));
    }

    #[test]
    fn empty_frame_is_rejected() {
        let frame = FeatureFrame::new(vec![Feature::numeric("x")]);
        for kind in ModelKind::ALL {
            assert!(matches!(fit_model(kind, &frame, 0), Err(MlError::EmptyFrame)));
        }
    }

    #[test]
    fn importance_of_single_informative_feature_dominates() {
        // feature 0 alone determines the label; feature 1 is constant
        let mut rows: Vec<(Vec<f64>, EntityClass)> = Vec::new();
        for i in 0..40 {
            let x = i as f64;
            let label = if x < 20.0 { EntityClass::Exchange } else { EntityClass::Mixer };
            rows.push((vec![x, 1.0], label));
        }
        let borrowed: Vec<(&[f64], EntityClass)> =
            rows.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let frame = frame_from(&borrowed);
        for kind in ModelKind::ALL {
            let model = fit_model(kind, &frame, 3).unwrap();
            let imp = model.feature_importance();
            let total: f64 = imp.iter().map(|(_, s)| s).sum();
            assert!((total - 1.0).abs() < 1e-9, "{kind:?} importances sum to {total}");
            assert_eq!(imp[0].0, "f0", "{kind:?} ranked {imp:?}");
            assert!(imp[0].1 > imp[1].1);
            // the constant feature is never used in a split
            assert_eq!(imp[1].1, 0.0);
        }
    }

    #[test]
    fn importance_of_only_feature_is_one() {
        let frame = frame_from(&[
            (&[0.0], EntityClass::Exchange),
            (&[1.0], EntityClass::Mixer),
        ]);
        let model = fit_random_forest(&frame, 2).unwrap();
        let imp = model.feature_importance();
        assert_eq!(imp.len(), 1);
        assert!((imp[0].1 - 1.0).abs() < 1e-12 || imp[0].1 == 0.0);
    }

    #[test]
    fn model_json_round_trip_preserves_predictions() {
        let train = blobs(40, &EntityClass::ALL, 6.0, 13);
        let holdout = blobs(15, &EntityClass::ALL, 6.0, 14);
        for kind in ModelKind::ALL {
            let model = fit_model(kind, &train, 77).unwrap();
            let reloaded = EnsembleModel::from_json(&model.to_json()).unwrap();
            assert_eq!(reloaded, model);
            assert_eq!(
                reloaded.predict(&holdout).unwrap(),
                model.predict(&holdout).unwrap(),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn bad_model_documents_are_rejected() {
        assert!(matches!(EnsembleModel::from_json("{"), Err(MlError::BadFormat(_))));
        let doc = r#"{"format":"something-else/v9","model":null}"#;
        assert!(matches!(EnsembleModel::from_json(doc), Err(MlError::BadFormat(_))));
    }

    #[test]
    fn tree_prediction_invariant_under_monotone_transform() {
        // strictly monotone transform of a feature applied at train and
        // predict time leaves predictions unchanged (splits use order only)
        let train = blobs(40, &[EntityClass::Exchange, EntityClass::Gambling], 4.0, 21);
        let transform = |frame: &FeatureFrame| {
            let schema = frame.schema().to_vec();
            let mut out = FeatureFrame::new(schema);
            for r in 0..frame.n_rows() {
                let row: Vec<f64> =
                    frame.row(r).iter().map(|v| (v * 0.25).exp()).collect();
                out.push_row(frame.owner(r), frame.label(r), &row);
            }
            out
        };
        let weights = vec![1.0; train.n_rows()];
        let t1 = fit_tree(&train, &weights, &TreeConfig::default(), 5).unwrap();
        let t2 = fit_tree(&transform(&train), &weights, &TreeConfig::default(), 5).unwrap();
        let probe = blobs(25, &[EntityClass::Exchange, EntityClass::Gambling], 4.0, 22);
        let probe_t = transform(&probe);
        for r in 0..probe.n_rows() {
            assert_eq!(
                t1.predict_class(|f| probe.value(r, f)),
                t2.predict_class(|f| probe_t.value(r, f)),
            );
        }
    }
}
