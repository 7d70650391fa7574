//! Stacking: component predictions become meta-classifier features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forest::{BoostedForest, BoostingTrace, FusionConfig, MetaSource};
use super::tree::FeatureMatrix;
use crate::dataset::{ClassScores, DatasetManifest, PageRecord, Split};
use crate::error::{Error, Result};
use crate::image::{predict_pages, ImageModelConfig, PageImage};
use crate::nn::{ArtifactMetadata, ModelArtifact};
use crate::text::{predict_text_batch, train_text_model, TextModelConfig};

/// Pages scored per forward pass when scoring images.
const IMAGE_SCORE_CHUNK: usize = 64;

/// Something that can fit a component model from a manifest's train split.
pub trait ComponentTrainer: Sync {
    fn fit(&self, manifest: &DatasetManifest) -> Result<ModelArtifact>;
}

impl ComponentTrainer for TextModelConfig {
    fn fit(&self, manifest: &DatasetManifest) -> Result<ModelArtifact> {
        train_text_model(manifest, self)
    }
}

impl ComponentTrainer for ImageModelConfig {
    fn fit(&self, manifest: &DatasetManifest) -> Result<ModelArtifact> {
        crate::image::train_image_model(manifest, self)
    }
}

/// A trained component model plus, for out-of-fold stacking, the recipe
/// that produced it.
pub struct FusionComponent<'a> {
    pub name: String,
    pub artifact: ModelArtifact,
    pub trainer: Option<&'a dyn ComponentTrainer>,
}

impl<'a> FusionComponent<'a> {
    pub fn new(name: impl Into<String>, artifact: ModelArtifact) -> Self {
        FusionComponent {
            name: name.into(),
            artifact,
            trainer: None,
        }
    }

    pub fn with_trainer(mut self, trainer: &'a dyn ComponentTrainer) -> Self {
        self.trainer = Some(trainer);
        self
    }
}

/// Scores records with any component model, dispatching on its modality.
pub fn score_records(
    artifact: &ModelArtifact,
    records: &[&PageRecord],
) -> Result<Vec<ClassScores>> {
    let lacking = |missing: fn(&PageRecord) -> bool, what: &str| -> Result<()> {
        match records.iter().find(|r| missing(r)) {
            Some(r) => Err(Error::Modality(format!(
                "{} model cannot score record {}, which has no {what}",
                artifact.modality(),
                r.id
            ))),
            None => Ok(()),
        }
    };
    match artifact.metadata {
        ArtifactMetadata::Text(_) => {
            lacking(|r| r.text_path.is_none(), "text")?;
            let texts = records
                .iter()
                .map(|r| r.read_text())
                .collect::<Result<Vec<_>>>()?;
            predict_text_batch(artifact, &texts)
        }
        ArtifactMetadata::Image(_) => {
            lacking(|r| r.image_path.is_none(), "image")?;
            let mut out = Vec::with_capacity(records.len());
            for chunk in records.chunks(IMAGE_SCORE_CHUNK) {
                let pages = chunk
                    .iter()
                    .map(|r| PageImage::decode(r.image()?))
                    .collect::<Result<Vec<_>>>()?;
                out.extend(predict_pages(artifact, &pages)?);
            }
            Ok(out)
        }
        ArtifactMetadata::None => Err(Error::Modality(
            "model artifact carries no input metadata and cannot score records".into(),
        )),
    }
}

/// Concatenates component scores in the given order.
pub fn concat_scores(scores: &[ClassScores]) -> Result<Vec<f64>> {
    let first = scores
        .first()
        .ok_or_else(|| Error::InvalidArgument("no component scores to concatenate".into()))?;
    let c = first.len();
    let mut out = Vec::with_capacity(c * scores.len());
    for (i, s) in scores.iter().enumerate() {
        if s.len() != c {
            return Err(Error::Shape(format!(
                "component {i} has {} classes, component 0 has {c}",
                s.len()
            )));
        }
        out.extend_from_slice(s.values());
    }
    Ok(out)
}

/// Applies the meta-classifier to one record's component scores.
pub fn predict_fused(forest: &BoostedForest, scores: &[ClassScores]) -> Result<ClassScores> {
    if scores.len() * forest.classes() != forest.feature_dim() {
        return Err(Error::Shape(format!(
            "forest was trained on {} features, got {} components of {} classes",
            forest.feature_dim(),
            scores.len(),
            forest.classes()
        )));
    }
    forest.predict_features(&concat_scores(scores)?)
}

/// Scores records with every component and applies the forest.
pub fn predict_fused_records(
    forest: &BoostedForest,
    components: &[&ModelArtifact],
    records: &[&PageRecord],
) -> Result<Vec<ClassScores>> {
    let per_component = components
        .iter()
        .map(|a| score_records(a, records))
        .collect::<Result<Vec<_>>>()?;
    (0..records.len())
        .map(|i| {
            let row: Vec<ClassScores> = per_component.iter().map(|s| s[i].clone()).collect();
            predict_fused(forest, &row)
        })
        .collect()
}

/// Assigns every index a fold in `0..folds`, stratified by label: each
/// class is shuffled independently and dealt round-robin.
pub fn stratified_folds(
    labels: &[usize],
    classes: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or_else(|| Error::InvalidArgument(format!("label {y} outside [0, {classes})")))?
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} training records, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    Ok(assignment)
}

fn order_components<'c, 'a>(
    components: &'c [FusionComponent<'a>],
    order: &[String],
) -> Result<Vec<&'c FusionComponent<'a>>> {
    if order.is_empty() {
        return Ok(components.iter().collect());
    }
    if order.len() != components.len() {
        return Err(Error::Config(format!(
            "component order lists {} names for {} components",
            order.len(),
            components.len()
        )));
    }
    order
        .iter()
        .map(|name| {
            components
                .iter()
                .find(|c| &c.name == name)
                .ok_or_else(|| Error::Config(format!("no component named `{name}`")))
        })
        .collect()
}

/// The features and labels a meta-classifier is trained on.
#[derive(Debug, Clone)]
pub struct MetaDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub record_ids: Vec<String>,
}

/// Builds meta-training features according to `config.meta_source`.
pub fn meta_features(
    components: &[FusionComponent<'_>],
    manifest: &DatasetManifest,
    config: &FusionConfig,
) -> Result<MetaDataset> {
    let ordered = order_components(components, &config.components)?;
    if ordered.is_empty() {
        return Err(Error::InvalidArgument(
            "fusion needs at least one component".into(),
        ));
    }
    let classes = manifest.num_classes();
    for c in &ordered {
        if c.artifact.num_classes() != classes {
            return Err(Error::Shape(format!(
                "component `{}` predicts {} classes, manifest has {classes}",
                c.name,
                c.artifact.num_classes()
            )));
        }
    }
    let source_split = match config.meta_source {
        MetaSource::OutOfFold => Split::Train,
        MetaSource::Validation => Split::Validation,
    };
    let records: Vec<&PageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.split == source_split)
        .collect();
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no {source_split} records to train the meta-classifier on"
        )));
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let width = classes * ordered.len();
    let mut data = vec![0.0; records.len() * width];
    match config.meta_source {
        MetaSource::Validation => {
            for (j, component) in ordered.iter().enumerate() {
                let scores = score_records(&component.artifact, &records)?;
                for (i, s) in scores.iter().enumerate() {
                    data[i * width + j * classes..][..classes].copy_from_slice(s.values());
                }
            }
        }
        MetaSource::OutOfFold => {
            let folds = stratified_folds(&labels, classes, config.oof_folds, config.seed)?;
            for (j, component) in ordered.iter().enumerate() {
                let trainer = component.trainer.ok_or_else(|| {
                    Error::Config(format!(
                        "component `{}` has no trainer; out-of-fold stacking needs one",
                        component.name
                    ))
                })?;
                for fold in 0..config.oof_folds {
                    let fit_records: Vec<PageRecord> = records
                        .iter()
                        .zip(&folds)
                        .filter(|(_, &f)| f != fold)
                        .map(|(r, _)| (*r).clone())
                        .collect();
                    let held: Vec<usize> =
                        (0..records.len()).filter(|&i| folds[i] == fold).collect();
                    let sub = DatasetManifest::new(manifest.label_set.clone(), fit_records)?;
                    let model = trainer.fit(&sub)?;
                    let held_records: Vec<&PageRecord> = held.iter().map(|&i| records[i]).collect();
                    let scores = score_records(&model, &held_records)?;
                    for (&i, s) in held.iter().zip(&scores) {
                        data[i * width + j * classes..][..classes].copy_from_slice(s.values());
                    }
                }
            }
        }
    }
    Ok(MetaDataset {
        features: FeatureMatrix::new(records.len(), width, data)?,
        labels,
        record_ids: records.iter().map(|r| r.id.clone()).collect(),
    })
}

/// Trains the meta-classifier over the given components. The returned
/// forest records the component order it expects at prediction time.
pub fn train_meta(
    components: &[FusionComponent<'_>],
    manifest: &DatasetManifest,
    config: &FusionConfig,
) -> Result<(BoostedForest, BoostingTrace)> {
    config.validate()?;
    let meta = meta_features(components, manifest, config)?;
    let (mut forest, trace) =
        BoostedForest::fit(&meta.features, &meta.labels, manifest.num_classes(), config)?;
    let names = order_components(components, &config.components)?
        .iter()
        .map(|c| c.name.clone())
        .collect();
    forest.set_components(names);
    Ok((forest, trace))
}
