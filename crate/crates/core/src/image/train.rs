use std::path::Path;

use super::augment::{augment, AugmentationPolicy};
use super::page::{write_normalized, PageImage};
use super::preset::{expand_preset, CnnPreset};
use crate::dataset::{ClassScores, DatasetManifest, PageRecord, Split};
use crate::error::{Error, Result};
use crate::nn::{
    build_network, sgd_train, ArtifactMetadata, ImageMetadata, ModelArtifact, Tensor, TrainConfig,
    TrainingData, IMAGE_LR_MAX, LR_MIN,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageModelConfig {
    pub preset: CnnPreset,
    pub side: usize,
    pub policy: AugmentationPolicy,
    pub train: TrainConfig,
}

impl ImageModelConfig {
    /// Image learning-rate bounds (0.002 down to 1e-6) with the default
    /// augmentation ranges, seeded like the network.
    pub fn new(
        preset: CnnPreset,
        side: usize,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(ImageModelConfig {
            preset,
            side,
            policy: AugmentationPolicy {
                seed,
                ..AugmentationPolicy::default()
            },
            train: TrainConfig::for_samples(
                epochs,
                batch_size,
                IMAGE_LR_MAX,
                LR_MIN,
                seed,
                batch_size,
            )?,
        })
    }

    pub fn with_policy(mut self, policy: AugmentationPolicy) -> Self {
        self.policy = policy;
        self
    }
}

/// Training pages held at model resolution; each epoch re-augments them.
///
/// Augmentation runs after the resize to `side`, which keeps it cheap for
/// large scans.
struct AugmentedPages {
    pages: Vec<PageImage>,
    labels: Vec<usize>,
    policy: AugmentationPolicy,
    shape: Vec<usize>,
}

impl TrainingData for AugmentedPages {
    fn len(&self) -> usize {
        self.pages.len()
    }

    fn sample_shape(&self) -> &[usize] {
        &self.shape
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn fill(&self, index: usize, epoch: usize, out: &mut [f64]) -> Result<()> {
        let page = &self.pages[index];
        if self.policy.is_identity() {
            write_normalized(page, out);
        } else {
            let augmented = augment(page, &self.policy, &mut self.policy.rng_for(epoch, index));
            write_normalized(&augmented, out);
        }
        Ok(())
    }
}

fn decode_record(record: &PageRecord) -> Result<PageImage> {
    PageImage::decode(record.image()?)
}

/// Trains a CNN preset on the train split's images.
pub fn train_image_model(
    manifest: &DatasetManifest,
    config: &ImageModelConfig,
) -> Result<ModelArtifact> {
    config.policy.validate()?;
    let spec = expand_preset(
        &config.preset,
        config.side,
        manifest.num_classes(),
        config.train.seed,
    )?;
    let train: Vec<&PageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let pages = train
        .iter()
        .map(|r| decode_record(r)?.resize(config.side, config.side))
        .collect::<Result<Vec<_>>>()?;
    let data = AugmentedPages {
        pages,
        labels: train.iter().map(|r| r.label).collect(),
        policy: config.policy,
        shape: vec![3, config.side, config.side],
    };
    let mut network = build_network(&spec)?;
    sgd_train(&mut network, &data, &config.train.fitted_to(train.len())?)?;
    Ok(ModelArtifact::new(
        network,
        ArtifactMetadata::Image(ImageMetadata {
            preset: config.preset.clone(),
            side: config.side,
        }),
    ))
}

fn image_side(artifact: &ModelArtifact) -> Result<usize> {
    match &artifact.metadata {
        ArtifactMetadata::Image(meta) => Ok(meta.side),
        _ => Err(Error::Modality(format!(
            "expected an image model, got a {} model",
            artifact.modality()
        ))),
    }
}

/// Scores already-decoded pages without augmentation.
pub fn predict_pages(artifact: &ModelArtifact, pages: &[PageImage]) -> Result<Vec<ClassScores>> {
    let side = image_side(artifact)?;
    if pages.is_empty() {
        return Ok(Vec::new());
    }
    let per = 3 * side * side;
    let mut data = vec![0.0; per * pages.len()];
    for (slot, page) in data.chunks_mut(per).zip(pages) {
        write_normalized(&page.resize(side, side)?, slot);
    }
    artifact
        .network
        .predict(&Tensor::new(vec![pages.len(), 3, side, side], data)?)
}

pub fn predict_image(artifact: &ModelArtifact, path: &Path) -> Result<ClassScores> {
    image_side(artifact)?;
    Ok(predict_pages(artifact, &[PageImage::decode(path)?])?.remove(0))
}

pub fn predict_image_record(artifact: &ModelArtifact, record: &PageRecord) -> Result<ClassScores> {
    image_side(artifact)?;
    predict_image(artifact, record.image()?)
}
