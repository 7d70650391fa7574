//! Declarative run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_manifest, DatasetManifest};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::image::{
    expand_preset, AugmentationPolicy, CnnKind, CnnPreset, ImageModelConfig, DEFAULT_SIDE,
};
use crate::ingest::OcrConfig;
use crate::nn::{TrainConfig, IMAGE_LR_MAX, LR_MIN, TEXT_LR_MAX};
use crate::text::TextModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSection {
    /// One model is trained per entry (the BoW-K sweep).
    pub vocab_sizes: Vec<usize>,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl Default for TextSection {
    fn default() -> Self {
        TextSection {
            vocab_sizes: vec![1000],
            hidden_width: 256,
            epochs: 10,
            batch_size: 32,
            lr_max: TEXT_LR_MAX,
            lr_min: LR_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSection {
    pub preset: CnnKind,
    pub side: usize,
    /// Overrides the preset's convolution widths.
    pub conv_widths: Option<Vec<usize>>,
    /// Overrides the preset's hidden dense widths.
    pub dense_widths: Option<Vec<usize>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub augmentation: AugmentationPolicy,
}

impl Default for ImageSection {
    fn default() -> Self {
        ImageSection {
            preset: CnnKind::MiniAlexNetBn,
            side: DEFAULT_SIDE,
            conv_widths: None,
            dense_widths: None,
            epochs: 10,
            batch_size: 32,
            lr_max: IMAGE_LR_MAX,
            lr_min: LR_MIN,
            augmentation: AugmentationPolicy::default(),
        }
    }
}

impl ImageSection {
    pub fn preset(&self) -> CnnPreset {
        let base = CnnPreset::for_kind(self.preset);
        let conv = self
            .conv_widths
            .clone()
            .unwrap_or_else(|| base.conv_widths.clone());
        let dense = self
            .dense_widths
            .clone()
            .unwrap_or_else(|| base.dense_widths.clone());
        base.with_widths(conv, dense)
    }
}

/// Everything one run needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Seeds every stochastic step: weight init, shuffling, augmentation
    /// and fold assignment.
    pub seed: u64,
    pub text: TextSection,
    pub image: ImageSection,
    pub fusion: FusionConfig,
    pub ocr: OcrConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            output_dir: PathBuf::from("runs"),
            seed: 0,
            text: TextSection::default(),
            image: ImageSection::default(),
            fusion: FusionConfig::default(),
            ocr: OcrConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(source: &str) -> Result<Self> {
        toml::from_str(source).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and anchors its relative paths at the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&source)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.manifest = config.manifest.map(|m| base.join(m));
        config.output_dir = base.join(&config.output_dir);
        Ok(config)
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| {
            Error::Config("no manifest given (set `manifest` or pass --manifest)".into())
        })
    }

    pub fn load_manifest(&self) -> Result<DatasetManifest> {
        let path = self.manifest_path()?;
        if !path.is_file() {
            return Err(Error::Config(format!(
                "manifest {} does not exist",
                path.display()
            )));
        }
        load_manifest(path)
    }

    pub fn text_model(&self, k: usize) -> Result<TextModelConfig> {
        let t = &self.text;
        if k == 0 || t.hidden_width == 0 || t.epochs == 0 {
            return Err(Error::Config(
                "text K, hidden width and epochs must be positive".into(),
            ));
        }
        Ok(TextModelConfig {
            k,
            hidden_width: t.hidden_width,
            train: TrainConfig::for_samples(
                t.epochs,
                t.batch_size,
                t.lr_max,
                t.lr_min,
                self.seed,
                t.batch_size,
            )
            .map_err(|e| Error::Config(e.to_string()))?,
        })
    }

    pub fn image_model(&self, preset: CnnPreset, side: usize) -> Result<ImageModelConfig> {
        let i = &self.image;
        if i.epochs == 0 {
            return Err(Error::Config("image epochs must be positive".into()));
        }
        let policy = AugmentationPolicy {
            seed: self.seed,
            ..i.augmentation
        };
        policy
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(ImageModelConfig {
            preset,
            side,
            policy,
            train: TrainConfig::for_samples(
                i.epochs,
                i.batch_size,
                i.lr_max,
                i.lr_min,
                self.seed,
                i.batch_size,
            )
            .map_err(|e| Error::Config(e.to_string()))?,
        })
    }

    pub fn fusion_config(&self) -> Result<FusionConfig> {
        let config = FusionConfig {
            seed: self.seed,
            ..self.fusion.clone()
        };
        config
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    /// Checks every section that does not depend on which command runs.
    pub fn validate(&self) -> Result<()> {
        for &k in &self.text.vocab_sizes {
            self.text_model(k)?;
        }
        if self.text.vocab_sizes.is_empty() {
            return Err(Error::Config("text.vocab_sizes is empty".into()));
        }
        self.image_model(self.image.preset(), self.image.side)?;
        expand_preset(&self.image.preset(), self.image.side, 2, self.seed)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.fusion_config()?;
        self.ocr.validate()
    }
}

/// Short digest of a model's effective configuration for the run log.
pub fn config_hash(description: &str) -> String {
    hex::encode(&Sha256::digest(description.as_bytes())[..8])
}
