use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkSpec};

/// Full-size input side.
pub const DEFAULT_SIDE: usize = 227;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CnnKind {
    /// Conv→BatchNorm→ReLU→MaxPool blocks.
    #[serde(rename = "mini-alexnet-bn")]
    MiniAlexNetBn,
    /// (Conv→ReLU)×2→MaxPool blocks with same-padding 3×3 kernels.
    #[serde(rename = "mini-vgg")]
    MiniVgg,
}

impl fmt::Display for CnnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CnnKind::MiniAlexNetBn => "mini-alexnet-bn",
            CnnKind::MiniVgg => "mini-vgg",
        })
    }
}

/// Scaled-down AlexNet (with batch norm) and VGG layouts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnPreset {
    pub kind: CnnKind,
    /// One width per convolution block.
    pub conv_widths: Vec<usize>,
    /// Hidden dense widths before the class layer.
    pub dense_widths: Vec<usize>,
}

/// Kernel and stride of each MiniAlexNetBN block.
const ALEXNET_BLOCKS: [(usize, usize); 3] = [(5, 2), (3, 1), (3, 1)];
const VGG_BLOCKS: usize = 4;

impl CnnPreset {
    pub fn mini_alexnet_bn() -> Self {
        CnnPreset {
            kind: CnnKind::MiniAlexNetBn,
            conv_widths: vec![16, 32, 64],
            dense_widths: vec![128, 64],
        }
    }

    pub fn mini_vgg() -> Self {
        CnnPreset {
            kind: CnnKind::MiniVgg,
            conv_widths: vec![8, 16, 32, 64],
            dense_widths: vec![128, 64],
        }
    }

    pub fn for_kind(kind: CnnKind) -> Self {
        match kind {
            CnnKind::MiniAlexNetBn => Self::mini_alexnet_bn(),
            CnnKind::MiniVgg => Self::mini_vgg(),
        }
    }

    pub fn with_widths(mut self, conv_widths: Vec<usize>, dense_widths: Vec<usize>) -> Self {
        self.conv_widths = conv_widths;
        self.dense_widths = dense_widths;
        self
    }

    fn blocks(&self) -> usize {
        match self.kind {
            CnnKind::MiniAlexNetBn => ALEXNET_BLOCKS.len(),
            CnnKind::MiniVgg => VGG_BLOCKS,
        }
    }
}

/// Expands a preset into a shape-checked spec over `[3, side, side]` ending
/// in a `classes`-way softmax.
pub fn expand_preset(
    preset: &CnnPreset,
    side: usize,
    classes: usize,
    seed: u64,
) -> Result<NetworkSpec> {
    if preset.conv_widths.len() != preset.blocks() {
        return Err(Error::InvalidArgument(format!(
            "{} needs {} conv widths, got {}",
            preset.kind,
            preset.blocks(),
            preset.conv_widths.len()
        )));
    }
    if preset.dense_widths.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "{} needs 2 dense widths, got {}",
            preset.kind,
            preset.dense_widths.len()
        )));
    }
    if classes == 0 || side == 0 {
        return Err(Error::InvalidArgument(
            "side and class count must be positive".into(),
        ));
    }
    let mut layers = Vec::new();
    let mut channels = 3;
    match preset.kind {
        CnnKind::MiniAlexNetBn => {
            for (&width, &(kernel, stride)) in preset.conv_widths.iter().zip(&ALEXNET_BLOCKS) {
                layers.push(LayerSpec::conv(channels, width, kernel, stride));
                layers.push(LayerSpec::batch_norm(width));
                layers.push(LayerSpec::ReLU);
                layers.push(LayerSpec::max_pool(2, 2));
                channels = width;
            }
        }
        CnnKind::MiniVgg => {
            for &width in &preset.conv_widths {
                layers.push(LayerSpec::conv_padded(channels, width, 3, 1, 1));
                layers.push(LayerSpec::ReLU);
                layers.push(LayerSpec::conv_padded(width, width, 3, 1, 1));
                layers.push(LayerSpec::ReLU);
                layers.push(LayerSpec::max_pool(2, 2));
                channels = width;
            }
        }
    }
    layers.push(LayerSpec::Flatten);
    let conv_spec = NetworkSpec::new(vec![3, side, side], layers.clone(), seed);
    let flat = conv_spec
        .shapes()
        .map_err(|e| {
            Error::InvalidArgument(format!("side {side} is too small for {}: {e}", preset.kind))
        })?
        .last()
        .expect("non-empty")[0];
    let mut width = flat;
    for &hidden in &preset.dense_widths {
        layers.push(LayerSpec::dense(width, hidden));
        layers.push(LayerSpec::ReLU);
        width = hidden;
    }
    layers.push(LayerSpec::dense(width, classes));
    layers.push(LayerSpec::Softmax);
    let spec = NetworkSpec::new(vec![3, side, side], layers, seed);
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_network;

    #[test]
    fn alexnet_full_size_has_sixteen_way_softmax() {
        let spec = expand_preset(&CnnPreset::mini_alexnet_bn(), DEFAULT_SIDE, 16, 0).unwrap();
        assert_eq!(spec.layers.last(), Some(&LayerSpec::Softmax));
        assert_eq!(spec.shapes().unwrap().last().unwrap(), &vec![16]);
        let params = spec.param_count();
        assert!((100_000..=2_000_000).contains(&params), "{params}");
    }

    #[test]
    fn alexnet_has_batch_norm_after_every_conv() {
        let spec = expand_preset(&CnnPreset::mini_alexnet_bn(), 64, 4, 0).unwrap();
        for (i, l) in spec.layers.iter().enumerate() {
            if matches!(l, LayerSpec::Conv2D { .. }) {
                assert!(matches!(spec.layers[i + 1], LayerSpec::BatchNorm { .. }));
            }
        }
    }

    #[test]
    fn vgg_test_scale_and_too_small() {
        let spec = expand_preset(&CnnPreset::mini_vgg(), 32, 4, 0).unwrap();
        assert!(build_network(&spec).is_ok());
        assert!(expand_preset(&CnnPreset::mini_vgg(), 8, 4, 0).is_err());
        let vgg = expand_preset(&CnnPreset::mini_vgg(), DEFAULT_SIDE, 16, 0).unwrap();
        assert!((100_000..=2_000_000).contains(&vgg.param_count()));
    }

    #[test]
    fn wrong_width_counts_error() {
        let bad = CnnPreset::mini_vgg().with_widths(vec![8], vec![16, 16]);
        assert!(expand_preset(&bad, 32, 4, 0).is_err());
    }

    #[test]
    fn every_supported_side_builds() {
        for preset in [CnnPreset::mini_alexnet_bn(), CnnPreset::mini_vgg()] {
            for side in 8..=96 {
                if let Ok(spec) = expand_preset(&preset, side, 5, 1) {
                    assert!(build_network(&spec).is_ok(), "{} at {side}", preset.kind);
                }
            }
        }
    }
}
