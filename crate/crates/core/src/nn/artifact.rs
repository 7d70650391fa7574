//! Trained-model container and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! | field          | encoding                                         |
//! |----------------|--------------------------------------------------|
//! | magic          | 8 bytes `DFMODEL\0`                              |
//! | version        | u32, currently 1                                 |
//! | input shape    | u32 rank, then u32 per dimension                 |
//! | seed           | u64                                              |
//! | layers         | u32 count, then per layer a u8 tag and fields    |
//! | metadata       | u8 tag and payload                               |
//! | parameters     | u64 count, then f64 per value                    |
//! | buffers        | u64 count, then f64 per value                    |
//!
//! Layer tags: 0 Dense (u32 in, u32 out), 1 Conv2D (u32 in_channels,
//! out_channels, kernel, stride, padding), 2 MaxPool2D (u32 window, stride),
//! 3 BatchNorm (u32 features, f64 epsilon, f64 momentum), 4 ReLU, 5 Flatten,
//! 6 Softmax.
//!
//! Metadata tags: 0 none; 1 text (u32 requested K, u32 hidden width, u64
//! byte length, UTF-8 vocabulary with one `\n`-terminated token per line);
//! 2 image (u8 preset kind: 0 MiniAlexNetBN / 1 MiniVGG, u32 side, u32 count
//! then u32 conv widths, u32 count then u32 dense widths).
//!
//! Parameters follow layer order; within a layer, weights come before
//! biases (Dense weights are `[out, in]`, Conv2D weights `[out, in, k, k]`)
//! and BatchNorm stores scale then shift. Buffers hold each BatchNorm
//! layer's running mean then running variance.

use std::path::Path;

use super::layers::LayerSpec;
use super::network::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::image::{CnnKind, CnnPreset};
use crate::text::Vocabulary;

pub const MODEL_MAGIC: &[u8; 8] = b"DFMODEL\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TextMetadata {
    /// Vocabulary size that was asked for; the embedded vocabulary may be
    /// smaller when the corpus has fewer distinct tokens.
    pub requested_k: usize,
    pub hidden_width: usize,
    pub vocabulary: Vocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetadata {
    pub preset: CnnPreset,
    pub side: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArtifactMetadata {
    None,
    Text(TextMetadata),
    Image(ImageMetadata),
}

/// A trained network plus what is needed to feed it.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub network: Network,
    pub metadata: ArtifactMetadata,
}

impl ModelArtifact {
    pub fn new(network: Network, metadata: ArtifactMetadata) -> Self {
        ModelArtifact { network, metadata }
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.network.spec()
    }

    pub fn num_classes(&self) -> usize {
        self.network.num_classes()
    }

    pub fn modality(&self) -> &'static str {
        match self.metadata {
            ArtifactMetadata::None => "generic",
            ArtifactMetadata::Text(_) => "text",
            ArtifactMetadata::Image(_) => "image",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_FORMAT_VERSION);
        let spec = self.network.spec();
        w.u32(spec.input_shape.len() as u32);
        for &d in &spec.input_shape {
            w.u32(d as u32);
        }
        w.u64(spec.seed);
        w.u32(spec.layers.len() as u32);
        for layer in &spec.layers {
            write_layer(&mut w, layer);
        }
        match &self.metadata {
            ArtifactMetadata::None => w.u8(0),
            ArtifactMetadata::Text(meta) => {
                w.u8(1);
                w.u32(meta.requested_k as u32);
                w.u32(meta.hidden_width as u32);
                let vocab = meta.vocabulary.render();
                w.u64(vocab.len() as u64);
                w.bytes(vocab.as_bytes());
            }
            ArtifactMetadata::Image(meta) => {
                w.u8(2);
                w.u8(match meta.preset.kind {
                    CnnKind::MiniAlexNetBn => 0,
                    CnnKind::MiniVgg => 1,
                });
                w.u32(meta.side as u32);
                for widths in [&meta.preset.conv_widths, &meta.preset.dense_widths] {
                    w.u32(widths.len() as u32);
                    for &x in widths.iter() {
                        w.u32(x as u32);
                    }
                }
            }
        }
        for values in [self.network.params(), self.network.buffers()] {
            w.u64(values.len() as u64);
            for v in values {
                w.f64(*v);
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {version}, expected {MODEL_FORMAT_VERSION}"
            )));
        }
        let rank = r.u32()? as usize;
        let input_shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let seed = r.u64()?;
        let n_layers = r.u32()? as usize;
        let layers = (0..n_layers)
            .map(|_| read_layer(&mut r))
            .collect::<Result<_>>()?;
        let spec = NetworkSpec {
            input_shape,
            layers,
            seed,
        };
        let metadata = match r.u8()? {
            0 => ArtifactMetadata::None,
            1 => {
                let requested_k = r.u32()? as usize;
                let hidden_width = r.u32()? as usize;
                let len = r.len_prefix()?;
                let text = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| Error::Format("vocabulary is not UTF-8".into()))?;
                ArtifactMetadata::Text(TextMetadata {
                    requested_k,
                    hidden_width,
                    vocabulary: Vocabulary::parse(text)
                        .map_err(|e| Error::Format(format!("embedded vocabulary: {e}")))?,
                })
            }
            2 => {
                let kind = match r.u8()? {
                    0 => CnnKind::MiniAlexNetBn,
                    1 => CnnKind::MiniVgg,
                    t => return Err(Error::Format(format!("unknown preset tag {t}"))),
                };
                let side = r.u32()? as usize;
                let mut widths = [Vec::new(), Vec::new()];
                for list in &mut widths {
                    let n = r.u32()? as usize;
                    for _ in 0..n {
                        list.push(r.u32()? as usize);
                    }
                }
                let [conv_widths, dense_widths] = widths;
                ArtifactMetadata::Image(ImageMetadata {
                    preset: CnnPreset {
                        kind,
                        conv_widths,
                        dense_widths,
                    },
                    side,
                })
            }
            t => return Err(Error::Format(format!("unknown metadata tag {t}"))),
        };
        let params = r.f64_block()?;
        let buffers = r.f64_block()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after buffers",
                bytes.len() - r.pos
            )));
        }
        if spec.validate().is_err() {
            return Err(Error::Format("stored network spec is invalid".into()));
        }
        let network = Network::from_parts(spec, params, buffers)?;
        Ok(ModelArtifact { network, metadata })
    }
}

pub fn save_model(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, artifact.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_bytes(&bytes)
}

fn write_layer(w: &mut Writer, layer: &LayerSpec) {
    match *layer {
        LayerSpec::Dense { in_dim, out_dim } => {
            w.u8(0);
            w.u32(in_dim as u32);
            w.u32(out_dim as u32);
        }
        LayerSpec::Conv2D {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            w.u8(1);
            for v in [in_channels, out_channels, kernel, stride, padding] {
                w.u32(v as u32);
            }
        }
        LayerSpec::MaxPool2D { window, stride } => {
            w.u8(2);
            w.u32(window as u32);
            w.u32(stride as u32);
        }
        LayerSpec::BatchNorm {
            num_features,
            epsilon,
            momentum,
        } => {
            w.u8(3);
            w.u32(num_features as u32);
            w.f64(epsilon);
            w.f64(momentum);
        }
        LayerSpec::ReLU => w.u8(4),
        LayerSpec::Flatten => w.u8(5),
        LayerSpec::Softmax => w.u8(6),
    }
}

fn read_layer(r: &mut Reader<'_>) -> Result<LayerSpec> {
    Ok(match r.u8()? {
        0 => LayerSpec::Dense {
            in_dim: r.u32()? as usize,
            out_dim: r.u32()? as usize,
        },
        1 => LayerSpec::Conv2D {
            in_channels: r.u32()? as usize,
            out_channels: r.u32()? as usize,
            kernel: r.u32()? as usize,
            stride: r.u32()? as usize,
            padding: r.u32()? as usize,
        },
        2 => LayerSpec::MaxPool2D {
            window: r.u32()? as usize,
            stride: r.u32()? as usize,
        },
        3 => LayerSpec::BatchNorm {
            num_features: r.u32()? as usize,
            epsilon: r.f64()?,
            momentum: r.f64()?,
        },
        4 => LayerSpec::ReLU,
        5 => LayerSpec::Flatten,
        6 => LayerSpec::Softmax,
        t => return Err(Error::Format(format!("unknown layer tag {t}"))),
    })
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A u64 length that must fit in the remaining bytes.
    fn len_prefix(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(Error::Format(format!(
                "declared length {n} exceeds file size"
            )));
        }
        Ok(n as usize)
    }
    fn f64_block(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n.checked_mul(8)
            .is_none_or(|b| b > (self.bytes.len() - self.pos) as u64)
        {
            return Err(Error::Format(format!(
                "truncated file: {n} values declared"
            )));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, Tensor};

    fn small_artifact() -> ModelArtifact {
        let spec = NetworkSpec::new(
            vec![1, 6, 6],
            vec![
                LayerSpec::conv(1, 2, 3, 1),
                LayerSpec::batch_norm(2),
                LayerSpec::ReLU,
                LayerSpec::max_pool(2, 2),
                LayerSpec::Flatten,
                LayerSpec::dense(8, 3),
                LayerSpec::Softmax,
            ],
            11,
        );
        ModelArtifact::new(build_network(&spec).unwrap(), ArtifactMetadata::None)
    }

    #[test]
    fn roundtrip_preserves_predictions() {
        let artifact = small_artifact();
        let back = ModelArtifact::from_bytes(&artifact.to_bytes()).unwrap();
        let input = Tensor::new(
            vec![2, 1, 6, 6],
            (0..72).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        assert_eq!(
            artifact.network.predict(&input).unwrap(),
            back.network.predict(&input).unwrap()
        );
        assert_eq!(back.to_bytes(), artifact.to_bytes());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = small_artifact().to_bytes();
        for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                ModelArtifact::from_bytes(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = small_artifact().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn parameter_count_mismatch_is_validation_error() {
        let artifact = small_artifact();
        let spec = artifact.spec().clone();
        let mut params = artifact.network.params().to_vec();
        params.pop();
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_FORMAT_VERSION);
        w.u32(spec.input_shape.len() as u32);
        for &d in &spec.input_shape {
            w.u32(d as u32);
        }
        w.u64(spec.seed);
        w.u32(spec.layers.len() as u32);
        for l in &spec.layers {
            write_layer(&mut w, l);
        }
        w.u8(0);
        for values in [&params[..], artifact.network.buffers()] {
            w.u64(values.len() as u64);
            for v in values {
                w.f64(*v);
            }
        }
        assert!(matches!(
            ModelArtifact::from_bytes(&w.0),
            Err(Error::Validation(_))
        ));
    }
}
