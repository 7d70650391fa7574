use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// 8-bit raster page, 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PageImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl PageImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate image {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "unsupported channel count {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "{} pixel values for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(PageImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + channel]
    }

    /// Collapses RGB pages whose channels agree everywhere to one channel.
    pub fn canonical(&self) -> PageImage {
        if self.channels == 3 && self.pixels.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]) {
            PageImage {
                width: self.width,
                height: self.height,
                channels: 1,
                pixels: self.pixels.chunks(3).map(|p| p[0]).collect(),
            }
        } else {
            self.clone()
        }
    }

    /// Bilinear resize with pixel-center alignment and edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> Result<PageImage> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot resize to {width}x{height}"
            )));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let axis = |out: usize, scale: f64, len: usize| -> Vec<(usize, usize, f64)> {
            (0..out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(len - 1);
                    (lo, hi, src - lo as f64)
                })
                .collect()
        };
        let xs = axis(width, sx, self.width);
        let ys = axis(height, sy, self.height);
        let c = self.channels;
        let mut pixels = vec![0u8; width * height * c];
        for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for ch in 0..c {
                    let p =
                        |xx: usize, yy: usize| self.pixels[(yy * self.width + xx) * c + ch] as f64;
                    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    pixels[(y * width + x) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        PageImage::new(width, height, c, pixels)
    }

    /// Decodes PNG or binary PNM (PGM/PPM). Gray sources stay single-channel;
    /// everything else becomes RGB.
    pub fn decode(path: &Path) -> Result<PageImage> {
        let decode_err = |message: String| Error::Decode {
            path: path.to_path_buf(),
            message,
        };
        let reader = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?;
        let decoded = reader.decode().map_err(|e| decode_err(e.to_string()))?;
        Self::from_dynamic(decoded).map_err(|e| decode_err(e.to_string()))
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<PageImage> {
        let decoded = image::load_from_memory(bytes).map_err(|e| Error::Decode {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        Self::from_dynamic(decoded)
    }

    fn from_dynamic(decoded: DynamicImage) -> Result<PageImage> {
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let gray = matches!(
            decoded,
            DynamicImage::ImageLuma8(_)
                | DynamicImage::ImageLumaA8(_)
                | DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
        );
        if gray {
            PageImage::new(w, h, 1, decoded.into_luma8().into_raw())
        } else {
            PageImage::new(w, h, 3, decoded.into_rgb8().into_raw())
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, self.pixels.clone()).expect("sized buffer"),
            )
        } else {
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, self.pixels.clone()).expect("sized buffer"),
            )
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.save_as(path, ImageFormat::Png)
    }

    /// Binary PGM (gray) or PPM (RGB).
    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        self.save_as(path, ImageFormat::Pnm)
    }

    fn save_as(&self, path: &Path, format: ImageFormat) -> Result<()> {
        self.to_dynamic()
            .save_with_format(path, format)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                message: format!("encode failed: {e}"),
            })
    }
}

/// Resizes to `side`×`side`, replicates gray to three channels and maps
/// each intensity `p` to `p / 127.5 − 1`. Output shape `[3, side, side]`.
pub fn preprocess(image: &PageImage, side: usize) -> Result<Tensor> {
    let resized = image.resize(side, side)?;
    let mut data = vec![0.0; 3 * side * side];
    write_normalized(&resized, &mut data);
    Tensor::new(vec![3, side, side], data)
}

/// Channel-planar normalized copy of an already-sized image.
pub(crate) fn write_normalized(image: &PageImage, out: &mut [f64]) {
    let plane = image.width * image.height;
    debug_assert_eq!(out.len(), 3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            let src = if image.channels == 1 { i } else { i * 3 + ch };
            out[ch * plane + i] = image.pixels[src] as f64 / 127.5 - 1.0;
        }
    }
}

pub fn load_and_preprocess(path: &Path, side: usize) -> Result<Tensor> {
    preprocess(&PageImage::decode(path)?, side)
}
