use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::page::PageImage;
use crate::error::{Error, Result};

const WHITE: f64 = 255.0;

/// Train-time perturbations: a random shear and rotation about the page
/// center, optionally followed by salt-and-pepper noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Shear angles are drawn from `[-shear_range_deg, shear_range_deg]`.
    pub shear_range_deg: f64,
    /// Rotation angles are drawn from `[-rotation_range_deg, rotation_range_deg]`.
    pub rotation_range_deg: f64,
    /// Probability that a pixel is forced to black or white (half each).
    pub salt_pepper_fraction: f64,
    /// Not read from config files; training sets it from the model seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            shear_range_deg: 10.0,
            rotation_range_deg: 5.0,
            salt_pepper_fraction: 0.0,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    /// No-op policy.
    pub fn identity() -> Self {
        AugmentationPolicy {
            shear_range_deg: 0.0,
            rotation_range_deg: 0.0,
            salt_pepper_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: f64| r.is_finite() && (0.0..90.0).contains(&r);
        if !ok_range(self.shear_range_deg) || !ok_range(self.rotation_range_deg) {
            return Err(Error::InvalidArgument(
                "augmentation ranges must be finite half-widths in [0, 90)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.salt_pepper_fraction) {
            return Err(Error::InvalidArgument(
                "salt-and-pepper fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.shear_range_deg == 0.0
            && self.rotation_range_deg == 0.0
            && self.salt_pepper_fraction == 0.0
    }

    /// Generator for one (epoch, sample) pair, so that every draw is
    /// independent of iteration order.
    pub fn rng_for(&self, epoch: usize, index: usize) -> ChaCha8Rng {
        let mixed = splitmix(splitmix(self.seed ^ 0x5eed_a09e) ^ epoch as u64) ^ index as u64;
        ChaCha8Rng::seed_from_u64(splitmix(mixed))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `(shear_deg, rotation_deg)`, each uniform over its range.
pub fn sample_angles<R: Rng + ?Sized>(policy: &AugmentationPolicy, rng: &mut R) -> (f64, f64) {
    let shear = (2.0 * rng.gen::<f64>() - 1.0) * policy.shear_range_deg;
    let rotation = (2.0 * rng.gen::<f64>() - 1.0) * policy.rotation_range_deg;
    (shear, rotation)
}

/// Samples angles, applies the shear-then-rotate affine map and then
/// salt-and-pepper noise.
pub fn augment<R: Rng + ?Sized>(
    image: &PageImage,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> PageImage {
    let (shear, rotation) = sample_angles(policy, rng);
    let mut out = affine(image, shear, rotation);
    salt_and_pepper(&mut out, policy.salt_pepper_fraction, rng);
    out
}

/// Applies `rotation · shear` about the image center with bilinear sampling.
/// Samples that fall outside the page read as white.
pub fn affine(image: &PageImage, shear_deg: f64, rotation_deg: f64) -> PageImage {
    if shear_deg == 0.0 && rotation_deg == 0.0 {
        return image.clone();
    }
    let t = shear_deg.to_radians().tan();
    let (s, c) = rotation_deg.to_radians().sin_cos();
    // Inverse of R·S is S⁻¹·R⁻¹ with S⁻¹ = [[1, -t], [0, 1]], R⁻¹ = [[c, s], [-s, c]].
    let inv = [[c + t * s, s - t * c], [-s, c]];
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let src = image.pixels();
    let sample = |x: isize, y: isize, k: usize| -> f64 {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            WHITE
        } else {
            src[(y as usize * w + x as usize) * ch + k] as f64
        }
    };
    let mut pixels = vec![0u8; src.len()];
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for k in 0..ch {
                let top = sample(x0, y0, k) * (1.0 - fx) + sample(x0 + 1, y0, k) * fx;
                let bottom = sample(x0, y0 + 1, k) * (1.0 - fx) + sample(x0 + 1, y0 + 1, k) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels[(y * w + x) * ch + k] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    PageImage::new(w, h, ch, pixels).expect("same geometry as input")
}

/// Forces each pixel (all its channels) to 0 with probability `fraction/2`
/// and to 255 with probability `fraction/2`.
pub fn salt_and_pepper<R: Rng + ?Sized>(image: &mut PageImage, fraction: f64, rng: &mut R) {
    if fraction <= 0.0 {
        return;
    }
    let ch = image.channels();
    for pixel in image.pixels_mut().chunks_mut(ch) {
        let u: f64 = rng.gen();
        if u < fraction / 2.0 {
            pixel.fill(0);
        } else if u < fraction {
            pixel.fill(255);
        }
    }
}
