//! Generators for small labelled corpora with known structure, written to
//! disk in the manifest layout used everywhere else.
//!
//! * marker-word text: every page of class `k` contains the token `topick`
//!   among class-independent filler words;
//! * geometric glyphs: one dark shape per page, shape determined by class;
//! * XOR-modality: class `4·g + m` pairs glyph `g` with marker `m`, so
//!   neither modality alone can name the class.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{load_manifest, DatasetManifest, LabelSet, PageRecord, Split};
use crate::error::{Error, Result};
use crate::image::PageImage;

pub const GLYPH_CLASSES: usize = 4;
pub const GLYPH_NAMES: [&str; GLYPH_CLASSES] = ["square", "disk", "triangle", "cross"];

const FILLER: [&str; 40] = [
    "the",
    "of",
    "and",
    "to",
    "in",
    "for",
    "on",
    "with",
    "as",
    "by",
    "this",
    "that",
    "from",
    "page",
    "report",
    "date",
    "number",
    "total",
    "please",
    "section",
    "item",
    "account",
    "office",
    "review",
    "amount",
    "name",
    "address",
    "phone",
    "copy",
    "received",
    "attached",
    "subject",
    "regards",
    "dear",
    "form",
    "note",
    "file",
    "department",
    "company",
    "service",
];

/// Shape of the generated corpus: class count, pages per class, per-class
/// split sizes and the generator seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusShape {
    pub classes: usize,
    pub per_class: usize,
    /// Fractions of each class assigned to train and validation, in
    /// percent; the remainder is test.
    pub train_percent: usize,
    pub validation_percent: usize,
    pub seed: u64,
}

impl CorpusShape {
    pub fn new(classes: usize, per_class: usize, seed: u64) -> Self {
        CorpusShape {
            classes,
            per_class,
            train_percent: 60,
            validation_percent: 20,
            seed,
        }
    }

    fn split_of(&self, index: usize) -> Split {
        let train = self.per_class * self.train_percent / 100;
        let val = self.per_class * self.validation_percent / 100;
        if index < train {
            Split::Train
        } else if index < train + val {
            Split::Validation
        } else {
            Split::Test
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 {
            return Err(Error::InvalidArgument(
                "corpus needs at least one class and page".into(),
            ));
        }
        if self.train_percent + self.validation_percent > 100 {
            return Err(Error::InvalidArgument(
                "split percentages exceed 100".into(),
            ));
        }
        Ok(())
    }
}

/// A page of filler words with the class marker inserted at a random
/// position.
pub fn marker_text<R: Rng + ?Sized>(marker: usize, words: usize, rng: &mut R) -> String {
    let mut tokens: Vec<String> = (0..words)
        .map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string())
        .collect();
    let at = rng.gen_range(0..=tokens.len());
    tokens.insert(at, format!("topic{marker}"));
    tokens.join(" ")
}

/// A white gray page with one dark glyph of the given shape, jittered in
/// size, position and ink.
pub fn glyph_image<R: Rng + ?Sized>(shape: usize, side: usize, rng: &mut R) -> PageImage {
    let s = side as f64;
    let radius = s * rng.gen_range(0.22..0.32);
    let cx = s / 2.0 + s * rng.gen_range(-0.08..0.08);
    let cy = s / 2.0 + s * rng.gen_range(-0.08..0.08);
    let ink = rng.gen_range(0..70) as u8;
    let paper = rng.gen_range(225..=255) as u8;
    let spin = rng.gen_range(-0.15..0.15);
    let mut pixels = vec![paper; side * side];
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (
                (x as f64 + 0.5 - cx) / radius,
                (y as f64 + 0.5 - cy) / radius,
            );
            let (u, v) = (
                dx * f64::cos(spin) + dy * f64::sin(spin),
                -dx * f64::sin(spin) + dy * f64::cos(spin),
            );
            let inside = match shape % GLYPH_CLASSES {
                0 => u.abs() <= 0.85 && v.abs() <= 0.85,
                1 => u * u + v * v <= 1.0,
                2 => (-1.0..=0.8).contains(&v) && u.abs() <= (v + 1.0) / 1.8,
                _ => (u.abs() <= 0.28 && v.abs() <= 1.0) || (v.abs() <= 0.28 && u.abs() <= 1.0),
            };
            if inside {
                pixels[y * side + x] = ink;
            }
        }
    }
    PageImage::new(side, side, 1, pixels).expect("glyph dimensions are consistent")
}

/// What a generator produces for one page.
pub struct SyntheticPage {
    pub image: Option<PageImage>,
    pub text: Option<String>,
}

/// Writes a corpus under `dir` (`pages/`, `texts/`, `manifest.tsv`) and
/// returns the manifest as loaded back from disk.
pub fn write_corpus<F>(
    dir: &Path,
    shape: &CorpusShape,
    labels: LabelSet,
    mut page: F,
) -> Result<DatasetManifest>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> SyntheticPage,
{
    shape.validate()?;
    if labels.len() != shape.classes {
        return Err(Error::InvalidArgument(format!(
            "{} label names for {} classes",
            labels.len(),
            shape.classes
        )));
    }
    for sub in ["pages", "texts"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);
    let mut records = Vec::with_capacity(shape.classes * shape.per_class);
    for class in 0..shape.classes {
        for i in 0..shape.per_class {
            let id = format!("c{class:02}-{i:04}");
            let generated = page(class, &mut rng);
            let image_path = match generated.image {
                Some(img) => {
                    let rel = format!("pages/{id}.png");
                    img.save_png(&dir.join(&rel))?;
                    Some(rel.into())
                }
                None => None,
            };
            let text_path = match generated.text {
                Some(text) => {
                    let rel = format!("texts/{id}.txt");
                    let full = dir.join(&rel);
                    std::fs::write(&full, text).map_err(|e| Error::io(&full, e))?;
                    Some(rel.into())
                }
                None => None,
            };
            records.push(PageRecord {
                id,
                image_path,
                text_path,
                label: class,
                split: shape.split_of(i),
            });
        }
    }
    let manifest_path = dir.join("manifest.tsv");
    DatasetManifest::new(labels, records)?.save(&manifest_path)?;
    load_manifest(&manifest_path)
}

/// Text-only corpus: class `k` pages carry marker `k`.
pub fn write_marker_corpus(dir: &Path, shape: &CorpusShape) -> Result<DatasetManifest> {
    write_corpus(
        dir,
        shape,
        LabelSet::numbered(shape.classes)?,
        |class, rng| {
            let words = rng.gen_range(20..60);
            SyntheticPage {
                image: None,
                text: Some(marker_text(class, words, rng)),
            }
        },
    )
}

/// Image-only corpus of the four glyph shapes.
pub fn write_glyph_corpus(
    dir: &Path,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let shape = CorpusShape::new(GLYPH_CLASSES, per_class, seed);
    let labels = LabelSet::new(GLYPH_NAMES.iter().map(|s| s.to_string()).collect())?;
    write_corpus(dir, &shape, labels, |class, rng| SyntheticPage {
        image: Some(glyph_image(class, side, rng)),
        text: None,
    })
}

/// Sixteen classes; class `4·g + m` has glyph `g` on its image and marker
/// `m` in its text. Either modality alone narrows a page to four classes.
pub fn write_xor_corpus(
    dir: &Path,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let shape = CorpusShape::new(GLYPH_CLASSES * GLYPH_CLASSES, per_class, seed);
    let names = (0..shape.classes)
        .map(|k| {
            format!(
                "{}-topic{}",
                GLYPH_NAMES[k / GLYPH_CLASSES],
                k % GLYPH_CLASSES
            )
        })
        .collect();
    write_corpus(dir, &shape, LabelSet::new(names)?, |class, rng| {
        let image = glyph_image(class / GLYPH_CLASSES, side, rng);
        let words = rng.gen_range(20..60);
        SyntheticPage {
            image: Some(image),
            text: Some(marker_text(class % GLYPH_CLASSES, words, rng)),
        }
    })
}
