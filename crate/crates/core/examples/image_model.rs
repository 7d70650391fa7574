//! Trains the batch-normalized AlexNet-style CNN on generated glyph pages,
//! then saves and reloads it.

use docfusion::dataset::Split;
use docfusion::fusion::{evaluate, score_records};
use docfusion::image::{train_image_model, AugmentationPolicy, CnnPreset, ImageModelConfig};
use docfusion::nn::{load_model, save_model};
use docfusion::synthetic::write_glyph_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = write_glyph_corpus(dir.path(), 200, 64, 1)?;

    // Mild shear/rotation and a little salt-and-pepper noise.
    let policy = AugmentationPolicy {
        salt_pepper_fraction: 0.01,
        ..AugmentationPolicy::default()
    };
    let config = ImageModelConfig::new(CnnPreset::mini_alexnet_bn(), 64, 8, 16, 7)?.with_policy(policy);
    let model = train_image_model(&manifest, &config)?;

    let path = dir.path().join("glyphs.dfm");
    save_model(&model, &path)?;
    let reloaded = load_model(&path)?;
    for split in [Split::Validation, Split::Test] {
        let report = evaluate(|rs| score_records(&reloaded, rs), &manifest, split)?;
        println!("{split} accuracy {:.3}", report.accuracy);
    }
    Ok(())
}
