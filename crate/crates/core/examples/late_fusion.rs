//! Late fusion on a corpus where the image names a glyph and the text names
//! a topic, and the class is the pair. Each model alone is right about a
//! quarter of the time; the boosted forest over both score vectors is not.

use docfusion::dataset::Split;
use docfusion::fusion::{
    evaluate, predict_fused_records, score_records, train_meta, FusionComponent, FusionConfig,
};
use docfusion::image::{train_image_model, CnnPreset, ImageModelConfig};
use docfusion::synthetic::write_xor_corpus;
use docfusion::text::{train_text_model, TextModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = write_xor_corpus(dir.path(), 150, 44, 1)?;

    let image_config = ImageModelConfig::new(CnnPreset::mini_alexnet_bn(), 44, 8, 16, 1)?;
    let text_config = TextModelConfig::new(100, 30, 8, 1)?.with_hidden_width(32);
    let image = train_image_model(&manifest, &image_config)?;
    let text = train_text_model(&manifest, &text_config)?;

    // The trainers let the meta stage refit each component on every fold.
    let components = [
        FusionComponent::new("image", image.clone()).with_trainer(&image_config),
        FusionComponent::new("text", text.clone()).with_trainer(&text_config),
    ];
    let fusion = FusionConfig {
        oof_folds: 3,
        seed: 1,
        ..FusionConfig::default()
    };
    let (forest, trace) = train_meta(&components, &manifest, &fusion)?;
    println!(
        "boosting loss {:.4} -> {:.4} over {} rounds",
        trace.losses[0],
        trace.losses[trace.losses.len() - 1],
        forest.rounds()
    );

    for (name, model) in [("image", &image), ("text", &text)] {
        let r = evaluate(|rs| score_records(model, rs), &manifest, Split::Test)?;
        println!("{name:<6} test accuracy {:.3}", r.accuracy);
    }
    let fused = evaluate(
        |rs| predict_fused_records(&forest, &[&image, &text], rs),
        &manifest,
        Split::Test,
    )?;
    println!("fused  test accuracy {:.3}", fused.accuracy);
    Ok(())
}
