//! Trains a bag-of-words MLP on a generated marker-word corpus and scores a
//! few hand-written pages.

use docfusion::dataset::{argmax_class, Split};
use docfusion::fusion::{evaluate, score_records};
use docfusion::synthetic::{write_marker_corpus, CorpusShape};
use docfusion::text::{predict_text, train_text_model, TextModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = write_marker_corpus(dir.path(), &CorpusShape::new(4, 40, 3))?;
    let config = TextModelConfig::new(100, 60, 4, 1)?;
    let model = train_text_model(&manifest, &config)?;

    let report = evaluate(|rs| score_records(&model, rs), &manifest, Split::Test)?;
    println!("test accuracy {:.3}", report.accuracy);

    for page in ["please review topic1 in this section", "total amount received", "topic3"] {
        let scores = predict_text(&model, page)?;
        println!("{page:?} -> class {}", argmax_class(&scores));
    }
    Ok(())
}
