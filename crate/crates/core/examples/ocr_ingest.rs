//! Extracts text from page images with an external OCR command. Uses
//! `tesseract` when it is on PATH, otherwise a stand-in shell script that
//! reports each page's size.

use std::process::Command;

use docfusion::ingest::{extract_corpus, OcrConfig};
use docfusion::synthetic::write_glyph_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = write_glyph_corpus(dir.path(), 2, 64, 1)?;

    let has_tesseract = Command::new("tesseract").arg("--version").output().is_ok();
    let config = if has_tesseract {
        OcrConfig::default()
    } else {
        let script = dir.path().join("fake-ocr.sh");
        std::fs::write(&script, "printf 'page of %s bytes' \"$(wc -c < \"$1\")\" > \"$2.txt\"\n")?;
        OcrConfig {
            command_template: format!("sh '{}' {{input}} {{output}}", script.display()),
            longest_side_px: 200,
            ..OcrConfig::default()
        }
    };

    let out = dir.path().join("texts");
    let summary = extract_corpus(&manifest, &config, &out)?;
    println!("{}", summary.headline());
    for record in summary.manifest.records.iter().take(3) {
        println!("{}: {:?}", record.id, record.read_text()?);
    }
    // A second pass finds every text already in place.
    println!("{}", extract_corpus(&summary.manifest, &config, &out)?.headline());
    Ok(())
}
