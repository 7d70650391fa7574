mod common;

use std::path::{Path, PathBuf};

use common::{stub_ocr_fixed, stub_ocr_lookup};
use docfusion::dataset::{DatasetManifest, LabelSet, PageRecord, Split};
use docfusion::image::PageImage;
use docfusion::ingest::{
    extract_corpus, extract_text, ocr_dimensions, resize_for_ocr, ExtractionStatus, OcrConfig,
};
use docfusion::Error;
use proptest::prelude::*;

fn config_for(script: &Path, longest: usize) -> OcrConfig {
    OcrConfig {
        command_template: format!("'{}' {{input}} {{output}}", script.display()),
        longest_side_px: longest,
        ..OcrConfig::default()
    }
}

/// Writes `body` to a script run through `sh`, so it needs no exec bit.
fn shell_config(dir: &Path, body: &str) -> OcrConfig {
    let script = dir.join("ocr.sh");
    std::fs::write(&script, format!("{body}\n")).unwrap();
    OcrConfig {
        command_template: format!("sh '{}' {{input}} {{output}}", script.display()),
        longest_side_px: 40,
        ..OcrConfig::default()
    }
}

fn gradient_page(w: usize, h: usize) -> PageImage {
    let pixels = (0..w * h)
        .map(|i| ((i % w) * 255 / w.max(1)) as u8)
        .collect();
    PageImage::new(w, h, 1, pixels).unwrap()
}

fn image_record(dir: &Path, id: &str, page: &PageImage) -> PageRecord {
    let path = dir.join(format!("{id}.png"));
    page.save_png(&path).unwrap();
    PageRecord {
        id: id.into(),
        image_path: Some(path),
        text_path: None,
        label: 0,
        split: Split::Train,
    }
}

#[test]
fn resize_examples() {
    assert_eq!(ocr_dimensions(1100, 850, 3300).unwrap(), (3300, 2550));
    assert_eq!(ocr_dimensions(850, 1100, 3300).unwrap(), (2550, 3300));
    assert_eq!(ocr_dimensions(3300, 2550, 3300).unwrap(), (3300, 2550));

    let page = gradient_page(110, 85);
    let up = resize_for_ocr(&page, 330).unwrap();
    assert_eq!((up.width(), up.height()), (330, 255));
    let fixed = resize_for_ocr(&up, 330).unwrap();
    assert_eq!(fixed, up);
    let down = resize_for_ocr(&gradient_page(85, 110), 33).unwrap();
    assert_eq!((down.width(), down.height()), (26, 33));
    assert!(resize_for_ocr(&page, 0).is_err());
}

proptest! {
    #[test]
    fn resize_preserves_aspect(w in 1usize..5000, h in 1usize..5000, longest in 1usize..4000) {
        let (ow, oh) = ocr_dimensions(w, h, longest).unwrap();
        prop_assert_eq!(ow.max(oh), longest);
        // The short side is within half a pixel of exact proportion, or
        // clamped up to one pixel.
        let (short_in, long_in, short_out) = if w >= h { (h, w, oh) } else { (w, h, ow) };
        let exact = short_in as f64 * longest as f64 / long_in as f64;
        prop_assert!((short_out as f64 - exact).abs() <= 0.5 || (short_out == 1 && exact < 1.0));
    }
}

#[test]
fn stub_text_is_returned() {
    let dir = tempfile::tempdir().unwrap();
    let script = stub_ocr_fixed(dir.path(), "INVOICE 42");
    let record = image_record(dir.path(), "a", &gradient_page(30, 20));
    let out = extract_text(&record, &config_for(&script, 60)).unwrap();
    assert_eq!(out.text, "INVOICE 42");
    assert!(!out.lossy);
}

#[test]
fn ocr_sees_the_resized_page_and_scratch_is_removed() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("seen");
    let config = shell_config(
        dir.path(),
        &format!("echo \"$1\" > '{}'\nprintf ok > \"$2.txt\"", log.display()),
    );
    let page = gradient_page(30, 20);
    let record = image_record(dir.path(), "a", &page);
    assert_eq!(extract_text(&record, &config).unwrap().text, "ok");
    let seen = PathBuf::from(std::fs::read_to_string(&log).unwrap().trim());
    assert!(!seen.exists(), "scratch input {seen:?} left behind");

    // The lookup stub only knows the page at the configured resolution.
    let lookup = stub_ocr_lookup(dir.path(), &[(&page, "resized")], 40);
    assert_eq!(
        extract_text(&record, &config_for(&lookup, 40))
            .unwrap()
            .text,
        "resized"
    );
    assert!(matches!(
        extract_text(&record, &config_for(&lookup, 41)),
        Err(Error::Ocr(_))
    ));
}

#[test]
fn nonzero_exit_reports_status_and_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let config = shell_config(dir.path(), "echo 'engine exploded' >&2\nexit 7");
    let record = image_record(dir.path(), "a", &gradient_page(8, 8));
    match extract_text(&record, &config) {
        Err(Error::Ocr(msg)) => {
            assert!(msg.contains("exit status 7"), "{msg}");
            assert!(msg.contains("engine exploded"), "{msg}");
        }
        other => panic!("expected an OCR error, got {other:?}"),
    }
    let missing = OcrConfig {
        command_template: "/nonexistent/ocr-binary {input} {output}".into(),
        ..OcrConfig::default()
    };
    assert!(matches!(
        extract_text(&record, &missing),
        Err(Error::Ocr(_))
    ));
}

#[test]
fn empty_and_invalid_output() {
    let dir = tempfile::tempdir().unwrap();
    let record = image_record(
        dir.path(),
        "blank",
        &PageImage::filled(20, 20, 1, 255).unwrap(),
    );
    let blank = shell_config(dir.path(), ": > \"$2.txt\"");
    assert_eq!(extract_text(&record, &blank).unwrap().text, "");

    let bad = shell_config(dir.path(), "printf 'caf\\351' > \"$2\"");
    let out = extract_text(&record, &bad).unwrap();
    assert!(out.lossy);
    assert_eq!(out.text, "caf\u{fffd}");
}

fn three_pages(dir: &Path) -> DatasetManifest {
    let records = ["p0", "p1", "p2"]
        .iter()
        .enumerate()
        .map(|(i, id)| image_record(dir, id, &gradient_page(20 + i, 30)))
        .collect();
    DatasetManifest::new(LabelSet::numbered(1).unwrap(), records).unwrap()
}

#[test]
fn corpus_extraction_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = three_pages(dir.path());
    let script = stub_ocr_fixed(dir.path(), "memo");
    let config = config_for(&script, 50);
    let out_dir = dir.path().join("texts");

    let first = extract_corpus(&manifest, &config, &out_dir).unwrap();
    assert_eq!(first.count(ExtractionStatus::Extracted), 3);
    assert_eq!(first.headline(), "3 extracted, 0 skipped, 0 failed");
    for r in &first.manifest.records {
        let path = r.text_path.as_ref().unwrap();
        assert_eq!(path, &out_dir.join(format!("{}.txt", r.id)));
        assert_eq!(std::fs::read_to_string(path).unwrap(), "memo");
    }
    let bytes: Vec<Vec<u8>> = first
        .manifest
        .records
        .iter()
        .map(|r| std::fs::read(r.text_path.as_ref().unwrap()).unwrap())
        .collect();

    let again = extract_corpus(&first.manifest, &config, &out_dir).unwrap();
    assert_eq!(again.headline(), "0 extracted, 3 skipped, 0 failed");
    assert_eq!(again.manifest, first.manifest);
    // Also skipped when the caller passes the original, text-less manifest.
    let fresh = extract_corpus(&manifest, &config, &out_dir).unwrap();
    assert_eq!(fresh.count(ExtractionStatus::Skipped), 3);
    for (r, b) in again.manifest.records.iter().zip(&bytes) {
        assert_eq!(&std::fs::read(r.text_path.as_ref().unwrap()).unwrap(), b);
    }
}

#[test]
fn partial_failures_are_collected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = three_pages(dir.path());
    std::fs::write(manifest.records[1].image().unwrap(), b"not an image").unwrap();
    let script = stub_ocr_fixed(dir.path(), "memo");
    let summary = extract_corpus(
        &manifest,
        &config_for(&script, 50),
        &dir.path().join("texts"),
    )
    .unwrap();
    assert_eq!(summary.headline(), "2 extracted, 0 skipped, 1 failed");
    assert!(summary.has_failures());
    assert_eq!(summary.entries[1].id, "p1");
    assert_eq!(summary.entries[1].status, ExtractionStatus::Failed);
    assert!(summary.manifest.records[1].text_path.is_none());
    let tsv = summary.render_tsv();
    assert!(tsv.starts_with("id\tstatus\tdetail\n"));
    assert!(tsv.lines().nth(2).unwrap().starts_with("p1\tfailed\t"));
}
