//! Plants one boilerplate page across classes and splits and audits the
//! corpus for it.

use docfusion::audit::{cross_split_contamination, find_text_duplicates};
use docfusion::dataset::{DatasetManifest, LabelSet, PageRecord, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut records = Vec::new();
    for i in 0..40 {
        let text = if i % 4 == 0 {
            "Image not available\n".to_string()
        } else {
            format!("invoice {i} for order {}", i * 13)
        };
        let path = dir.path().join(format!("p{i:02}.txt"));
        std::fs::write(&path, text)?;
        records.push(PageRecord {
            id: format!("p{i:02}"),
            image_path: None,
            text_path: Some(path),
            label: i % 3,
            split: if i < 30 { Split::Train } else { Split::Test },
        });
    }
    let manifest = DatasetManifest::new(LabelSet::numbered(3)?, records)?;

    let report = find_text_duplicates(&manifest);
    print!("{}", report.render_text());
    let leaked = cross_split_contamination(&report);
    println!("{} group(s) leak across splits", leaked.len());
    Ok(())
}
