mod common;

use std::collections::BTreeSet;

use common::{planted_duplicate_manifest, PLANTED_COUNTS};
use docfusion::audit::{
    audit, cross_split_contamination, find_image_duplicates, find_text_duplicates, normalize_text,
    AuditMethod,
};
use docfusion::dataset::{DatasetManifest, LabelSet, PageRecord, Split};
use docfusion::image::PageImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXPECTED_REPORT: &str = "\
duplicate audit (text)
groups: 1
duplicate instances: 426
empty-text records (not grouped): 0
unreadable records: 0

class   count
4         322
9          30
12         22
5          22
1          21
10          3
15          2
13          1
11          1
7           1
0           1
total     426

split       count
train         373
validation      0
test           53

cross-split groups: 1
  1a0cff41fb0ca20c size 426 (train=373, test=53)
";

#[test]
fn planted_fixture_report_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = planted_duplicate_manifest(dir.path(), &PLANTED_COUNTS, 373, 40);
    let report = find_text_duplicates(&manifest);
    assert_eq!(report.render_text(), EXPECTED_REPORT);

    let tsv = report.render_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "id\tsplit\tlabel\tgroup\tmethod");
    assert_eq!(lines.len(), 427);
    assert!(lines[1].starts_with("dup0000\ttrain\t0\t1a0cff41"));
    assert!(lines[1].ends_with("\ttext"));
}

#[test]
fn contamination_flags_exactly_the_planted_group() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = planted_duplicate_manifest(dir.path(), &PLANTED_COUNTS, 373, 20);
    // A second duplicate group that stays inside the train split.
    for i in 0..2 {
        let path = dir.path().join(format!("texts/inside{i}.txt"));
        std::fs::write(&path, "Quarterly REPORT\n").unwrap();
        manifest.records.push(PageRecord {
            id: format!("inside{i}"),
            image_path: None,
            text_path: Some(path),
            label: 3,
            split: Split::Train,
        });
    }
    let report = find_text_duplicates(&manifest);
    assert_eq!(report.groups.len(), 2);
    let flagged = cross_split_contamination(&report);
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].key, report.groups[0].key);
    let splits = flagged[0].split_counts();
    assert_eq!(splits.get(&Split::Train), Some(&373));
    assert_eq!(splits.get(&Split::Test), Some(&53));
    assert_eq!(report.total_duplicate_instances, 428);
    assert_eq!(report.per_class_counts.values().sum::<usize>(), 428);
}

#[test]
fn report_is_independent_of_record_order() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = planted_duplicate_manifest(dir.path(), &PLANTED_COUNTS, 373, 30);
    let mut shuffled = manifest.clone();
    shuffled.records.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let a = find_text_duplicates(&manifest);
    let b = find_text_duplicates(&shuffled);
    assert_eq!(a.render_text(), b.render_text());
    assert_eq!(a.render_tsv(), b.render_tsv());
}

#[test]
fn normalization_examples() {
    assert_eq!(
        normalize_text("Image  Not\nAvailable "),
        "image not available"
    );
    assert_eq!(normalize_text(""), "");
    assert_eq!(normalize_text("a\r\nb\tc"), normalize_text("a b\nc"));
}

fn text_records(dir: &std::path::Path, texts: &[&str]) -> DatasetManifest {
    let records = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let path = dir.join(format!("t{i}.txt"));
            std::fs::write(&path, t).unwrap();
            PageRecord {
                id: format!("t{i}"),
                image_path: None,
                text_path: Some(path),
                label: i % 2,
                split: Split::Train,
            }
        })
        .collect();
    DatasetManifest::new(LabelSet::numbered(2).unwrap(), records).unwrap()
}

#[test]
fn small_text_examples() {
    let dir = tempfile::tempdir().unwrap();
    let m = text_records(dir.path(), &["alpha", "beta", "gamma", "Beta\n", "delta"]);
    let r = find_text_duplicates(&m);
    assert_eq!(r.groups.len(), 1);
    assert_eq!(r.total_duplicate_instances, 2);

    let none = text_records(dir.path(), &["one", "two", "three"]);
    let r = find_text_duplicates(&none);
    assert!(r.groups.is_empty());
    assert_eq!(r.total_duplicate_instances, 0);
    assert!(cross_split_contamination(&r).is_empty());

    let blanks = text_records(dir.path(), &["", "  \n", "x", "x"]);
    let r = find_text_duplicates(&blanks);
    assert_eq!(r.groups.len(), 1);
    assert_eq!(r.empty_text.len(), 2);
    assert!(r
        .render_text()
        .contains("empty-text records (not grouped): 2\n"));
}

#[test]
fn unreadable_text_is_collected() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = text_records(dir.path(), &["same", "same"]);
    m.records[0].text_path = Some(dir.path().join("missing.txt"));
    let r = audit(&m, AuditMethod::Text).unwrap();
    assert_eq!(r.failures.len(), 1);
    assert!(r.groups.is_empty());
}

fn image_manifest(dir: &std::path::Path, files: &[std::path::PathBuf]) -> DatasetManifest {
    let records = files
        .iter()
        .enumerate()
        .map(|(i, p)| PageRecord {
            id: format!("i{i}"),
            image_path: Some(p.clone()),
            text_path: Some(dir.join(format!("i{i}.txt"))),
            label: 0,
            split: if i % 2 == 0 {
                Split::Train
            } else {
                Split::Validation
            },
        })
        .collect();
    DatasetManifest::new(LabelSet::numbered(1).unwrap(), records).unwrap()
}

fn page(seed: u8) -> PageImage {
    let pixels = (0..12 * 9).map(|i| (i as u8).wrapping_mul(seed)).collect();
    PageImage::new(12, 9, 1, pixels).unwrap()
}

#[test]
fn image_hash_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = page(3);
    a.save_png(&d.join("a.png")).unwrap();
    std::fs::copy(d.join("a.png"), d.join("a-copy.png")).unwrap();
    a.save_pnm(&d.join("a.pgm")).unwrap();
    let mut near = a.clone();
    near.pixels_mut()[0] ^= 1;
    near.save_png(&d.join("near.png")).unwrap();
    page(5).save_png(&d.join("b.png")).unwrap();

    let files: Vec<_> = ["a.png", "a-copy.png", "a.pgm", "near.png", "b.png"]
        .iter()
        .map(|f| d.join(f))
        .collect();
    let r = find_image_duplicates(&image_manifest(d, &files));
    assert_eq!(r.groups.len(), 1);
    let ids: Vec<&str> = r.groups[0].members.iter().map(|m| m.id.as_str()).collect();
    assert_eq!(ids, ["i0", "i1", "i2"]);
    assert_eq!(cross_split_contamination(&r).len(), 1);
    assert!(r
        .render_text()
        .starts_with("duplicate audit (image-hash)\n"));
    assert!(!r.render_text().contains("empty-text"));
}

// With a deterministic OCR, equal pixels imply equal text, so every image
// group must sit inside one text group.
#[test]
fn pixel_groups_refine_text_groups() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let seeds = [3u8, 3, 5, 7, 7, 7, 9, 11, 11];
    let files: Vec<_> = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let p = d.join(format!("p{i}.png"));
            page(s).save_png(&p).unwrap();
            // Coarse "OCR": seeds 5 and 7 read alike, as do 9 and 11.
            std::fs::write(d.join(format!("i{i}.txt")), format!("form {}", s / 4)).unwrap();
            p
        })
        .collect();
    let m = image_manifest(d, &files);
    let by_image = find_image_duplicates(&m);
    let by_text = find_text_duplicates(&m);
    assert_eq!(by_image.groups.len(), 3);
    for g in &by_image.groups {
        let ids: BTreeSet<&String> = g.members.iter().map(|m| &m.id).collect();
        let host = by_text
            .groups
            .iter()
            .find(|t| t.members.iter().any(|m| ids.contains(&m.id)))
            .expect("image group has a text group");
        let host_ids: BTreeSet<&String> = host.members.iter().map(|m| &m.id).collect();
        assert!(ids.is_subset(&host_ids));
    }
    let grouped: Vec<&String> = by_image
        .groups
        .iter()
        .flat_map(|g| g.members.iter().map(|m| &m.id))
        .collect();
    let unique: BTreeSet<&String> = grouped.iter().copied().collect();
    assert_eq!(grouped.len(), unique.len());
}
