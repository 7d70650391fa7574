//! Duplicate detection over a manifest, by normalized extracted text or by
//! exact decoded pixels.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetManifest, PageRecord, Split};
use crate::error::Result;
use crate::image::PageImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditMethod {
    Text,
    ImageHash,
}

impl fmt::Display for AuditMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditMethod::Text => "text",
            AuditMethod::ImageHash => "image-hash",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Member {
    pub id: String,
    pub split: Split,
    pub label: usize,
}

impl Member {
    fn of(record: &PageRecord) -> Self {
        Member {
            id: record.id.clone(),
            split: record.split,
            label: record.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateGroup {
    /// Hex SHA-256 of the normalized text or canonical pixel buffer.
    pub key: String,
    /// Sorted by record id.
    pub members: Vec<Member>,
}

impl DuplicateGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for m in &self.members {
            *counts.entry(m.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn spans_splits(&self) -> bool {
        self.split_counts().len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub method: AuditMethod,
    /// Sorted by descending size, then key.
    pub groups: Vec<DuplicateGroup>,
    /// Records whose normalized text is empty. Reported, never grouped.
    pub empty_text: Vec<Member>,
    /// Records that could not be read or decoded, with the reason.
    pub failures: Vec<(String, String)>,
    pub per_class_counts: BTreeMap<usize, usize>,
    pub per_split_counts: BTreeMap<Split, usize>,
    pub total_duplicate_instances: usize,
}

/// Lowercases, collapses whitespace runs to one space and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of dimensions and raw intensities after collapsing gray RGB, so
/// the container format does not matter.
pub fn image_digest(image: &PageImage) -> String {
    let canonical = image.canonical();
    let mut hasher = Sha256::new();
    for dim in [canonical.width(), canonical.height(), canonical.channels()] {
        hasher.update((dim as u64).to_le_bytes());
    }
    hasher.update(canonical.pixels());
    hex::encode(hasher.finalize())
}

enum Keyed {
    Key(String),
    Empty,
    Failed(String),
}

fn assemble(method: AuditMethod, manifest: &DatasetManifest, keys: Vec<Keyed>) -> AuditReport {
    let mut buckets: BTreeMap<String, Vec<Member>> = BTreeMap::new();
    let mut empty_text = Vec::new();
    let mut failures = Vec::new();
    for (record, keyed) in manifest.records.iter().zip(keys) {
        match keyed {
            Keyed::Key(k) => buckets.entry(k).or_default().push(Member::of(record)),
            Keyed::Empty => empty_text.push(Member::of(record)),
            Keyed::Failed(why) => failures.push((record.id.clone(), why)),
        }
    }
    let mut groups: Vec<DuplicateGroup> = buckets
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(key, mut members)| {
            members.sort();
            DuplicateGroup { key, members }
        })
        .collect();
    groups.sort_by(|a, b| b.size().cmp(&a.size()).then_with(|| a.key.cmp(&b.key)));
    empty_text.sort();
    failures.sort();
    let mut per_class_counts = BTreeMap::new();
    let mut per_split_counts = BTreeMap::new();
    for m in groups.iter().flat_map(|g| &g.members) {
        *per_class_counts.entry(m.label).or_insert(0) += 1;
        *per_split_counts.entry(m.split).or_insert(0) += 1;
    }
    AuditReport {
        method,
        total_duplicate_instances: groups.iter().map(DuplicateGroup::size).sum(),
        groups,
        empty_text,
        failures,
        per_class_counts,
        per_split_counts,
    }
}

/// Groups records by the digest of their normalized text.
pub fn find_text_duplicates(manifest: &DatasetManifest) -> AuditReport {
    let keys = manifest
        .records
        .par_iter()
        .map(|r| match r.read_text() {
            Ok(text) => {
                let canonical = normalize_text(&text);
                if canonical.is_empty() {
                    Keyed::Empty
                } else {
                    Keyed::Key(sha256_hex(canonical.as_bytes()))
                }
            }
            Err(e) => Keyed::Failed(e.to_string()),
        })
        .collect();
    assemble(AuditMethod::Text, manifest, keys)
}

/// Groups records whose decoded pixels are identical.
pub fn find_image_duplicates(manifest: &DatasetManifest) -> AuditReport {
    let keys = manifest
        .records
        .par_iter()
        .map(|r| match r.image().and_then(PageImage::decode) {
            Ok(img) => Keyed::Key(image_digest(&img)),
            Err(e) => Keyed::Failed(e.to_string()),
        })
        .collect();
    assemble(AuditMethod::ImageHash, manifest, keys)
}

/// Groups with members in more than one split.
pub fn cross_split_contamination(report: &AuditReport) -> Vec<DuplicateGroup> {
    report
        .groups
        .iter()
        .filter(|g| g.spans_splits())
        .cloned()
        .collect()
}

impl AuditReport {
    /// `(class, count)` ordered by descending count, ties by descending
    /// class index.
    pub fn class_table(&self) -> Vec<(usize, usize)> {
        let mut rows: Vec<(usize, usize)> = self
            .per_class_counts
            .iter()
            .map(|(&c, &n)| (c, n))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));
        rows
    }

    /// Human-readable report: summary, class table, split table and the
    /// groups spanning more than one split.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "duplicate audit ({})", self.method).unwrap();
        writeln!(out, "groups: {}", self.groups.len()).unwrap();
        writeln!(
            out,
            "duplicate instances: {}",
            self.total_duplicate_instances
        )
        .unwrap();
        if self.method == AuditMethod::Text {
            writeln!(
                out,
                "empty-text records (not grouped): {}",
                self.empty_text.len()
            )
            .unwrap();
        }
        writeln!(out, "unreadable records: {}", self.failures.len()).unwrap();
        out.push('\n');
        writeln!(out, "{:<6} {:>6}", "class", "count").unwrap();
        for (class, count) in self.class_table() {
            writeln!(out, "{class:<6} {count:>6}").unwrap();
        }
        writeln!(out, "{:<6} {:>6}", "total", self.total_duplicate_instances).unwrap();
        out.push('\n');
        writeln!(out, "{:<10} {:>6}", "split", "count").unwrap();
        for split in Split::ALL {
            let n = self.per_split_counts.get(&split).copied().unwrap_or(0);
            writeln!(out, "{:<10} {n:>6}", split.as_str()).unwrap();
        }
        out.push('\n');
        let contaminated = cross_split_contamination(self);
        writeln!(out, "cross-split groups: {}", contaminated.len()).unwrap();
        for g in &contaminated {
            let splits: Vec<String> = g
                .split_counts()
                .iter()
                .map(|(s, n)| format!("{s}={n}"))
                .collect();
            writeln!(
                out,
                "  {} size {} ({})",
                &g.key[..16],
                g.size(),
                splits.join(", ")
            )
            .unwrap();
        }
        for (id, why) in &self.failures {
            writeln!(out, "unreadable {id}: {why}").unwrap();
        }
        out
    }

    /// One row per duplicate instance: `id, split, label, group, method`.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("id\tsplit\tlabel\tgroup\tmethod\n");
        for g in &self.groups {
            for m in &g.members {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    m.id, m.split, m.label, g.key, self.method
                )
                .unwrap();
            }
        }
        out
    }
}

/// Runs the chosen audit method.
pub fn audit(manifest: &DatasetManifest, method: AuditMethod) -> Result<AuditReport> {
    Ok(match method {
        AuditMethod::Text => find_text_duplicates(manifest),
        AuditMethod::ImageHash => find_image_duplicates(manifest),
    })
}
