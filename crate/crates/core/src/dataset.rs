//! Label space, page records, dataset manifests and class-score vectors.
//!
//! The manifest is a line-oriented UTF-8 file:
//!
//! ```text
//! #labels: letter,form,email
//! p1	train	0	images/p1.png	text/p1.txt
//! p2	test	2	images/p2.png	-
//! ```
//!
//! Columns are tab separated: `id`, `split`, `label`, `image_path`,
//! `text_path`. A `-` marks an absent path. Relative paths are resolved
//! against the directory holding the manifest. Other lines starting with `#`
//! are comments.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability vector.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

/// Number of classes in the default (RVL-CDIP style) label space.
pub const DEFAULT_CLASS_COUNT: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Validation("label set is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Validation("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate class name {name:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    /// `class0 .. class{c-1}`.
    pub fn numbered(c: usize) -> Result<Self> {
        Self::new((0..c).map(|i| format!("class{i}")).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::numbered(DEFAULT_CLASS_COUNT).expect("numbered labels are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageRecord {
    pub id: String,
    pub image_path: Option<PathBuf>,
    pub text_path: Option<PathBuf>,
    pub label: usize,
    pub split: Split,
}

impl PageRecord {
    fn require_image(&self) -> Result<&Path> {
        self.image_path
            .as_deref()
            .ok_or_else(|| Error::MissingInput {
                record: self.id.clone(),
                detail: "record has no image".into(),
            })
    }

    fn require_text(&self) -> Result<&Path> {
        self.text_path
            .as_deref()
            .ok_or_else(|| Error::MissingInput {
                record: self.id.clone(),
                detail: "record has no text".into(),
            })
    }

    pub fn image(&self) -> Result<&Path> {
        self.require_image()
    }

    pub fn text(&self) -> Result<&Path> {
        self.require_text()
    }

    /// Reads the record's text file.
    pub fn read_text(&self) -> Result<String> {
        let path = self.require_text()?;
        std::fs::read_to_string(path).map_err(|e| Error::MissingInput {
            record: self.id.clone(),
            detail: format!("cannot read text {}: {e}", path.display()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub label_set: LabelSet,
    pub records: Vec<PageRecord>,
}

impl DatasetManifest {
    /// Builds a manifest, enforcing id uniqueness, label range and the
    /// at-least-one-modality rule.
    pub fn new(label_set: LabelSet, records: Vec<PageRecord>) -> Result<Self> {
        let manifest = DatasetManifest { label_set, records };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.label_set.len();
        let mut ids = HashSet::new();
        for r in &self.records {
            if r.id.is_empty() || r.id.contains(['\t', '\n']) {
                return Err(Error::Validation(format!("invalid record id {:?}", r.id)));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id {:?}", r.id)));
            }
            if r.label >= c {
                return Err(Error::Validation(format!(
                    "record {:?} has label {} outside [0, {c})",
                    r.id, r.label
                )));
            }
            if r.image_path.is_none() && r.text_path.is_none() {
                return Err(Error::Validation(format!(
                    "record {:?} has neither an image nor a text path",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filter_split(&self, split: Split) -> DatasetManifest {
        filter_split(self, split)
    }

    pub fn parse(source: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut label_set = None;
        let mut records = Vec::new();
        for (i, raw) in source.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#labels:") {
                if label_set.is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "duplicate #labels header".into(),
                    });
                }
                let names = rest
                    .trim()
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .collect();
                label_set = Some(LabelSet::new(names).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 5 tab-separated fields, found {}", fields.len()),
                });
            }
            let split = fields[1].parse::<Split>().map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let label = fields[2].parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("label {:?} is not a class index", fields[2]),
            })?;
            let path = |field: &str| -> Option<PathBuf> {
                match field {
                    "-" | "" => None,
                    p => Some(match base_dir {
                        Some(base) if Path::new(p).is_relative() => base.join(p),
                        _ => PathBuf::from(p),
                    }),
                }
            };
            records.push(PageRecord {
                id: fields[0].to_string(),
                split,
                label,
                image_path: path(fields[3]),
                text_path: path(fields[4]),
            });
        }
        let label_set = label_set.ok_or(Error::Parse {
            line: 0,
            message: "missing #labels header".into(),
        })?;
        DatasetManifest::new(label_set, records)
    }

    /// Renders the manifest in its on-disk format. Paths are written as stored.
    pub fn render(&self) -> String {
        let mut out = format!("#labels: {}\n", self.label_set.names().join(","));
        for r in &self.records {
            let path = |p: &Option<PathBuf>| {
                p.as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "-".into())
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.split,
                r.label,
                path(&r.image_path),
                path(&r.text_path)
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&source, path.parent())
}

pub fn filter_split(manifest: &DatasetManifest, split: Split) -> DatasetManifest {
    DatasetManifest {
        label_set: manifest.label_set.clone(),
        records: manifest
            .records
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect(),
    }
}

/// A length-c probability vector emitted by a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores(Vec<f64>);

impl ClassScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("class scores are empty".into()));
        }
        if values
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Validation("class score outside [0, 1]".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
            return Err(Error::Validation(format!("class scores sum to {sum}")));
        }
        Ok(ClassScores(values))
    }

    pub fn uniform(c: usize) -> Self {
        ClassScores(vec![1.0 / c as f64; c])
    }

    /// Numerically stable softmax of raw logits.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        ClassScores(exps.into_iter().map(|e| e / sum).collect())
    }

    pub(crate) fn from_softmax_row(values: Vec<f64>) -> Self {
        ClassScores(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_class(scores: &ClassScores) -> usize {
    argmax(scores.values())
}
