use std::fmt::Write as _;

use crate::dataset::{argmax_class, ClassScores, DatasetManifest, PageRecord, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub split: Split,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl AccuracyReport {
    pub fn from_predictions(
        split: Split,
        classes: usize,
        labels: &[usize],
        predicted: &[usize],
    ) -> Result<Self> {
        if labels.is_empty() || labels.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut confusion = vec![vec![0; classes]; classes];
        for (&y, &p) in labels.iter().zip(predicted) {
            if y >= classes || p >= classes {
                return Err(Error::InvalidArgument(format!(
                    "class index outside [0, {classes})"
                )));
            }
            confusion[y][p] += 1;
        }
        let correct = (0..classes).map(|k| confusion[k][k]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        Ok(AccuracyReport {
            split,
            total: labels.len(),
            correct,
            accuracy: correct as f64 / labels.len() as f64,
            per_class,
            confusion,
        })
    }

    /// Tab-separated summary, per-class accuracies and confusion matrix.
    pub fn render_tsv(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        writeln!(out, "split\t{}", self.split).unwrap();
        writeln!(
            out,
            "accuracy\t{:.6}\t{}\t{}",
            self.accuracy, self.correct, self.total
        )
        .unwrap();
        for (k, acc) in self.per_class.iter().enumerate() {
            let name = class_names.get(k).map(String::as_str).unwrap_or("?");
            match acc {
                Some(a) => writeln!(out, "class\t{name}\t{a:.6}").unwrap(),
                None => writeln!(out, "class\t{name}\t-").unwrap(),
            }
        }
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(out, "confusion\t{}", cells.join("\t")).unwrap();
        }
        out
    }
}

/// Scores every record of `split` with `predict` and compares the argmax
/// class against the label.
pub fn evaluate<F>(predict: F, manifest: &DatasetManifest, split: Split) -> Result<AccuracyReport>
where
    F: FnOnce(&[&PageRecord]) -> Result<Vec<ClassScores>>,
{
    let records: Vec<&PageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "the {split} split is empty"
        )));
    }
    let scores = predict(&records)?;
    if scores.len() != records.len() {
        return Err(Error::Shape(format!(
            "predictor returned {} scores for {} records",
            scores.len(),
            records.len()
        )));
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let predicted: Vec<usize> = scores.iter().map(argmax_class).collect();
    AccuracyReport::from_predictions(split, manifest.num_classes(), &labels, &predicted)
}

/// One row of a results table: the models involved and their accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub models: Vec<String>,
    pub validation: Option<f64>,
    pub test: Option<f64>,
}

/// Accuracy table with one column per model role followed by validation
/// and test accuracy, e.g. `Image Model | Text Model | Validation | Test`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub roles: Vec<String>,
    pub rows: Vec<ResultsRow>,
}

impl ResultsTable {
    pub fn new(roles: Vec<String>) -> Self {
        ResultsTable {
            roles,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: ResultsRow) -> Result<()> {
        if row.models.len() != self.roles.len() {
            return Err(Error::Shape(format!(
                "row names {} models, table has {} roles",
                row.models.len(),
                self.roles.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h = self.roles.clone();
        h.push("Validation".into());
        h.push("Test".into());
        h
    }

    fn cells(&self, percent: bool) -> Vec<Vec<String>> {
        let fmt = |v: Option<f64>| match v {
            Some(a) if percent => format!("{:.2}%", 100.0 * a),
            Some(a) => format!("{a:.6}"),
            None => "-".to_string(),
        };
        self.rows
            .iter()
            .map(|r| {
                let mut c = r.models.clone();
                c.push(fmt(r.validation));
                c.push(fmt(r.test));
                c
            })
            .collect()
    }

    /// Aligned plain-text table with percentages.
    pub fn render_text(&self) -> String {
        let header = self.header();
        let body = self.cells(true);
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|r| r[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = line(&header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        for row in &body {
            out.push_str(&line(row));
        }
        out
    }

    /// Tab-separated table with accuracies as fractions.
    pub fn render_tsv(&self) -> String {
        let mut out = self.header().join("\t");
        out.push('\n');
        for row in self.cells(false) {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}
