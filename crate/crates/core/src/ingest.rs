//! Text extraction through an external OCR command.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, PageRecord};
use crate::error::{Error, Result};
use crate::image::PageImage;

pub const DEFAULT_OCR_LONGEST_SIDE: usize = 3300;
/// Combined legacy/LSTM engine with automatic page segmentation.
pub const DEFAULT_ENGINE_ARGS: &str = "--oem 3 --psm 3";
pub const DEFAULT_COMMAND_TEMPLATE: &str = "tesseract {input} {output} {args}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcrConfig {
    /// Shell command run through `sh -c`. `{input}` and `{output}` are
    /// replaced by quoted paths, `{args}` by `engine_args` verbatim.
    pub command_template: String,
    pub longest_side_px: usize,
    pub engine_args: String,
    /// Upper bound on concurrently running OCR processes.
    pub parallelism: usize,
}

impl Default for OcrConfig {
    fn default() -> Self {
        OcrConfig {
            command_template: DEFAULT_COMMAND_TEMPLATE.into(),
            longest_side_px: DEFAULT_OCR_LONGEST_SIDE,
            engine_args: DEFAULT_ENGINE_ARGS.into(),
            parallelism: 1,
        }
    }
}

impl OcrConfig {
    pub fn validate(&self) -> Result<()> {
        for placeholder in ["{input}", "{output}"] {
            let n = self.command_template.matches(placeholder).count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "OCR command template must contain {placeholder} exactly once, found {n}"
                )));
            }
        }
        if self.longest_side_px == 0 {
            return Err(Error::Config("longest_side_px must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("OCR parallelism must be at least 1".into()));
        }
        Ok(())
    }

    fn command_line(&self, input: &Path, output: &Path) -> String {
        self.command_template
            .replace("{input}", &shell_quote(&input.to_string_lossy()))
            .replace("{output}", &shell_quote(&output.to_string_lossy()))
            .replace("{args}", &self.engine_args)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "'\\''"))
}

/// Dimensions with the longer side set to `longest` and the other scaled
/// proportionally, rounded, at least 1.
pub fn ocr_dimensions(width: usize, height: usize, longest: usize) -> Result<(usize, usize)> {
    if width == 0 || height == 0 || longest == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot resize {width}x{height} to longest side {longest}"
        )));
    }
    let scale = |short: usize, long: usize| {
        ((short as f64 * longest as f64 / long as f64).round() as usize).max(1)
    };
    Ok(if width >= height {
        (longest, scale(height, width))
    } else {
        (scale(width, height), longest)
    })
}

/// Bilinear resize so the longer side equals `longest`; applies to both
/// up- and downscaling.
pub fn resize_for_ocr(image: &PageImage, longest: usize) -> Result<PageImage> {
    let (w, h) = ocr_dimensions(image.width(), image.height(), longest)?;
    if (w, h) == (image.width(), image.height()) {
        return Ok(image.clone());
    }
    image.resize(w, h)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedText {
    pub text: String,
    /// The command produced bytes that were not valid UTF-8; they were
    /// replaced with U+FFFD.
    pub lossy: bool,
}

/// Resizes the record's image, runs the OCR command on it in a scratch
/// directory and returns the text it wrote.
pub fn extract_text(record: &PageRecord, config: &OcrConfig) -> Result<ExtractedText> {
    config.validate()?;
    let image = PageImage::decode(record.image()?)?;
    let resized = resize_for_ocr(&image, config.longest_side_px)?;
    let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = scratch.path().join("page.png");
    let output = scratch.path().join("out");
    resized.save_png(&input)?;
    let result = Command::new("sh")
        .arg("-c")
        .arg(config.command_line(&input, &output))
        .output()
        .map_err(|e| Error::Ocr(format!("{}: could not start shell: {e}", record.id)))?;
    if !result.status.success() {
        let stderr = String::from_utf8_lossy(&result.stderr);
        let status = match result.status.code() {
            Some(code) => format!("exit status {code}"),
            None => "terminated by signal".to_string(),
        };
        return Err(Error::Ocr(format!(
            "{}: OCR command failed with {status}: {}",
            record.id,
            stderr.trim()
        )));
    }
    // Tesseract appends `.txt` to the output base; other tools may not.
    let produced = [output.with_extension("txt"), output.clone()]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Ocr(format!("{}: OCR command wrote no output file", record.id)))?;
    let bytes = std::fs::read(&produced).map_err(|e| Error::io(&produced, e))?;
    Ok(match String::from_utf8(bytes) {
        Ok(text) => ExtractedText { text, lossy: false },
        Err(e) => ExtractedText {
            text: String::from_utf8_lossy(e.as_bytes()).into_owned(),
            lossy: true,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionStatus {
    Extracted,
    Skipped,
    Failed,
}

impl fmt::Display for ExtractionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractionStatus::Extracted => "extracted",
            ExtractionStatus::Skipped => "skipped",
            ExtractionStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionEntry {
    pub id: String,
    pub status: ExtractionStatus,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ExtractionSummary {
    pub entries: Vec<ExtractionEntry>,
    pub manifest: DatasetManifest,
}

impl ExtractionSummary {
    pub fn count(&self, status: ExtractionStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub fn has_failures(&self) -> bool {
        self.count(ExtractionStatus::Failed) > 0
    }

    /// `id\tstatus\tdetail` rows under a header.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("id\tstatus\tdetail\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.id,
                e.status,
                e.detail.replace(['\t', '\n'], " ")
            ));
        }
        out
    }

    pub fn headline(&self) -> String {
        format!(
            "{} extracted, {} skipped, {} failed",
            self.count(ExtractionStatus::Extracted),
            self.count(ExtractionStatus::Skipped),
            self.count(ExtractionStatus::Failed)
        )
    }
}

enum Plan {
    Skip(Option<PathBuf>, String),
    Run,
}

fn plan(record: &PageRecord, target: &Path) -> Plan {
    if let Some(existing) = record.text_path.as_ref().filter(|p| p.is_file()) {
        return Plan::Skip(Some(existing.clone()), "text already present".into());
    }
    if target.is_file() {
        return Plan::Skip(
            Some(target.to_path_buf()),
            "output file already present".into(),
        );
    }
    if record.image_path.is_none() {
        return Plan::Skip(None, "no image to extract from".into());
    }
    Plan::Run
}

/// Extracts text for every record that has an image but no text, writing
/// `<id>.txt` under `output_dir`. Failures are collected per record.
pub fn extract_corpus(
    manifest: &DatasetManifest,
    config: &OcrConfig,
    output_dir: &Path,
) -> Result<ExtractionSummary> {
    config.validate()?;
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start OCR workers: {e}")))?;
    let outcomes: Vec<(ExtractionEntry, Option<PathBuf>)> = pool.install(|| {
        manifest
            .records
            .par_iter()
            .map(|record| {
                let target = output_dir.join(format!("{}.txt", record.id));
                let entry = |status, detail: String| ExtractionEntry {
                    id: record.id.clone(),
                    status,
                    detail,
                };
                match plan(record, &target) {
                    Plan::Skip(path, why) => (
                        entry(ExtractionStatus::Skipped, why),
                        path.or(record.text_path.clone()),
                    ),
                    Plan::Run => match extract_text(record, config).and_then(|out| {
                        std::fs::write(&target, &out.text).map_err(|e| Error::io(&target, e))?;
                        Ok(out.lossy)
                    }) {
                        Ok(lossy) => {
                            let detail = if lossy { "invalid UTF-8 replaced" } else { "" };
                            (
                                entry(ExtractionStatus::Extracted, detail.into()),
                                Some(target),
                            )
                        }
                        Err(e) => (
                            entry(ExtractionStatus::Failed, e.to_string()),
                            record.text_path.clone(),
                        ),
                    },
                }
            })
            .collect()
    });
    let mut records = manifest.records.clone();
    let mut entries = Vec::with_capacity(outcomes.len());
    for (record, (entry, text_path)) in records.iter_mut().zip(outcomes) {
        record.text_path = text_path;
        entries.push(entry);
    }
    Ok(ExtractionSummary {
        entries,
        manifest: DatasetManifest::new(manifest.label_set.clone(), records)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ocr_dimension_examples() {
        assert_eq!(ocr_dimensions(1100, 850, 3300).unwrap(), (3300, 2550));
        assert_eq!(ocr_dimensions(850, 1100, 3300).unwrap(), (2550, 3300));
        assert_eq!(ocr_dimensions(3300, 2550, 3300).unwrap(), (3300, 2550));
        assert_eq!(ocr_dimensions(10000, 1, 3300).unwrap(), (3300, 1));
        assert!(ocr_dimensions(0, 5, 3300).is_err());
    }

    #[test]
    fn template_validation() {
        assert!(OcrConfig::default().validate().is_ok());
        let mut c = OcrConfig {
            command_template: "ocr {input}".into(),
            ..OcrConfig::default()
        };
        assert!(c.validate().is_err());
        c.command_template = "ocr {input} {output} {output}".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn quoting_survives_spaces_and_quotes() {
        let c = OcrConfig {
            command_template: "cat {input} > {output}".into(),
            ..OcrConfig::default()
        };
        let line = c.command_line(Path::new("/tmp/a b/it's.png"), Path::new("/o"));
        assert_eq!(line, "cat '/tmp/a b/it'\\''s.png' > '/o'");
    }
}
