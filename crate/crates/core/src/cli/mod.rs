//! The `docfusion` command line.
//!
//! Output layout under the run's output directory:
//!
//! | path                               | written by          |
//! |------------------------------------|---------------------|
//! | `texts/<id>.txt`                   | `extract`           |
//! | `extraction.tsv`, `manifest.tsv`   | `extract`           |
//! | `models/text-bow-<K>.dfm`          | `train text`        |
//! | `models/image-<preset>-<side>.dfm` | `train image`       |
//! | `models/fused.forest`              | `fuse`              |
//! | `reports/fusion.{txt,tsv}`         | `fuse`              |
//! | `reports/evaluate-<name>.{txt,tsv}`| `evaluate`          |
//! | `reports/audit-<method>.{txt,tsv}` | `audit`             |
//! | `run.log`                          | `train`, `fuse`     |

mod config;

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{config_hash, ImageSection, RunConfig, TextSection};

use crate::audit::{audit, cross_split_contamination, AuditMethod};
use crate::dataset::{DatasetManifest, PageRecord, Split};
use crate::error::{Error, Result};
use crate::fusion::{
    evaluate, predict_fused_records, score_records, train_meta, AccuracyReport, BoostedForest,
    ComponentTrainer, FusionComponent, MetaSource, ResultsRow, ResultsTable,
};
use crate::ingest::extract_corpus;
use crate::nn::{load_model, save_model, ArtifactMetadata, ModelArtifact};

pub const EXIT_OK: i32 = 0;
/// Runtime failure: I/O, decoding, training.
pub const EXIT_FAILURE: i32 = 1;
/// Bad arguments, configuration or inputs, detected before any output.
pub const EXIT_INVALID: i32 = 2;
/// `extract` finished but some records failed.
pub const EXIT_PARTIAL_EXTRACTION: i32 = 3;
/// `audit` found duplicate groups spanning more than one split.
pub const EXIT_CONTAMINATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "docfusion",
    version,
    about = "Multimodal page classification with late fusion"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    /// Validation and test.
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Text,
    Image,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// OCR every image-only record and write an updated manifest.
    Extract,
    /// Train component models; `text` trains one model per vocabulary size.
    Train {
        #[arg(value_enum)]
        modality: Modality,
        /// Vocabulary sizes, overriding `text.vocab_sizes`.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Train the meta-classifier over component models.
    Fuse {
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        /// Permit fusing a single component.
        #[arg(long)]
        allow_single: bool,
    },
    /// Report accuracy of a model, or of a forest over its components.
    Evaluate {
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        #[arg(long)]
        forest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
    },
    /// Look for duplicated pages.
    Audit {
        #[arg(long, value_enum, default_value = "text")]
        method: MethodChoice,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// writing reports to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_)
        | Error::Validation(_)
        | Error::Parse { .. }
        | Error::InvalidArgument(_)
        | Error::Modality(_)
        | Error::MissingInput { .. }
        | Error::Format(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) if !path.is_file() => {
            return Err(Error::Config(format!(
                "config file {} does not exist",
                path.display()
            )))
        }
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(m) = &common.manifest {
        config.manifest = Some(m.clone());
    }
    if let Some(o) = &common.output_dir {
        config.output_dir = o.clone();
    }
    config.validate()?;
    Ok(config)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let mut config = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Extract => cmd_extract(&config, out),
        Command::Train { modality, k } => {
            if !k.is_empty() {
                config.text.vocab_sizes = k.clone();
                config.validate()?;
            }
            cmd_train(&config, *modality, out)
        }
        Command::Fuse {
            artifacts,
            allow_single,
        } => cmd_fuse(&config, artifacts, *allow_single, out),
        Command::Evaluate {
            artifacts,
            forest,
            split,
        } => cmd_evaluate(&config, artifacts, forest.as_deref(), *split, out),
        Command::Audit { method } => cmd_audit(&config, *method, out),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn append_run_log(
    config: &RunConfig,
    name: &str,
    description: &str,
    validation: Option<f64>,
) -> Result<()> {
    let path = config.output_dir.join("run.log");
    let accuracy = validation.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
    let line = format!(
        "model={name}\tconfig_hash={}\tseed={}\tvalidation_accuracy={accuracy}\n",
        config_hash(description),
        config.seed
    );
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    file.write_all(line.as_bytes())
        .map_err(|e| Error::io(&path, e))
}

fn has_split(manifest: &DatasetManifest, split: Split) -> bool {
    manifest.records.iter().any(|r| r.split == split)
}

/// Accuracy on `split`, or `None` when the split is empty.
fn split_accuracy<F>(predict: F, manifest: &DatasetManifest, split: Split) -> Result<Option<f64>>
where
    F: FnOnce(&[&PageRecord]) -> Result<Vec<crate::dataset::ClassScores>>,
{
    if !has_split(manifest, split) {
        return Ok(None);
    }
    Ok(Some(evaluate(predict, manifest, split)?.accuracy))
}

/// Stores paths under `base` relative to it so the manifest can move with
/// the directory.
fn relative_to(manifest: &DatasetManifest, base: &Path) -> DatasetManifest {
    let rel = |p: &Option<PathBuf>| {
        p.as_ref().map(|p| {
            p.strip_prefix(base)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| p.clone())
        })
    };
    let mut m = manifest.clone();
    for r in &mut m.records {
        r.image_path = rel(&r.image_path);
        r.text_path = rel(&r.text_path);
    }
    m
}

fn cmd_extract(config: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let manifest = config.load_manifest()?;
    let summary = extract_corpus(&manifest, &config.ocr, &config.output_dir.join("texts"))?;
    write_file(
        &config.output_dir.join("extraction.tsv"),
        &summary.render_tsv(),
    )?;
    relative_to(&summary.manifest, &config.output_dir)
        .save(&config.output_dir.join("manifest.tsv"))?;
    write_out(out, &format!("{}\n", summary.headline()))?;
    for e in summary
        .entries
        .iter()
        .filter(|e| e.status == crate::ingest::ExtractionStatus::Failed)
    {
        write_out(out, &format!("failed {}: {}\n", e.id, e.detail))?;
    }
    Ok(if summary.has_failures() {
        EXIT_PARTIAL_EXTRACTION
    } else {
        EXIT_OK
    })
}

fn require_inputs(manifest: &DatasetManifest, modality: Modality) -> Result<()> {
    let missing = manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Train)
        .find(|r| match modality {
            Modality::Text => r.text_path.as_ref().is_none_or(|p| !p.is_file()),
            Modality::Image => r.image_path.as_ref().is_none_or(|p| !p.is_file()),
        });
    match missing {
        Some(r) => Err(Error::MissingInput {
            record: r.id.clone(),
            detail: format!(
                "{} file missing",
                if modality == Modality::Text {
                    "text"
                } else {
                    "image"
                }
            ),
        }),
        None => Ok(()),
    }
}

pub fn text_artifact_name(k: usize) -> String {
    format!("text-bow-{k}")
}

pub fn image_artifact_name(section: &ImageSection) -> String {
    format!("image-{}-{}", section.preset, section.side)
}

fn cmd_train(config: &RunConfig, modality: Modality, out: &mut dyn Write) -> Result<i32> {
    let manifest = config.load_manifest()?;
    require_inputs(&manifest, modality)?;
    let models = config.output_dir.join("models");
    create_dir(&models)?;
    let mut trained: Vec<(String, String, ModelArtifact)> = Vec::new();
    match modality {
        Modality::Text => {
            for &k in &config.text.vocab_sizes {
                let model_config = config.text_model(k)?;
                let artifact = model_config.fit(&manifest)?;
                trained.push((text_artifact_name(k), format!("{model_config:?}"), artifact));
            }
        }
        Modality::Image => {
            let model_config = config.image_model(config.image.preset(), config.image.side)?;
            let artifact = model_config.fit(&manifest)?;
            trained.push((
                image_artifact_name(&config.image),
                format!("{model_config:?}"),
                artifact,
            ));
        }
    }
    for (name, description, artifact) in trained {
        let path = models.join(format!("{name}.dfm"));
        save_model(&artifact, &path)?;
        let validation = split_accuracy(
            |rs| score_records(&artifact, rs),
            &manifest,
            Split::Validation,
        )?;
        append_run_log(config, &name, &description, validation)?;
        let shown = validation.map_or_else(|| "-".into(), |a| format!("{:.2}%", 100.0 * a));
        write_out(out, &format!("{name}\tvalidation {shown}\n"))?;
    }
    Ok(EXIT_OK)
}

fn artifact_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn load_artifacts(paths: &[PathBuf]) -> Result<Vec<(String, ModelArtifact)>> {
    paths
        .iter()
        .map(|p| {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "model artifact {} does not exist",
                    p.display()
                )));
            }
            Ok((artifact_stem(p), load_model(p)?))
        })
        .collect()
}

fn trainer_for(config: &RunConfig, artifact: &ModelArtifact) -> Result<Box<dyn ComponentTrainer>> {
    Ok(match &artifact.metadata {
        ArtifactMetadata::Text(meta) => {
            let mut c = config.text_model(meta.requested_k)?;
            c.hidden_width = meta.hidden_width;
            Box::new(c)
        }
        ArtifactMetadata::Image(meta) => {
            Box::new(config.image_model(meta.preset.clone(), meta.side)?)
        }
        ArtifactMetadata::None => {
            return Err(Error::Config(
                "component artifact carries no modality metadata".into(),
            ))
        }
    })
}

/// Column names for a results report, numbered when a modality
/// repeats.
fn roles(artifacts: &[(String, ModelArtifact)]) -> Vec<String> {
    let base: Vec<&str> = artifacts
        .iter()
        .map(|(_, a)| match a.metadata {
            ArtifactMetadata::Text(_) => "Text Model",
            ArtifactMetadata::Image(_) => "Image Model",
            ArtifactMetadata::None => "Model",
        })
        .collect();
    base.iter()
        .enumerate()
        .map(|(i, b)| {
            let total = base.iter().filter(|x| *x == b).count();
            if total == 1 {
                b.to_string()
            } else {
                format!("{b} {}", base[..=i].iter().filter(|x| *x == b).count())
            }
        })
        .collect()
}

fn cmd_fuse(
    config: &RunConfig,
    paths: &[PathBuf],
    allow_single: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    if paths.len() < 2 && !allow_single {
        return Err(Error::Config(
            "fusion needs at least two component models (or --allow-single)".into(),
        ));
    }
    let manifest = config.load_manifest()?;
    let fusion = config.fusion_config()?;
    let artifacts = load_artifacts(paths)?;
    let trainers = if fusion.meta_source == MetaSource::OutOfFold {
        artifacts
            .iter()
            .map(|(_, a)| trainer_for(config, a).map(Some))
            .collect::<Result<Vec<_>>>()?
    } else {
        artifacts.iter().map(|_| None).collect()
    };
    let components: Vec<FusionComponent> = artifacts
        .iter()
        .zip(&trainers)
        .map(|((name, artifact), trainer)| FusionComponent {
            name: name.clone(),
            artifact: artifact.clone(),
            trainer: trainer.as_deref(),
        })
        .collect();
    let (forest, _) = train_meta(&components, &manifest, &fusion)?;
    let models = config.output_dir.join("models");
    create_dir(&models)?;
    forest.save(&models.join("fused.forest"))?;

    let ordered = order_by_forest(&forest, artifacts)?;
    let mut table = ResultsTable::new(roles(&ordered));
    let names: Vec<String> = ordered.iter().map(|(n, _)| n.clone()).collect();
    for (i, (name, artifact)) in ordered.iter().enumerate() {
        let mut models = vec!["-".to_string(); ordered.len()];
        models[i] = name.clone();
        table.push(ResultsRow {
            models,
            validation: split_accuracy(
                |rs| score_records(artifact, rs),
                &manifest,
                Split::Validation,
            )?,
            test: split_accuracy(|rs| score_records(artifact, rs), &manifest, Split::Test)?,
        })?;
    }
    let refs: Vec<&ModelArtifact> = ordered.iter().map(|(_, a)| a).collect();
    let fused = |split| {
        split_accuracy(
            |rs| predict_fused_records(&forest, &refs, rs),
            &manifest,
            split,
        )
    };
    let validation = fused(Split::Validation)?;
    table.push(ResultsRow {
        models: names,
        validation,
        test: fused(Split::Test)?,
    })?;
    let reports = config.output_dir.join("reports");
    write_file(&reports.join("fusion.txt"), &table.render_text())?;
    write_file(&reports.join("fusion.tsv"), &table.render_tsv())?;
    append_run_log(config, "fused", &format!("{fusion:?}"), validation)?;
    write_out(out, &table.render_text())?;
    Ok(EXIT_OK)
}

/// Reorders artifacts to the component order the forest was trained with.
fn order_by_forest(
    forest: &BoostedForest,
    artifacts: Vec<(String, ModelArtifact)>,
) -> Result<Vec<(String, ModelArtifact)>> {
    if forest.components().is_empty() {
        return Ok(artifacts);
    }
    if forest.components().len() != artifacts.len() {
        return Err(Error::Config(format!(
            "forest expects {} components, got {}",
            forest.components().len(),
            artifacts.len()
        )));
    }
    let mut pool: Vec<Option<(String, ModelArtifact)>> = artifacts.into_iter().map(Some).collect();
    forest
        .components()
        .iter()
        .map(|name| {
            pool.iter_mut()
                .find(|slot| slot.as_ref().is_some_and(|(n, _)| n == name))
                .and_then(Option::take)
                .ok_or_else(|| Error::Config(format!("forest expects a component named `{name}`")))
        })
        .collect()
}

fn splits_for(choice: SplitChoice, manifest: &DatasetManifest) -> Result<Vec<Split>> {
    let wanted = match choice {
        SplitChoice::All => vec![Split::Validation, Split::Test],
        SplitChoice::Train => vec![Split::Train],
        SplitChoice::Validation => vec![Split::Validation],
        SplitChoice::Test => vec![Split::Test],
    };
    let present: Vec<Split> = wanted
        .into_iter()
        .filter(|&s| has_split(manifest, s))
        .collect();
    if present.is_empty() {
        return Err(Error::InvalidArgument(
            "no records in the requested split".into(),
        ));
    }
    Ok(present)
}

fn render_accuracy(
    name: &str,
    reports: &[AccuracyReport],
    class_names: &[String],
) -> (String, String) {
    let mut table = ResultsTable::new(vec!["Model".into()]);
    let find = |s: Split| reports.iter().find(|r| r.split == s).map(|r| r.accuracy);
    table
        .push(ResultsRow {
            models: vec![name.to_string()],
            validation: find(Split::Validation),
            test: find(Split::Test),
        })
        .expect("one role, one model");
    let mut text = table.render_text();
    let mut tsv = String::new();
    for r in reports {
        text.push_str(&format!(
            "\n{} accuracy {:.2}% ({}/{})\n",
            r.split,
            100.0 * r.accuracy,
            r.correct,
            r.total
        ));
        for (k, acc) in r.per_class.iter().enumerate() {
            if let Some(a) = acc {
                text.push_str(&format!("  {:<24} {:>7.2}%\n", class_names[k], 100.0 * a));
            }
        }
        text.push_str("confusion (rows true, columns predicted)\n");
        for row in &r.confusion {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>4}")).collect();
            text.push_str(&format!("  {}\n", cells.join("")));
        }
        tsv.push_str(&r.render_tsv(class_names));
    }
    (text, tsv)
}

fn cmd_evaluate(
    config: &RunConfig,
    paths: &[PathBuf],
    forest_path: Option<&Path>,
    split: SplitChoice,
    out: &mut dyn Write,
) -> Result<i32> {
    let manifest = config.load_manifest()?;
    let splits = splits_for(split, &manifest)?;
    let artifacts = load_artifacts(paths)?;
    let mut evaluated: Vec<(String, Vec<AccuracyReport>)> = Vec::new();
    if let Some(fp) = forest_path {
        if !fp.is_file() {
            return Err(Error::Config(format!(
                "forest {} does not exist",
                fp.display()
            )));
        }
        let forest = BoostedForest::load(fp)?;
        let ordered = order_by_forest(&forest, artifacts)?;
        let refs: Vec<&ModelArtifact> = ordered.iter().map(|(_, a)| a).collect();
        let reports = splits
            .iter()
            .map(|&s| evaluate(|rs| predict_fused_records(&forest, &refs, rs), &manifest, s))
            .collect::<Result<Vec<_>>>()?;
        evaluated.push((artifact_stem(fp), reports));
    } else {
        for (name, artifact) in &artifacts {
            let reports = splits
                .iter()
                .map(|&s| evaluate(|rs| score_records(artifact, rs), &manifest, s))
                .collect::<Result<Vec<_>>>()?;
            evaluated.push((name.clone(), reports));
        }
    }
    let reports_dir = config.output_dir.join("reports");
    for (name, reports) in &evaluated {
        let (text, tsv) = render_accuracy(name, reports, manifest.label_set.names());
        write_file(&reports_dir.join(format!("evaluate-{name}.txt")), &text)?;
        write_file(&reports_dir.join(format!("evaluate-{name}.tsv")), &tsv)?;
        write_out(out, &text)?;
    }
    Ok(EXIT_OK)
}

fn cmd_audit(config: &RunConfig, method: MethodChoice, out: &mut dyn Write) -> Result<i32> {
    let manifest = config.load_manifest()?;
    let method = match method {
        MethodChoice::Text => AuditMethod::Text,
        MethodChoice::Image => AuditMethod::ImageHash,
    };
    let report = audit(&manifest, method)?;
    let reports = config.output_dir.join("reports");
    write_file(
        &reports.join(format!("audit-{method}.txt")),
        &report.render_text(),
    )?;
    write_file(
        &reports.join(format!("audit-{method}.tsv")),
        &report.render_tsv(),
    )?;
    write_out(out, &report.render_text())?;
    Ok(if cross_split_contamination(&report).is_empty() {
        EXIT_OK
    } else {
        EXIT_CONTAMINATION
    })
}
