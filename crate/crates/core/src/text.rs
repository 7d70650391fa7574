//! Bag-of-words vectorization and the shallow text classifier.
//!
//! Pages become binary presence vectors over the K words that occur in the
//! most training documents; a single hidden ReLU layer maps them to class
//! scores.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::dataset::{ClassScores, DatasetManifest, PageRecord, Split};
use crate::error::{Error, Result};
use crate::nn::{
    build_network, sgd_train, ArtifactMetadata, InMemoryData, LayerSpec, ModelArtifact,
    NetworkSpec, Tensor, TextMetadata, TrainConfig, LR_MIN, TEXT_LR_MAX,
};

pub const DEFAULT_HIDDEN_WIDTH: usize = 256;

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Ordered word list; position is the feature index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(['\n', '\r']) {
                return Err(Error::Validation(format!("invalid vocabulary token {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary token {w:?}"
                )));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// One token per line; the line number is the index.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn parse(source: &str) -> Result<Self> {
        Self::from_words(source.lines().map(str::to_string).collect())
    }
}

/// Keeps the `k` tokens with the highest document frequency, ties broken
/// lexicographically. A corpus with fewer distinct tokens yields a smaller
/// vocabulary.
pub fn build_vocabulary(corpus: &[Vec<String>], k: usize) -> Result<Vocabulary> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "vocabulary size must be at least 1".into(),
        ));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(
        ranked
            .into_iter()
            .take(k)
            .map(|(t, _)| t.to_string())
            .collect(),
    )
}

/// Sparse binary presence vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowVector {
    dim: usize,
    present: BTreeSet<usize>,
}

impl BowVector {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn present(&self) -> &BTreeSet<usize> {
        &self.present
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.write_dense(&mut out);
        out
    }

    fn write_dense(&self, out: &mut [f64]) {
        out.fill(0.0);
        for &i in &self.present {
            out[i] = 1.0;
        }
    }
}

pub fn vectorize(vocabulary: &Vocabulary, tokens: &[String]) -> BowVector {
    BowVector {
        dim: vocabulary.len(),
        present: tokens
            .iter()
            .filter_map(|t| vocabulary.index_of(t))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextModelConfig {
    /// Vocabulary size (the K of BoW-K).
    pub k: usize,
    pub hidden_width: usize,
    pub train: TrainConfig,
}

impl TextModelConfig {
    /// Text learning-rate bounds (0.01 down to 1e-6).
    pub fn new(k: usize, epochs: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Ok(TextModelConfig {
            k,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            train: TrainConfig::for_samples(
                epochs,
                batch_size,
                TEXT_LR_MAX,
                LR_MIN,
                seed,
                batch_size,
            )?,
        })
    }

    pub fn with_hidden_width(mut self, width: usize) -> Self {
        self.hidden_width = width;
        self
    }
}

/// Input → Dense+ReLU → Dense → Softmax.
pub fn text_network_spec(
    vocab_size: usize,
    hidden_width: usize,
    classes: usize,
    seed: u64,
) -> NetworkSpec {
    NetworkSpec::new(
        vec![vocab_size],
        vec![
            LayerSpec::dense(vocab_size, hidden_width),
            LayerSpec::ReLU,
            LayerSpec::dense(hidden_width, classes),
            LayerSpec::Softmax,
        ],
        seed,
    )
}

fn read_tokens(records: &[&PageRecord]) -> Result<Vec<Vec<String>>> {
    records
        .iter()
        .map(|r| r.read_text().map(|t| tokenize(&t)))
        .collect()
}

/// Trains a BoW model on the train split. The vocabulary is built from the
/// train split only and embedded in the artifact.
pub fn train_text_model(
    manifest: &DatasetManifest,
    config: &TextModelConfig,
) -> Result<ModelArtifact> {
    let train: Vec<&PageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if config.hidden_width == 0 {
        return Err(Error::InvalidArgument(
            "hidden width must be positive".into(),
        ));
    }
    let corpus = read_tokens(&train)?;
    let vocabulary = build_vocabulary(&corpus, config.k)?;
    if vocabulary.is_empty() {
        return Err(Error::InvalidArgument(
            "training texts contain no tokens".into(),
        ));
    }
    let dim = vocabulary.len();
    let mut inputs = vec![0.0; dim * train.len()];
    for (slot, tokens) in inputs.chunks_mut(dim).zip(&corpus) {
        vectorize(&vocabulary, tokens).write_dense(slot);
    }
    let labels = train.iter().map(|r| r.label).collect();
    let data = InMemoryData::new(vec![dim], inputs, labels)?;
    let spec = text_network_spec(
        dim,
        config.hidden_width,
        manifest.num_classes(),
        config.train.seed,
    );
    let mut network = build_network(&spec)?;
    sgd_train(&mut network, &data, &config.train.fitted_to(train.len())?)?;
    Ok(ModelArtifact::new(
        network,
        ArtifactMetadata::Text(TextMetadata {
            requested_k: config.k,
            hidden_width: config.hidden_width,
            vocabulary,
        }),
    ))
}

fn text_metadata(artifact: &ModelArtifact) -> Result<&TextMetadata> {
    match &artifact.metadata {
        ArtifactMetadata::Text(meta) => Ok(meta),
        _ => Err(Error::Modality(format!(
            "expected a text model, got a {} model",
            artifact.modality()
        ))),
    }
}

pub fn predict_text(artifact: &ModelArtifact, text: &str) -> Result<ClassScores> {
    Ok(predict_text_batch(artifact, &[text])?.remove(0))
}

pub fn predict_text_batch<S: AsRef<str>>(
    artifact: &ModelArtifact,
    texts: &[S],
) -> Result<Vec<ClassScores>> {
    let meta = text_metadata(artifact)?;
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let dim = meta.vocabulary.len();
    let mut inputs = vec![0.0; dim * texts.len()];
    for (slot, text) in inputs.chunks_mut(dim).zip(texts) {
        vectorize(&meta.vocabulary, &tokenize(text.as_ref())).write_dense(slot);
    }
    artifact
        .network
        .predict(&Tensor::new(vec![texts.len(), dim], inputs)?)
}

/// Scores a manifest record with a text model.
pub fn predict_text_record(artifact: &ModelArtifact, record: &PageRecord) -> Result<ClassScores> {
    text_metadata(artifact)?;
    predict_text(artifact, &record.read_text()?)
}
