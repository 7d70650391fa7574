//! Multiclass gradient boosting with a softmax objective: one tree per class
//! per round, fit to `p − y` with hessian `p(1 − p)`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, FeatureMatrix, TreeNode, TreeParams};
use crate::dataset::ClassScores;
use crate::error::{Error, Result};

pub const FOREST_HEADER: &str = "docfusion-forest 1";

/// Where the meta-classifier's training features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaSource {
    /// Out-of-fold component predictions on the train split.
    OutOfFold,
    /// Predictions of the fully trained components on the validation split.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub max_depth: usize,
    pub rounds: usize,
    pub shrinkage: f64,
    pub min_samples_leaf: usize,
    /// Declared component order; empty means "as given".
    pub components: Vec<String>,
    pub oof_folds: usize,
    pub meta_source: MetaSource,
    /// Seeds the stratified fold assignment. Not read from config files;
    /// runs set it from their own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            max_depth: 3,
            rounds: 100,
            shrinkage: 0.1,
            min_samples_leaf: 1,
            components: Vec::new(),
            oof_folds: 5,
            meta_source: MetaSource::OutOfFold,
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.rounds == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidArgument(
                "max_depth, rounds and min_samples_leaf must be at least 1".into(),
            ));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::InvalidArgument("shrinkage must be in (0, 1]".into()));
        }
        if self.meta_source == MetaSource::OutOfFold && self.oof_folds < 2 {
            return Err(Error::InvalidArgument(
                "out-of-fold training needs at least 2 folds".into(),
            ));
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedForest {
    classes: usize,
    feature_dim: usize,
    shrinkage: f64,
    base_score: f64,
    components: Vec<String>,
    /// `trees[round][class]`.
    trees: Vec<Vec<TreeNode>>,
}

/// Per-round record of a boosting run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostingTrace {
    /// Mean log-loss on the training features before the first round and
    /// after each round.
    pub losses: Vec<f64>,
}

impl BoostedForest {
    /// A forest with no rounds: predicts the uniform distribution.
    pub fn empty(classes: usize, feature_dim: usize) -> Self {
        BoostedForest {
            classes,
            feature_dim,
            shrinkage: 1.0,
            base_score: 0.0,
            components: Vec::new(),
            trees: Vec::new(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn set_components(&mut self, names: Vec<String>) {
        self.components = names;
    }

    pub fn trees(&self) -> &[Vec<TreeNode>] {
        &self.trees
    }

    /// Per-class margins before the softmax.
    pub fn margins(&self, features: &[f64]) -> Vec<f64> {
        let mut out = vec![self.base_score; self.classes];
        for round in &self.trees {
            for (m, tree) in out.iter_mut().zip(round) {
                *m += self.shrinkage * tree.evaluate(features);
            }
        }
        out
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<ClassScores> {
        if features.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "forest expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        Ok(ClassScores::softmax(&self.margins(features)))
    }

    /// Boosts `config.rounds` rounds over `features` with integer `labels`.
    pub fn fit(
        features: &FeatureMatrix,
        labels: &[usize],
        classes: usize,
        config: &FusionConfig,
    ) -> Result<(BoostedForest, BoostingTrace)> {
        config.validate()?;
        let n = features.rows();
        if n == 0 || labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(
                "boosting needs at least 2 classes".into(),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        let params = config.tree_params();
        let mut forest = BoostedForest {
            classes,
            feature_dim: features.cols(),
            shrinkage: config.shrinkage,
            base_score: 0.0,
            components: config.components.clone(),
            trees: Vec::with_capacity(config.rounds),
        };
        let mut margins = vec![forest.base_score; n * classes];
        let mut probs = vec![0.0; n * classes];
        softmax_all(classes, &margins, &mut probs);
        let mut losses = vec![log_loss(classes, &probs, labels)];
        let mut grads = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..config.rounds {
            let mut round = Vec::with_capacity(classes);
            for k in 0..classes {
                for i in 0..n {
                    let p = probs[i * classes + k];
                    grads[i] = p - if labels[i] == k { 1.0 } else { 0.0 };
                    hess[i] = p * (1.0 - p);
                }
                round.push(fit_tree(features, &grads, &hess, &params)?);
            }
            for i in 0..n {
                let x = features.row(i);
                for (k, tree) in round.iter().enumerate() {
                    margins[i * classes + k] += config.shrinkage * tree.evaluate(x);
                }
            }
            forest.trees.push(round);
            softmax_all(classes, &margins, &mut probs);
            losses.push(log_loss(classes, &probs, labels));
        }
        Ok((forest, BoostingTrace { losses }))
    }

    /// Line-oriented text serialization; trees are listed in preorder.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{FOREST_HEADER}").unwrap();
        writeln!(out, "classes {}", self.classes).unwrap();
        writeln!(out, "features {}", self.feature_dim).unwrap();
        writeln!(out, "shrinkage {:e}", self.shrinkage).unwrap();
        writeln!(out, "base_score {:e}", self.base_score).unwrap();
        for name in &self.components {
            writeln!(out, "component {name}").unwrap();
        }
        writeln!(out, "rounds {}", self.trees.len()).unwrap();
        for (r, round) in self.trees.iter().enumerate() {
            for (k, tree) in round.iter().enumerate() {
                writeln!(out, "tree {r} {k}").unwrap();
                for node in tree.nodes() {
                    match node {
                        TreeNode::Leaf { value } => writeln!(out, "leaf {value:e}").unwrap(),
                        TreeNode::Split {
                            feature,
                            threshold,
                            gain,
                            ..
                        } => writeln!(out, "split {feature} {threshold:e} {gain:e}").unwrap(),
                    }
                }
            }
        }
        out
    }

    pub fn parse(source: &str) -> Result<BoostedForest> {
        let mut lines = source
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .peekable();
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        match lines.next() {
            Some((_, FOREST_HEADER)) => {}
            Some((_, other)) if other.starts_with("docfusion-forest") => {
                return Err(Error::Format(format!(
                    "unsupported forest version: {other}"
                )))
            }
            _ => return Err(bad(1, "missing forest header")),
        }
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| bad(0, "unexpected end of forest"))?;
            let value = line
                .strip_prefix(name)
                .and_then(|v| v.strip_prefix(' '))
                .ok_or_else(|| bad(no, &format!("expected `{name}`")))?;
            Ok((no, value.to_string()))
        };
        let num = |(no, v): (usize, String)| -> Result<f64> {
            v.parse::<f64>().map_err(|_| bad(no, "invalid number"))
        };
        let int = |(no, v): (usize, String)| -> Result<usize> {
            v.parse::<usize>().map_err(|_| bad(no, "invalid integer"))
        };
        let classes = int(field("classes")?)?;
        let feature_dim = int(field("features")?)?;
        let shrinkage = num(field("shrinkage")?)?;
        let base_score = num(field("base_score")?)?;
        let mut components = Vec::new();
        while let Some((_, line)) = lines.peek() {
            match line.strip_prefix("component ") {
                Some(name) => {
                    components.push(name.to_string());
                    lines.next();
                }
                None => break,
            }
        }
        let (rounds_line, rounds_value) = lines.next().ok_or_else(|| bad(0, "missing rounds"))?;
        let rounds = rounds_value
            .strip_prefix("rounds ")
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| bad(rounds_line, "expected `rounds`"))?;
        let mut trees = Vec::with_capacity(rounds);
        for r in 0..rounds {
            let mut round = Vec::with_capacity(classes);
            for k in 0..classes {
                let (no, line) = lines.next().ok_or_else(|| bad(0, "missing tree"))?;
                if line != format!("tree {r} {k}") {
                    return Err(bad(no, &format!("expected `tree {r} {k}`")));
                }
                round.push(parse_node(&mut lines, feature_dim)?);
            }
            trees.push(round);
        }
        if let Some((no, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(bad(no, "trailing content after last tree"));
        }
        Ok(BoostedForest {
            classes,
            feature_dim,
            shrinkage,
            base_score,
            components,
            trees,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<BoostedForest> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source)
    }
}

fn parse_node<'a, I>(lines: &mut I, feature_dim: usize) -> Result<TreeNode>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let (no, line) = lines.next().ok_or(Error::Parse {
        line: 0,
        message: "truncated tree".into(),
    })?;
    let bad = |message: &str| Error::Parse {
        line: no,
        message: message.to_string(),
    };
    let parts: Vec<&str> = line.split(' ').collect();
    match parts.as_slice() {
        ["leaf", value] => Ok(TreeNode::Leaf {
            value: value.parse().map_err(|_| bad("invalid leaf value"))?,
        }),
        ["split", feature, threshold, gain] => {
            let feature: usize = feature.parse().map_err(|_| bad("invalid feature index"))?;
            if feature >= feature_dim {
                return Err(bad("feature index out of range"));
            }
            let threshold = threshold.parse().map_err(|_| bad("invalid threshold"))?;
            let gain = gain.parse().map_err(|_| bad("invalid gain"))?;
            let left = Box::new(parse_node(lines, feature_dim)?);
            let right = Box::new(parse_node(lines, feature_dim)?);
            Ok(TreeNode::Split {
                feature,
                threshold,
                gain,
                left,
                right,
            })
        }
        _ => Err(bad("expected `leaf` or `split`")),
    }
}

fn softmax_all(classes: usize, margins: &[f64], probs: &mut [f64]) {
    for (m, p) in margins.chunks(classes).zip(probs.chunks_mut(classes)) {
        p.copy_from_slice(ClassScores::softmax(m).values());
    }
}

fn log_loss(classes: usize, probs: &[f64], labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[i * classes + y].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / labels.len() as f64
}
