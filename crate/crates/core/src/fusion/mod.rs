//! Late fusion: component class scores are concatenated and classified by
//! a depth-capped gradient-boosted tree ensemble.

mod evaluate;
mod forest;
mod meta;
mod tree;

pub use evaluate::{evaluate, AccuracyReport, ResultsRow, ResultsTable};
pub use forest::{BoostedForest, BoostingTrace, FusionConfig, MetaSource, FOREST_HEADER};
pub use meta::{
    concat_scores, meta_features, predict_fused, predict_fused_records, score_records,
    stratified_folds, train_meta, ComponentTrainer, FusionComponent, MetaDataset,
};
pub use tree::{fit_tree, FeatureMatrix, TreeNode, TreeParams};
