//! Dense and convolutional networks with hand-derived backpropagation,
//! trained by plain SGD under a per-epoch cosine learning-rate schedule.
//!
//! All arithmetic is `f64`. Given the same spec, data and config, training
//! is bitwise reproducible.

mod artifact;
mod layers;
mod network;
mod schedule;
mod tensor;
mod train;

pub use artifact::{
    load_model, save_model, ArtifactMetadata, ImageMetadata, ModelArtifact, TextMetadata,
};
pub use layers::{LayerSpec, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM};
pub use network::{build_network, Gradients, Network, NetworkSpec};
pub use schedule::{schedule_rate, CosineBatchSchedule, IMAGE_LR_MAX, LR_MIN, TEXT_LR_MAX};
pub use tensor::Tensor;
pub use train::{
    batches_per_epoch, gather_batch, run_sgd, sgd_train, InMemoryData, Objective, TrainConfig,
    TrainingData, TrainingLog,
};
