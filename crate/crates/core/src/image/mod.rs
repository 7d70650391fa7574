//! Page images: decoding, model preprocessing, train-time augmentation and
//! the two scaled-down CNN layouts.
//!
//! PNG (8-bit gray or RGB) is the primary input format; binary PGM/PPM is
//! also decoded.

mod augment;
mod page;
mod preset;
mod train;

pub use augment::{affine, augment, salt_and_pepper, sample_angles, AugmentationPolicy};
pub use page::{load_and_preprocess, preprocess, PageImage};
pub use preset::{expand_preset, CnnKind, CnnPreset, DEFAULT_SIDE};
pub use train::{
    predict_image, predict_image_record, predict_pages, train_image_model, ImageModelConfig,
};
