pub mod audit;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod image;
pub mod ingest;
pub mod nn;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
