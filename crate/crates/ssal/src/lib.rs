//! Host-side companion to `ssal-core`: CIFAR ingestion, configuration files,
//! checkpoints, metrics, embedding export and the HTTP label service used by
//! the human oracle.

pub mod checkpoint;
pub mod cifar;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod labeler;
pub mod metrics;
pub mod recorder;

pub use error::{Error, Result};
