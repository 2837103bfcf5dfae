//! Multiclass classification built from an ensemble of one-class feature
//! extractors and a nearest-neighbor decision rule over a pooled reference set.
//!
//! Each class gets its own fine-tuned network. Training images of class `i`
//! are embedded by network `i` and pooled into one labeled reference set. At
//! query time every network embeds the query, each embedding is matched to its
//! nearest reference row, and the row with the globally smallest distance
//! decides the class.
//!
//! Module map:
//! - [`metrics`]: cosine, correlation and Spearman distances.
//! - [`datasets`]: directory scanning, seeded splits, image loading, synthetic data.
//! - [`embedding`]: backbones, one-class training, embedding extraction.
//! - [`reference_store`]: the pooled reference set and its on-disk format.
//! - [`classifier`]: the score table decision rule and the two baselines.
//! - [`bench`]: experiment runner and reports.

pub mod bench;
pub mod classifier;
pub mod datasets;
pub mod embedding;
mod error;
pub mod metrics;
pub mod reference_store;

pub use error::{Error, ErrorKind, Result};
