//! Multi-modal record linkage.
//!
//! Records pair a short text description with a precomputed image feature
//! vector (or a matrix of per-region features). A siamese matcher scores
//! record pairs as duplicates after fusing text and image per record, either
//! by pointwise multiplication of projected encodings or with a stack of
//! attention layers over image regions. A logistic-regression baseline on
//! two hand features (Jaccard overlap, Euclidean feature distance) is
//! provided for comparison, along with the training loop, checkpointing and
//! average-precision evaluation.
//!
//! Everything numeric is built on the small reverse-mode kernel in
//! [`autodiff`].

pub mod autodiff;
pub mod baseline;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod rng;
pub mod siamese;
pub mod training;

pub use error::{Error, Result};
