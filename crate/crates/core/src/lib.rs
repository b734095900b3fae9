//! Self-supervised cross-modal representation learning and retrieval.
//!
//! Paired samples of the same scene seen by different sensors (modalities)
//! are pushed through per-modality backbones and a shared encoder, trained
//! with three label-free losses, and then searched across modalities with
//! exact cosine retrieval. Labels are used only for evaluation.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod retrieval;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
