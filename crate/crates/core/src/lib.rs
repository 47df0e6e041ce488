//! Desk-scale single-stage lesion detector built on a feature pyramid with
//! attention-weighted multi-kernel enhancement, plus the evaluation and data
//! tooling needed to train and score it end to end.

pub mod anchors;
pub mod backbone;
pub mod boxes;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod heads;
pub mod layers;
pub mod loss;
pub mod model;
pub mod neck;
pub mod pyramid;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
