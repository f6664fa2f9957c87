//! Category-aware transformer pipeline for human-object interaction detection.
//!
//! Detector output becomes a handful of prior categories per image; their
//! word vectors seed the decoder queries and re-weight the visual features.
//! Queries are matched to ground truth with a category-aware Hungarian cost,
//! decoded into scored triplets, de-duplicated pair-wise, and scored with
//! role mAP.
//!
//! Module map:
//!
//! - [`tensor`]: matrices, kernels, seeded RNG
//! - [`priors`]: detections to prior slots, embeddings and initial queries
//! - [`clam`]: category-level attention over feature grids
//! - [`transformer`]: encoder, decoder, prediction heads, model files
//! - [`matcher`]: matching costs and the Hungarian solver
//! - [`postprocess`]: triplet decoding and HOI-NMS / HOI-SoftNMS
//! - [`evaluator`]: role AP / mAP
//! - [`scene`], [`pipeline`]: scene I/O, synthetic data, full runs, sweeps

pub mod clam;
pub mod error;
pub mod evaluator;
pub mod geometry;
pub mod matcher;
pub mod pipeline;
pub mod postprocess;
pub mod priors;
pub mod scene;
pub mod tensor;
pub mod transformer;

pub use error::{CatnError, Result};
