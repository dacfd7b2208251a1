//! Core algorithms for weakly supervised object localization with
//! difficulty-ordered training.
//!
//! The pipeline mines object boxes from per-region classification scores,
//! ranks images by how concentrated those scores are (easy images first),
//! and alternates detector retraining with instance relocalization while
//! masking out the most discriminative feature cells as a regularizer.
//!
//! Modules follow the pipeline stages:
//!
//! - [`model`] — boxes, image records, score matrices, proposal labeling
//! - [`scoring`] — two-stream score normalization and the image-level loss
//! - [`difficulty`] — accumulated-energy curves and the mEAS difficulty score
//! - [`mining`] — heat-map aggregation and largest-component box extraction
//! - [`masking`] — feature-grid coordinate mapping and cell masking
//! - [`curriculum`] — fold partitioning and the train/relocalize loop
//! - [`eval`] — CorLoc, VOC-style average precision, error categorization
//!
//! The crate is `no_std` (with `alloc`) so the numeric core stays free of
//! platform dependencies; all file formats and the CLI live in the
//! companion `zigzag-io` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod curriculum;
pub mod difficulty;
pub mod eval;
pub mod masking;
pub mod mining;
pub mod model;
pub mod rng;
pub mod scoring;

pub use model::{BBox, ImageRecord, MinedInstance, ProposalLabel, ProposalRole, ScoreKind, ScoreMatrix};
pub use rng::SplitMix64;
