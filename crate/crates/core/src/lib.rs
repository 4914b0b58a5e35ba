//! Audit toolkit for stereotype bias and human-preference alignment of
//! multimodal model outputs on personalized image aesthetic assessment.
//!
//! The pipeline runs prompt rendering ([`prompt`]), querying a
//! chat-completions endpoint ([`harness`]), building human ground truth
//! ([`ground_truth`]), bias and alignment metrics ([`metrics`]), and report
//! tables ([`report`]). [`synthetic`] generates corpora with known bias and
//! brute-force oracles for every metric.

pub mod cli;
pub mod ground_truth;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod report;
pub mod selftest;
pub mod synthetic;

pub use model::{
    identity_grid, label_set, validate_response, AnnotationRecord, Dataset, Identity, IdentityCategory, ImageRecord,
    ImageType, OutputLabel, ParseStatus, ResponseRecord, Task,
};
