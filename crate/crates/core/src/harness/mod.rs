//! Querying chat-completions endpoints over the evaluation grid.

pub mod cache;
pub mod dispatch;
pub mod endpoint;
pub mod image;
pub mod mock;
pub mod parse;

use thiserror::Error;

pub use cache::ResponseCache;
pub use dispatch::{
    plan_jobs, run_evaluation, run_evaluation_blocking, run_jobs, Dispatcher, JobFailure, RunOutcome, RunStats,
};
pub use endpoint::{cache_key, IdentityMode, ModelEndpoint, QueryJob, RunManifest};
pub use image::{encode_file, encode_image};
pub use parse::parse_response;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("image file not found: {0}")]
    FileNotFound(String),
    #[error("cannot decode image {path}: {reason}")]
    UndecodableImage { path: String, reason: String },
    #[error("{url} unreachable after {attempts} attempts: {last}")]
    EndpointUnreachable { url: String, attempts: u32, last: String },
    #[error("authentication rejected (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}")]
    HttpStatus { status: u16 },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed completion: {0}")]
    BadResponse(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("cache: {0}")]
    Cache(String),
}
