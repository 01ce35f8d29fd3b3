//! HTTP service and command-line front end for `fairplai_core`.
//!
//! The server exposes dataset ingestion, asynchronous frontier jobs,
//! prompt translation, candidate filtering, selection contracts and audits
//! as JSON under `application/vnd.fairplai.v1+json`. The CLI runs the same
//! operations directly against the artifact store.

pub mod api;
pub mod cli;
pub mod jobs;

pub use api::{router, AppState, MEDIA_TYPE};
