//! Entry points around the pipelines: the HTTP API and the command line.

pub mod api;
pub mod cli;

pub use api::{router, ApiError, AppState, ERROR_CODES};
