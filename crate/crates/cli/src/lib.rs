//! Graph file format, trace emitters, and shared plumbing for the
//! `opsched` command-line tool.
//!
//! The on-disk model is a small versioned JSON document (see [`model`]);
//! traces are emitted as CSV tables or self-contained SVG charts (see
//! [`emit`]). Ids in files are the user's ids: sparse ids are densified on
//! load and mapped back on every output path.

pub mod emit;
pub mod model;

use std::fmt::Write as _;

pub use model::{load_graph, load_model, save_graph_with_schedule, LoadedModel, ModelError};

/// Top-level error with file context, mapped to exit code 1 by the binary.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Model {
        path: String,
        #[source]
        source: ModelError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schedule(#[from] opsched_core::sched::ScheduleError),
    #[error(transparent)]
    Alloc(#[from] opsched_core::alloc::AllocError),
    #[error("{0}")]
    Usage(String),
}

/// Renders an error and its source chain, one `caused by:` line per level.
pub fn render_error_chain(err: &dyn std::error::Error) -> String {
    let mut out = format!("error: {err}");
    let mut source = err.source();
    while let Some(cause) = source {
        let _ = write!(out, "\n  caused by: {cause}");
        source = cause.source();
    }
    out
}
