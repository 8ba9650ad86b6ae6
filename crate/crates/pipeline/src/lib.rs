//! File formats, the SQLite sandbox, LLM and embedding backends, and the
//! run stages behind the `ehrsql` command.

pub mod config;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod llm;
pub mod run;
pub mod schema;
pub mod sqlite;
pub mod vector_file;

pub use config::{Overrides, RunConfig};
pub use error::{Error, Result};
pub use sqlite::SqliteExecutor;
