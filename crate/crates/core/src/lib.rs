//! Allocation-only core of a two-stage reliable text-to-SQL pipeline.
//!
//! Everything in this crate is pure: multi-embedding exemplar retrieval,
//! schema rendering, prompt assembly, SQL extraction from model output,
//! result-set normalization and equivalence, unanimity-based ensemble
//! validation, and cost-penalized reliability scoring. Anything that touches
//! a file, a database or the network lives in the `ehrsql` companion crate,
//! which reaches the database through the [`exec::Executor`] trait.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod answer;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod extract;
pub mod prompt;
pub mod retrieval;
pub mod schema;
pub mod scoring;

pub use answer::{Answer, Label, Question, Split, SplitStats};
pub use error::Error;
pub use exec::{Cell, ExecStatus, ExecutionOutcome, Executor, NormalizedRow, Verdict};
pub use retrieval::{EmbeddingVector, ExemplarHit, ExemplarSet, VectorStore};
