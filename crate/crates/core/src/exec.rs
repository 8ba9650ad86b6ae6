//! Execution outcomes and the result equivalence used for judging queries.
//!
//! Results are compared as multisets of rows: row order is ignored, column
//! order is not. Reals are rounded to [`REAL_DECIMALS`] places, integers and
//! text compare exactly, and NULL differs from `0` and `''`. A failed
//! execution is never equivalent to anything, another failure included.

use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::answer::Answer;
use crate::error::Error;

pub const REAL_DECIMALS: i32 = 4;
const REAL_SCALE: f64 = 10_000.0;
// past this the scaled value loses unit resolution on the way back
const MAX_SCALED: f64 = 1e15;

/// A value as returned by the database, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

/// A normalized result cell. Equality on cells is the comparison rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Cell {
    Null,
    Integer(i64),
    /// A real rounded to four decimals, stored as value × 10⁴.
    Decimal(i64),
    /// A real too large to round meaningfully, by bit pattern.
    LargeReal(u64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    pub fn from_raw(value: RawValue) -> Cell {
        match value {
            RawValue::Null => Cell::Null,
            RawValue::Integer(i) => Cell::Integer(i),
            RawValue::Real(r) => {
                let scaled = libm::round(r * REAL_SCALE);
                if scaled.is_finite() && scaled.abs() < MAX_SCALED {
                    Cell::Decimal(scaled as i64)
                } else if r == 0.0 {
                    Cell::Decimal(0)
                } else {
                    Cell::LargeReal(r.to_bits())
                }
            }
            RawValue::Text(t) => Cell::Text(t),
            RawValue::Blob(b) => Cell::Blob(b),
        }
    }

    /// The value this cell stands for.
    pub fn to_raw(&self) -> RawValue {
        match self {
            Cell::Null => RawValue::Null,
            Cell::Integer(i) => RawValue::Integer(*i),
            Cell::Decimal(d) => RawValue::Real(*d as f64 / REAL_SCALE),
            Cell::LargeReal(bits) => RawValue::Real(f64::from_bits(*bits)),
            Cell::Text(t) => RawValue::Text(t.clone()),
            Cell::Blob(b) => RawValue::Blob(b.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NormalizedRow {
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SqlError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    /// Canonical (sorted) rows; present iff `status` is `Ok`.
    pub rows: Option<Vec<NormalizedRow>>,
    pub error_text: Option<String>,
    pub elapsed_ms: u64,
}

impl ExecutionOutcome {
    pub fn ok(rows: Vec<Vec<RawValue>>, elapsed_ms: u64) -> Self {
        let mut rows: Vec<NormalizedRow> =
            rows.into_iter().map(|r| NormalizedRow { cells: r.into_iter().map(Cell::from_raw).collect() }).collect();
        rows.sort_unstable();
        Self { status: ExecStatus::Ok, rows: Some(rows), error_text: None, elapsed_ms }
    }

    pub fn sql_error(message: impl Into<String>, elapsed_ms: u64) -> Self {
        Self { status: ExecStatus::SqlError, rows: None, error_text: Some(message.into()), elapsed_ms }
    }

    pub fn timeout(elapsed_ms: u64) -> Self {
        Self { status: ExecStatus::Timeout, rows: None, error_text: None, elapsed_ms }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

pub fn equivalent(a: &ExecutionOutcome, b: &ExecutionOutcome) -> bool {
    match (&a.rows, &b.rows) {
        (Some(x), Some(y)) => a.is_ok() && b.is_ok() && x == y,
        _ => false,
    }
}

/// Runs SQL against the reference database. Implementations own the
/// connection, the timeout and the read-only guarantee.
pub trait Executor {
    fn execute(&self, sql: &str) -> ExecutionOutcome;

    /// Executes a ground-truth query; implementations may memoize.
    fn execute_reference(&self, sql: &str) -> ExecutionOutcome {
        self.execute(sql)
    }
}

impl<E: Executor + ?Sized> Executor for &E {
    fn execute(&self, sql: &str) -> ExecutionOutcome {
        (**self).execute(sql)
    }

    fn execute_reference(&self, sql: &str) -> ExecutionOutcome {
        (**self).execute_reference(sql)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Abstained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Judgement {
    pub verdict: Verdict,
    /// Execution status of the prediction when it was SQL.
    pub prediction_status: Option<ExecStatus>,
}

/// Judges a prediction against the ground truth by executed value.
pub fn compare_to_ground_truth<E: Executor + ?Sized>(
    prediction: &Answer,
    ground_truth: &Answer,
    executor: &E,
) -> Result<Judgement, Error> {
    let predicted = prediction.sql().map(|sql| executor.execute(sql));
    let prediction_status = predicted.as_ref().map(|o| o.status);
    let verdict = match (predicted, ground_truth) {
        (None, Answer::Null) => Verdict::Correct,
        (None, Answer::Sql(_)) => Verdict::Abstained,
        (Some(_), Answer::Null) => Verdict::Incorrect,
        (Some(pred), Answer::Sql(gt)) => {
            let reference = executor.execute_reference(gt);
            if !reference.is_ok() {
                return Err(Error::GroundTruthUnexecutable {
                    sql: gt.clone(),
                    reason: reference.error_text.unwrap_or_else(|| String::from("timeout")),
                });
            }
            if equivalent(&pred, &reference) {
                Verdict::Correct
            } else {
                Verdict::Incorrect
            }
        }
    };
    Ok(Judgement { verdict, prediction_status })
}
