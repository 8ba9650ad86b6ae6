//! Cost-penalized reliability score and run reports.
//!
//! Each correct answer earns 1 and each incorrect answer costs `C`; the sum
//! is reported as a percentage of the dataset size. In [`ScoreMode::Task`]
//! an abstention on an answerable question scores 0. [`ScoreMode::PaperLiteral`]
//! treats every non-matching answer, abstentions included, as incorrect.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};

use crate::answer::Answer;
use crate::error::Error;
use crate::exec::{ExecStatus, Verdict};

pub const DEFAULT_COSTS: [f64; 3] = [0.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Task,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub n_abstained: usize,
}

impl Counts {
    pub fn tally(outcomes: &[Verdict]) -> Self {
        outcomes.iter().fold(Counts::default(), |mut c, v| {
            match v {
                Verdict::Correct => c.n_correct += 1,
                Verdict::Incorrect => c.n_incorrect += 1,
                Verdict::Abstained => c.n_abstained += 1,
            }
            c
        })
    }

    pub fn total(&self) -> usize {
        self.n_correct + self.n_incorrect + self.n_abstained
    }

    /// Unnormalized score: correct count minus `cost` per penalized answer.
    pub fn raw_score(&self, cost: f64, mode: ScoreMode) -> f64 {
        let penalized = match mode {
            ScoreMode::Task => self.n_incorrect,
            ScoreMode::PaperLiteral => self.n_incorrect + self.n_abstained,
        };
        self.n_correct as f64 - cost * penalized as f64
    }

    /// Score as a percentage of the dataset size; 0 for an empty dataset.
    pub fn score(&self, cost: f64, mode: ScoreMode) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            100.0 * self.raw_score(cost, mode) / n as f64
        }
    }
}

pub fn reliability_score(outcomes: &[Verdict], cost: f64, mode: ScoreMode) -> f64 {
    Counts::tally(outcomes).score(cost, mode)
}

/// Formats a cost as a report key: `10` rather than `10.0`.
pub fn cost_key(cost: f64) -> String {
    if cost == libm::trunc(cost) && cost.abs() < 1e15 {
        format!("{}", cost as i64)
    } else {
        format!("{cost}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// `(cost, percentage score)` in configured cost order.
    pub rs: Vec<(f64, f64)>,
    /// `(cost, raw sum)` alongside the percentages.
    pub rs_raw: Vec<(f64, f64)>,
    pub unanswered_pct: f64,
    pub executable_pct: f64,
    /// Set when no prediction was SQL; `executable_pct` is then 100 by convention.
    pub executable_undefined: bool,
    pub counts: Counts,
    pub mode: ScoreMode,
}

impl ScoreReport {
    pub fn rs_at(&self, cost: f64) -> Option<f64> {
        self.rs.iter().find(|(c, _)| *c == cost).map(|(_, s)| *s)
    }
}

struct CostMap<'a>(&'a [(f64, f64)]);

impl Serialize for CostMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (cost, value) in self.0 {
            map.serialize_entry(&cost_key(*cost), value)?;
        }
        map.end()
    }
}

impl Serialize for ScoreReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ScoreReport", 7)?;
        st.serialize_field("rs", &CostMap(&self.rs))?;
        st.serialize_field("rs_raw", &CostMap(&self.rs_raw))?;
        st.serialize_field("unanswered_pct", &self.unanswered_pct)?;
        st.serialize_field("executable_pct", &self.executable_pct)?;
        st.serialize_field("executable_undefined", &self.executable_undefined)?;
        st.serialize_field("counts", &self.counts)?;
        st.serialize_field("mode", &self.mode)?;
        st.end()
    }
}

/// Builds a report from aligned per-question verdicts, predictions and the
/// execution status of each SQL prediction.
pub fn summarize(
    outcomes: &[Verdict],
    predictions: &[Answer],
    statuses: &[Option<ExecStatus>],
    costs: &[f64],
    mode: ScoreMode,
) -> Result<ScoreReport, Error> {
    if outcomes.len() != predictions.len() || outcomes.len() != statuses.len() {
        return Err(Error::Alignment(format!(
            "{} outcomes, {} predictions, {} execution statuses",
            outcomes.len(),
            predictions.len(),
            statuses.len()
        )));
    }
    let counts = Counts::tally(outcomes);
    let n = outcomes.len();
    let nulls = predictions.iter().filter(|p| p.is_null()).count();
    let sql = n - nulls;
    let executable =
        predictions.iter().zip(statuses).filter(|(p, s)| !p.is_null() && **s == Some(ExecStatus::Ok)).count();
    let pct = |k: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * k as f64 / d as f64 };
    Ok(ScoreReport {
        rs: costs.iter().map(|&c| (c, counts.score(c, mode))).collect(),
        rs_raw: costs.iter().map(|&c| (c, counts.raw_score(c, mode))).collect(),
        unanswered_pct: pct(nulls, n),
        executable_pct: if sql == 0 { 100.0 } else { pct(executable, sql) },
        executable_undefined: sql == 0,
        counts,
        mode,
    })
}

/// Rounds half away from zero to two decimals, for display.
pub fn round2(x: f64) -> f64 {
    libm::round(x * 100.0) / 100.0
}

fn fmt2(x: f64) -> String {
    let r = round2(x);
    // avoid printing -0.00
    format!("{:.2}", if r == 0.0 { 0.0 } else { r })
}

/// Renders reports as an aligned plain-text table, one row per run.
pub fn render_report(reports: &[(String, ScoreReport)], costs: &[f64]) -> String {
    let mut header: Vec<String> = Vec::new();
    header.push(String::from("Run"));
    header.extend(costs.iter().map(|c| format!("RS{}", cost_key(*c))));
    for h in ["Unanswered %", "Executable %", "Correct", "Incorrect", "Abstained"] {
        header.push(String::from(h));
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            let mut row = Vec::with_capacity(header.len());
            row.push(label.clone());
            row.extend(costs.iter().map(|c| r.rs_at(*c).map_or_else(|| String::from("-"), fmt2)));
            row.push(fmt2(r.unanswered_pct));
            row.push(if r.executable_undefined { String::from("n/a") } else { fmt2(r.executable_pct) });
            row.push(format!("{}", r.counts.n_correct));
            row.push(format!("{}", r.counts.n_incorrect));
            row.push(format!("{}", r.counts.n_abstained));
            row
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let mut text = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(text, "{cell:<w$}", w = widths[i]);
            } else {
                let _ = write!(text, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push_str(text.trim_end());
        out.push('\n');
    };
    line(&header);
    line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in &rows {
        line(row);
    }
    out
}

/// Reports keyed by run label, in label order, as serialized to JSON.
pub fn report_map(reports: &[(String, ScoreReport)]) -> BTreeMap<String, ScoreReport> {
    reports.iter().cloned().collect()
}
