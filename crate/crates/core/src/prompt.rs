//! Prompt assembly and retrieval-augmented fine-tuning records.
//!
//! A prompt is one completion-style text:
//!
//! ```text
//! <instruction>
//!
//! [Database Tables]
//! CREATE TABLE ...
//!
//! [Examples]
//! [Q]  : <train question>
//! [SQL]: <train sql or null>
//! [Q]  : <target question>
//! SQL:
//! ```

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::answer::{Answer, Label, Question};
use crate::error::Error;
use crate::retrieval::ExemplarSet;
use crate::schema::{SchemaContext, TABLES_HEADER};

pub const INSTRUCTION: &str = "This is a task converting a natural language question to an SQLite query for a database. \
You will be provided with the schema of the SQLite database followed by a few examples. \
You need to generate the SQLite query for a given question and you may return \"null\" if the question cannot be answered.";
pub const EXAMPLES_HEADER: &str = "[Examples]";
pub const QUESTION_MARKER: &str = "[Q]  : ";
pub const SQL_MARKER: &str = "[SQL]: ";
pub const ANSWER_CUE: &str = "SQL: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarOrder {
    #[default]
    MostSimilarFirst,
    MostSimilarLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PromptOptions {
    pub order: ExemplarOrder,
    /// Maximum prompt length in characters; exemplars are dropped to fit.
    pub char_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub question_id: String,
    pub text: String,
    /// Train ids in the order they appear in the `[Examples]` block.
    pub exemplar_ids: Vec<String>,
    pub token_estimate: usize,
    /// Exemplars removed to honour the character budget.
    pub dropped_exemplars: usize,
}

/// Train questions with their answers, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TrainIndex {
    entries: BTreeMap<String, (String, Answer)>,
}

impl TrainIndex {
    pub fn new(questions: &[Question], labels: &[Label]) -> Result<Self, Error> {
        let texts: BTreeMap<&str, &str> = questions.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
        let mut entries = BTreeMap::new();
        for label in labels {
            let text = texts.get(label.id.as_str()).ok_or_else(|| Error::DanglingLabel(label.id.clone()))?;
            entries.insert(label.id.clone(), (String::from(*text), label.answer.clone()));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, id: &str) -> Option<(&str, &Answer)> {
        self.entries.get(id).map(|(t, a)| (t.as_str(), a))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Prompt lines are line-oriented, so embedded line breaks become spaces.
fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn assemble(schema_block: &str, pairs: &[(&str, &Answer)], target: &str) -> String {
    let mut text = String::with_capacity(INSTRUCTION.len() + schema_block.len() + 256 * (pairs.len() + 1));
    text.push_str(INSTRUCTION);
    text.push_str("\n\n");
    text.push_str(schema_block);
    text.push_str("\n\n");
    text.push_str(EXAMPLES_HEADER);
    text.push('\n');
    for (question, answer) in pairs {
        text.push_str(QUESTION_MARKER);
        text.push_str(&one_line(question));
        text.push('\n');
        text.push_str(SQL_MARKER);
        text.push_str(&one_line(answer.as_file_str()));
        text.push('\n');
    }
    text.push_str(QUESTION_MARKER);
    text.push_str(&one_line(target));
    text.push('\n');
    text.push_str(ANSWER_CUE);
    text
}

pub fn build_prompt(
    question: &Question,
    exemplars: &ExemplarSet,
    train: &TrainIndex,
    schema: &SchemaContext,
    options: &PromptOptions,
) -> Result<PromptBundle, Error> {
    build_prompt_with_block(question, exemplars, train, &schema.render(), options)
}

/// Same as [`build_prompt`] with the schema block rendered once by the caller.
pub fn build_prompt_with_block(
    question: &Question,
    exemplars: &ExemplarSet,
    train: &TrainIndex,
    schema_block: &str,
    options: &PromptOptions,
) -> Result<PromptBundle, Error> {
    // hits are already in z-score order, best first
    let mut resolved = Vec::with_capacity(exemplars.hits.len());
    for hit in &exemplars.hits {
        let (text, answer) = train
            .get(&hit.train_question_id)
            .ok_or_else(|| Error::UnresolvableExemplar(hit.train_question_id.clone()))?;
        resolved.push((hit.train_question_id.as_str(), text, answer));
    }

    let mut keep = resolved.len();
    loop {
        let mut kept: Vec<_> = resolved[..keep].to_vec();
        if options.order == ExemplarOrder::MostSimilarLast {
            kept.reverse();
        }
        let pairs: Vec<(&str, &Answer)> = kept.iter().map(|(_, t, a)| (*t, *a)).collect();
        let text = assemble(schema_block, &pairs, &question.text);
        let fits = options.char_budget.is_none_or(|budget| text.chars().count() <= budget);
        if fits || keep == 0 {
            return Ok(PromptBundle {
                question_id: question.id.clone(),
                token_estimate: estimate_tokens(&text),
                exemplar_ids: kept.iter().map(|(id, _, _)| String::from(*id)).collect(),
                dropped_exemplars: resolved.len() - keep,
                text,
            });
        }
        keep -= 1;
    }
}

/// The sections of a prompt recovered by [`parse_prompt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub instruction: String,
    pub schema_block: String,
    pub examples: Vec<(String, String)>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParseError(pub String);

impl core::fmt::Display for PromptParseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "malformed prompt: {}", self.0)
    }
}

/// Checks a prompt against the marker grammar and splits it into sections.
pub fn parse_prompt(text: &str) -> Result<ParsedPrompt, PromptParseError> {
    let err = |msg: &str| PromptParseError(String::from(msg));
    let lines: Vec<&str> = text.split('\n').collect();
    let count = |marker: &str| lines.iter().filter(|l| **l == marker).count();
    if count(TABLES_HEADER) != 1 {
        return Err(err("expected exactly one tables header"));
    }
    if count(EXAMPLES_HEADER) != 1 {
        return Err(err("expected exactly one examples header"));
    }
    let tables_at = lines.iter().position(|l| *l == TABLES_HEADER).unwrap_or(0);
    let examples_at = lines.iter().position(|l| *l == EXAMPLES_HEADER).unwrap_or(0);
    if examples_at < tables_at {
        return Err(err("examples header precedes tables header"));
    }
    let instruction = lines[..tables_at].join("\n").trim_end().into();
    let schema_block = lines[tables_at..examples_at].join("\n").trim_end().into();

    let body = &lines[examples_at + 1..];
    let Some((last, rest)) = body.split_last() else {
        return Err(err("missing answer cue"));
    };
    if *last != ANSWER_CUE {
        return Err(err("prompt must end with the answer cue"));
    }
    let Some((target_line, pairs)) = rest.split_last() else {
        return Err(err("missing target question"));
    };
    let target = target_line.strip_prefix(QUESTION_MARKER).ok_or_else(|| err("missing target question"))?;
    if pairs.len() % 2 != 0 {
        return Err(err("unbalanced example pairs"));
    }
    let mut examples = Vec::with_capacity(pairs.len() / 2);
    for pair in pairs.chunks(2) {
        let q = pair[0].strip_prefix(QUESTION_MARKER).ok_or_else(|| err("expected question line"))?;
        let s = pair[1].strip_prefix(SQL_MARKER).ok_or_else(|| err("expected sql line"))?;
        examples.push((String::from(q), String::from(s)));
    }
    Ok(ParsedPrompt { instruction, schema_block, examples, target: String::from(target) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
}

/// Builds one fine-tuning record per train question.
///
/// `exemplars` must come from retrieving the train set against itself with
/// self-exclusion, aligned with `questions`.
pub fn raft_records(
    questions: &[Question],
    train: &TrainIndex,
    schema: &SchemaContext,
    exemplars: &[ExemplarSet],
    options: &PromptOptions,
) -> Result<Vec<FinetuneRecord>, Error> {
    if questions.len() != exemplars.len() {
        return Err(Error::Alignment(alloc::format!(
            "{} questions but {} exemplar sets",
            questions.len(),
            exemplars.len()
        )));
    }
    let block = schema.render();
    questions
        .iter()
        .zip(exemplars)
        .map(|(q, set)| {
            if set.test_question_id != q.id {
                return Err(Error::Alignment(alloc::format!("{} paired with {}", q.id, set.test_question_id)));
            }
            if set.ids().any(|id| id == q.id) {
                return Err(Error::Alignment(alloc::format!("{} retrieved itself", q.id)));
            }
            let (_, answer) = train.get(&q.id).ok_or_else(|| Error::UnresolvableExemplar(q.id.clone()))?;
            let bundle = build_prompt_with_block(q, set, train, &block, options)?;
            Ok(FinetuneRecord { prompt: bundle.text, completion: String::from(answer.as_file_str()) })
        })
        .collect()
}
