//! Question and label files.
//!
//! Two layouts are accepted for each file. The flat layout is a JSON object
//! mapping question id to text (questions) or to SQL-or-`"null"` (labels).
//! The enveloped layout is `{"version": ..., "data": [records]}` where a
//! question record is `{"id", "question"}` and a label record `{"id", "label"}`.
//! Unknown keys are rejected in both. Entry order is file order.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use ehrsql_core::{Answer, Label, Question, Split};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use serde_json::Value;

use crate::error::{Error, Result};

/// A JSON object kept as ordered `(key, value)` pairs, duplicates included.
struct Pairs(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for Pairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct PairsVisitor;

        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = Pairs;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Pairs, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some(entry) = map.next_entry::<String, Value>()? {
                    out.push(entry);
                }
                Ok(Pairs(out))
            }
        }

        d.deserialize_map(PairsVisitor)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionRecord {
    id: String,
    question: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    id: String,
    label: String,
}

#[derive(Clone, Copy)]
enum Kind {
    Questions,
    Labels,
}

/// Reads an id → string file in either layout, checking id uniqueness.
fn read_string_map(path: &Path, kind: Kind) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let Pairs(pairs) = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;

    let enveloped = pairs.iter().any(|(k, v)| k == "data" && v.is_array());
    let entries: Vec<(String, String)> = if enveloped {
        let mut records = None;
        for (key, value) in pairs {
            match key.as_str() {
                "data" => records = Some(value),
                "version" => {}
                other => return Err(Error::malformed(path, format!("unknown top-level key {other:?}"))),
            }
        }
        let Some(Value::Array(items)) = records else {
            return Err(Error::malformed(path, "missing data array"));
        };
        items
            .into_iter()
            .map(|item| match kind {
                Kind::Questions => serde_json::from_value::<QuestionRecord>(item).map(|r| (r.id, r.question)),
                Kind::Labels => serde_json::from_value::<LabelRecord>(item).map(|r| (r.id, r.label)),
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::malformed(path, e.to_string()))?
    } else {
        pairs
            .into_iter()
            .map(|(k, v)| match v {
                Value::String(s) => Ok((k, s)),
                other => Err(Error::malformed(path, format!("value of {k:?} is not a string: {other}"))),
            })
            .collect::<Result<_>>()?
    };

    let mut seen = HashSet::with_capacity(entries.len());
    for (id, value) in &entries {
        if id.is_empty() {
            return Err(Error::malformed(path, "empty id"));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::malformed(path, format!("duplicate id {id:?}")));
        }
        if value.trim().is_empty() {
            return Err(Error::malformed(path, format!("empty value for {id:?}")));
        }
    }
    Ok(entries)
}

pub fn load_questions(path: &Path, split: Split) -> Result<Vec<Question>> {
    Ok(read_string_map(path, Kind::Questions)?.into_iter().map(|(id, text)| Question { id, text, split }).collect())
}

/// Loads one split. Labels are empty when no label file is given.
pub fn load_split(
    questions_file: &Path,
    labels_file: Option<&Path>,
    split: Split,
) -> Result<(Vec<Question>, Vec<Label>)> {
    let questions = load_questions(questions_file, split)?;
    let Some(labels_file) = labels_file else {
        return Ok((questions, Vec::new()));
    };
    let ids: HashSet<&str> = questions.iter().map(|q| q.id.as_str()).collect();
    let labels = read_string_map(labels_file, Kind::Labels)?
        .into_iter()
        .map(|(id, raw)| {
            if !ids.contains(id.as_str()) {
                return Err(Error::DanglingLabel(id));
            }
            // read_string_map rejected empty values, so parse always succeeds
            let answer = Answer::parse(&raw).unwrap_or(Answer::Null);
            Ok(Label { id, answer })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((questions, labels))
}

/// Reads a prediction file (same layouts as a label file), in file order.
pub fn load_answers(path: &Path) -> Result<Vec<(String, Answer)>> {
    Ok(read_string_map(path, Kind::Labels)?
        .into_iter()
        .map(|(id, raw)| {
            let answer = Answer::parse(&raw).unwrap_or(Answer::Null);
            (id, answer)
        })
        .collect())
}

/// Flat-layout JSON for a question file.
pub fn questions_to_json(questions: &[Question]) -> String {
    let map: serde_json::Map<String, Value> =
        questions.iter().map(|q| (q.id.clone(), Value::String(q.text.clone()))).collect();
    serde_json::to_string_pretty(&map).expect("string map serializes")
}

/// Flat-layout JSON for a label or prediction file.
pub fn answers_to_json<'a>(answers: impl IntoIterator<Item = (&'a str, &'a Answer)>) -> String {
    let map: serde_json::Map<String, Value> =
        answers.into_iter().map(|(id, a)| (id.to_owned(), Value::String(a.as_file_str().to_owned()))).collect();
    serde_json::to_string_pretty(&map).expect("string map serializes")
}

pub fn labels_to_json(labels: &[Label]) -> String {
    answers_to_json(labels.iter().map(|l| (l.id.as_str(), &l.answer)))
}
