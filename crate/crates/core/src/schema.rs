//! Database schema model and the `[Database Tables]` prompt block.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::Serialize;

pub const TABLES_HEADER: &str = "[Database Tables]";

/// Default cut-off for text samples, in characters.
pub const DEFAULT_SAMPLE_CHARS: usize = 40;
const ELLIPSIS: &str = "...";

/// A sampled column value before rendering.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleValue {
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl SampleValue {
    /// Renders the value as an SQL literal: numbers bare, text and blobs quoted.
    /// Text longer than `max_chars` is cut and marked with a trailing ellipsis.
    pub fn to_literal(&self, max_chars: usize) -> String {
        match self {
            SampleValue::Integer(i) => format!("{i}"),
            SampleValue::Real(r) => {
                let s = format!("{r}");
                if s.contains(['.', 'e', 'E', 'N', 'i']) {
                    s
                } else {
                    format!("{s}.0")
                }
            }
            SampleValue::Text(t) => {
                let mut body: String = t.chars().take(max_chars).collect();
                if t.chars().count() > max_chars {
                    body.push_str(ELLIPSIS);
                }
                format!("'{}'", body.replace('\'', "''"))
            }
            SampleValue::Blob(b) => {
                let mut hex = String::with_capacity(b.len() * 2);
                for byte in b.iter().take(max_chars / 2) {
                    let _ = write!(hex, "{byte:02x}");
                }
                if b.len() > max_chars / 2 {
                    hex.push_str(ELLIPSIS);
                }
                format!("X'{hex}'")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnDef {
    pub name: String,
    /// Declared type, e.g. `varchar(5)`; may be empty.
    pub sql_type: String,
    /// Column constraint text, e.g. `not null primary key`; may be empty.
    pub constraints: String,
    /// Rendered sample literals, in scan order.
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    /// Table-level `FOREIGN KEY` clauses; only filled when the caller keeps them.
    pub foreign_keys: Vec<String>,
    /// The `CREATE TABLE` statement exactly as stored in the catalog.
    pub raw_sql: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaContext {
    pub tables: Vec<TableDef>,
}

fn is_plain_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Double-quotes an identifier unless it is a plain word.
pub fn quote_identifier(name: &str) -> String {
    if is_plain_identifier(name) {
        String::from(name)
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn unquote_identifier(token: &str) -> String {
    let bytes = token.as_bytes();
    let quoted =
        bytes.len() >= 2 && matches!((bytes[0], bytes[bytes.len() - 1]), (b'"', b'"') | (b'`', b'`') | (b'[', b']'));
    if quoted {
        let inner = &token[1..token.len() - 1];
        inner.replace("\"\"", "\"")
    } else {
        String::from(token)
    }
}

/// Splits the leading identifier (possibly quoted) off `line`.
pub(crate) fn split_identifier(line: &str) -> (&str, &str) {
    let line = line.trim_start();
    let close = match line.as_bytes().first() {
        Some(b'"') => Some('"'),
        Some(b'`') => Some('`'),
        Some(b'[') => Some(']'),
        _ => None,
    };
    let end = match close {
        Some(close) => {
            let mut idx = 1;
            let bytes = line.as_bytes();
            loop {
                match line[idx..].find(close) {
                    Some(pos) => {
                        idx += pos + 1;
                        // doubled quote is an escaped quote
                        if close == '"' && bytes.get(idx) == Some(&b'"') {
                            idx += 1;
                            continue;
                        }
                        break idx;
                    }
                    None => break line.len(),
                }
            }
        }
        None => line.find(char::is_whitespace).unwrap_or(line.len()),
    };
    (&line[..end], &line[end..])
}

impl SchemaContext {
    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Renders the `[Database Tables]` block. Byte-for-byte deterministic.
    pub fn render(&self) -> String {
        let mut out = String::from(TABLES_HEADER);
        for table in &self.tables {
            let _ = write!(out, "\nCREATE TABLE {}\n(", quote_identifier(&table.name));
            let lines = table.columns.len() + table.foreign_keys.len();
            for (i, col) in table.columns.iter().enumerate() {
                let mut def = quote_identifier(&col.name);
                for part in [&col.sql_type, &col.constraints] {
                    if !part.is_empty() {
                        def.push(' ');
                        def.push_str(part);
                    }
                }
                if i + 1 < lines {
                    def.push(',');
                }
                if !col.samples.is_empty() {
                    def.push_str(" -- ");
                    def.push_str(&col.samples.join(", "));
                }
                let _ = write!(out, "\n  {def}");
            }
            for (i, fk) in table.foreign_keys.iter().enumerate() {
                let sep = if table.columns.len() + i + 1 < lines { "," } else { "" };
                let _ = write!(out, "\n  {fk}{sep}");
            }
            out.push_str("\n);");
        }
        out
    }
}

/// Recovers `(table, columns)` names from a rendered block.
pub fn parse_rendered(text: &str) -> Vec<(String, Vec<String>)> {
    let mut tables: Vec<(String, Vec<String>)> = Vec::new();
    let mut in_body = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("CREATE TABLE ") {
            tables.push((unquote_identifier(split_identifier(rest).0), Vec::new()));
            in_body = false;
        } else if line == "(" {
            in_body = true;
        } else if line == ");" {
            in_body = false;
        } else if in_body {
            let body = line.trim_start();
            if body.len() >= 11 && body[..11].eq_ignore_ascii_case("FOREIGN KEY") {
                continue;
            }
            if let Some((_, cols)) = tables.last_mut() {
                cols.push(unquote_identifier(split_identifier(body).0));
            }
        }
    }
    tables
}
