//! Pulls one SQL statement, or an abstention, out of raw model output.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::answer::{is_null_marker, Answer};

const FENCE: &str = "```";

fn strip_fence(text: &str) -> &str {
    let Some(start) = text.find(FENCE) else {
        return text;
    };
    // prose before the fence is discarded together with it
    let after = &text[start + FENCE.len()..];
    let body = match after.find('\n') {
        // the rest of the opening line is the optional language tag
        Some(nl) if !after[..nl].trim().contains(char::is_whitespace) => &after[nl + 1..],
        _ => after,
    };
    match body.find(FENCE) {
        Some(end) => &body[..end],
        None => body,
    }
}

/// Marks every byte that lies outside string literals, quoted identifiers
/// and comments. The newline ending a line comment counts as outside.
fn top_level_mask(sql: &str) -> Vec<bool> {
    let bytes = sql.as_bytes();
    let mut mask = vec![false; bytes.len()];
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            quote @ (b'\'' | b'"' | b'`') => {
                i += 1;
                while i < bytes.len() {
                    if bytes[i] == quote {
                        if bytes.get(i + 1) == Some(&quote) {
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    i += 1;
                }
            }
            b'[' => {
                while i < bytes.len() && bytes[i] != b']' {
                    i += 1;
                }
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i + 1 < bytes.len() && bytes[i + 1] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 1;
            }
            _ => mask[i] = true,
        }
        i += 1;
    }
    mask
}

const KEYWORDS: &[&str] = &[
    "and",
    "as",
    "asc",
    "between",
    "by",
    "case",
    "cast",
    "desc",
    "distinct",
    "else",
    "end",
    "except",
    "exists",
    "from",
    "group",
    "having",
    "in",
    "inner",
    "intersect",
    "is",
    "join",
    "left",
    "like",
    "limit",
    "not",
    "offset",
    "on",
    "or",
    "order",
    "outer",
    "select",
    "then",
    "union",
    "when",
    "where",
    "with",
];

/// A line opening with a capitalised word (`Note`, `This`, `Extra`) starts
/// prose, unless that word is an SQL keyword; the schemas here use lowercase
/// identifiers.
fn starts_prose(line: &str) -> bool {
    let word: String = line.trim_start().chars().take_while(|c| c.is_alphabetic()).collect();
    let mut chars = word.chars();
    let titlecase = matches!(chars.next(), Some(c) if c.is_uppercase()) && chars.any(char::is_lowercase);
    titlecase && !KEYWORDS.contains(&word.to_lowercase().as_str())
}

fn cut_trailing_prose<'a>(sql: &'a str, mask: &[bool]) -> &'a str {
    let mut offset = 0;
    for (n, line) in sql.split_inclusive('\n').enumerate() {
        if n > 0 && mask[offset - 1] && starts_prose(line) {
            return &sql[..offset];
        }
        offset += line.len();
    }
    sql
}

pub fn extract_sql(raw: &str) -> Answer {
    let text = strip_fence(raw.trim()).trim();
    if text.is_empty() || is_null_marker(text) {
        return Answer::Null;
    }
    let mask = top_level_mask(text);
    // the statement runs up to, and excludes, the first top-level semicolon
    let end = text.bytes().zip(&mask).position(|(b, top)| b == b';' && *top).unwrap_or(text.len());
    let statement = cut_trailing_prose(&text[..end], &mask).trim();
    if statement.is_empty() || is_null_marker(statement) {
        Answer::Null
    } else {
        Answer::Sql(String::from(statement))
    }
}
