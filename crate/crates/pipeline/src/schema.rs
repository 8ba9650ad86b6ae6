//! Reads table definitions and column samples out of a SQLite catalog.

use std::path::Path;

use ehrsql_core::schema::{ColumnDef, SampleValue, SchemaContext, TableDef, DEFAULT_SAMPLE_CHARS};
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

use crate::error::{Error, Result};

/// Rows scanned per column when looking for sample values.
pub const SAMPLE_SCAN_ROWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemaOptions {
    /// Append sample values as `-- ...` comments.
    pub with_samples: bool,
    pub samples_per_column: usize,
    pub sample_chars: usize,
    pub foreign_keys: bool,
}

impl Default for SchemaOptions {
    fn default() -> Self {
        Self { with_samples: true, samples_per_column: 1, sample_chars: DEFAULT_SAMPLE_CHARS, foreign_keys: false }
    }
}

pub fn introspect(db: &Path, options: &SchemaOptions) -> Result<SchemaContext> {
    let unreadable = |e: rusqlite::Error| Error::DatabaseUnreadable { path: db.to_owned(), reason: e.to_string() };
    if !db.is_file() {
        return Err(Error::DatabaseUnreadable { path: db.to_owned(), reason: "no such file".into() });
    }
    let conn = Connection::open_with_flags(db, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(unreadable)?;
    let schema = introspect_connection(&conn, options).map_err(unreadable)?;
    if schema.tables.is_empty() {
        return Err(Error::EmptySchema(db.to_owned()));
    }
    Ok(schema)
}

/// Introspects an open connection. Tables come in catalog order.
pub fn introspect_connection(conn: &Connection, options: &SchemaOptions) -> rusqlite::Result<SchemaContext> {
    let mut stmt = conn.prepare(
        "SELECT name, sql FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
    )?;
    let catalog: Vec<(String, Option<String>)> =
        stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?.collect::<rusqlite::Result<_>>()?;

    let mut tables = Vec::with_capacity(catalog.len());
    for (name, raw_sql) in catalog {
        let parsed = raw_sql.as_deref().map(parse_create_table).unwrap_or_default();
        let mut columns = Vec::new();
        let mut info = conn.prepare(&format!("PRAGMA table_info({})", quote(&name)))?;
        let rows = info.query_map([], |r| {
            Ok((r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, bool>(3)?, r.get::<_, i64>(5)?))
        })?;
        for row in rows {
            let (col, declared, not_null, pk) = row?;
            let (sql_type, constraints) = match parsed.columns.iter().find(|c| c.0.eq_ignore_ascii_case(&col)) {
                Some((_, ty, cons)) => (ty.clone(), cons.clone()),
                None => {
                    let mut cons = Vec::new();
                    if not_null {
                        cons.push("not null");
                    }
                    if pk > 0 {
                        cons.push("primary key");
                    }
                    (declared.to_lowercase(), cons.join(" "))
                }
            };
            let samples = if options.with_samples && options.samples_per_column > 0 {
                sample_column(conn, &name, &col, options)?
            } else {
                Vec::new()
            };
            columns.push(ColumnDef { name: col, sql_type, constraints, samples });
        }
        let foreign_keys = if options.foreign_keys { parsed.foreign_keys } else { Vec::new() };
        tables.push(TableDef { name, columns, foreign_keys, raw_sql });
    }
    Ok(SchemaContext { tables })
}

fn quote(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// First distinct non-null values of `column` among the first rows of `table`.
fn sample_column(
    conn: &Connection,
    table: &str,
    column: &str,
    options: &SchemaOptions,
) -> rusqlite::Result<Vec<String>> {
    let with_rowid = format!("SELECT {} FROM {} ORDER BY rowid LIMIT {SAMPLE_SCAN_ROWS}", quote(column), quote(table));
    let mut stmt = match conn.prepare(&with_rowid) {
        Ok(stmt) => stmt,
        // WITHOUT ROWID tables
        Err(_) => conn.prepare(&format!("SELECT {} FROM {} LIMIT {SAMPLE_SCAN_ROWS}", quote(column), quote(table)))?,
    };
    let mut rows = stmt.query([])?;
    let mut seen: Vec<SampleValue> = Vec::new();
    while let Some(row) = rows.next()? {
        let value = match row.get_ref(0)? {
            ValueRef::Null => continue,
            ValueRef::Integer(i) => SampleValue::Integer(i),
            ValueRef::Real(r) => SampleValue::Real(r),
            ValueRef::Text(t) => SampleValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => SampleValue::Blob(b.to_vec()),
        };
        if !seen.contains(&value) {
            seen.push(value);
            if seen.len() == options.samples_per_column {
                break;
            }
        }
    }
    Ok(seen.iter().map(|v| v.to_literal(options.sample_chars)).collect())
}

#[derive(Debug, Default, PartialEq, Eq)]
struct ParsedTable {
    /// `(name, type, constraints)`, lowercased outside literals.
    columns: Vec<(String, String, String)>,
    foreign_keys: Vec<String>,
}

const CONSTRAINT_WORDS: &[&str] =
    &["constraint", "primary", "not", "null", "unique", "check", "default", "collate", "references", "generated", "as"];
const TABLE_CONSTRAINTS: &[&str] = &["constraint", "primary", "unique", "check", "foreign"];

/// Splits `s` at top-level occurrences of `sep`, outside quotes and parentheses.
fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' | '`' => quote = Some(c),
                '[' => quote = Some(']'),
                '(' => depth += 1,
                ')' => depth -= 1,
                c if c == sep && depth == 0 => {
                    parts.push(&s[start..i]);
                    start = i + c.len_utf8();
                }
                _ => {}
            },
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Lowercases and collapses whitespace outside quoted sections.
fn canonical(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut quote: Option<char> = None;
    let mut space = false;
    for c in s.trim().chars() {
        match quote {
            Some(q) => {
                out.push(c);
                if c == q {
                    quote = None;
                }
            }
            None if c.is_whitespace() => space = true,
            None => {
                if space && !out.is_empty() {
                    out.push(' ');
                }
                space = false;
                match c {
                    '\'' | '"' | '`' => quote = Some(c),
                    '[' => quote = Some(']'),
                    _ => {}
                }
                out.extend(c.to_lowercase());
            }
        }
    }
    out
}

fn first_word(s: &str) -> String {
    s.trim_start().chars().take_while(|c| c.is_ascii_alphabetic()).collect::<String>().to_ascii_lowercase()
}

fn unquote(token: &str) -> String {
    let t = token.trim();
    let b = t.as_bytes();
    if b.len() >= 2 && matches!((b[0], b[b.len() - 1]), (b'"', b'"') | (b'`', b'`') | (b'[', b']') | (b'\'', b'\'')) {
        t[1..t.len() - 1].replace("\"\"", "\"")
    } else {
        t.to_owned()
    }
}

fn parse_create_table(sql: &str) -> ParsedTable {
    let (Some(open), Some(close)) = (sql.find('('), sql.rfind(')')) else {
        return ParsedTable::default();
    };
    if close <= open {
        return ParsedTable::default();
    }
    let mut parsed = ParsedTable::default();
    for element in split_top_level(&sql[open + 1..close], ',') {
        let element = element.trim();
        if element.is_empty() {
            continue;
        }
        let head = first_word(element);
        let is_plain_head = !element.starts_with(['"', '`', '[']);
        if is_plain_head && TABLE_CONSTRAINTS.contains(&head.as_str()) {
            if canonical(element).contains("foreign key") {
                parsed.foreign_keys.push(canonical(element));
            }
            continue;
        }
        let flat = element.replace(['\n', '\t', '\r'], " ");
        let words = split_top_level(&flat, ' ').into_iter().filter(|w| !w.is_empty()).collect::<Vec<_>>();
        let Some((name, rest)) = words.split_first() else { continue };
        let type_len =
            rest.iter().position(|w| CONSTRAINT_WORDS.contains(&w.to_ascii_lowercase().as_str())).unwrap_or(rest.len());
        let sql_type = canonical(&rest[..type_len].join(" "));
        let constraints = canonical(&rest[type_len..].join(" "));
        parsed.columns.push((unquote(name), sql_type, constraints));
    }
    parsed
}
