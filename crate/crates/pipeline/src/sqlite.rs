//! Read-only, time-limited SQL execution against the reference database.
//!
//! Connections are opened read-only and carry an authorizer that denies
//! every action other than reading, so writes and DDL come back as
//! `sql_error` outcomes. A progress handler interrupts statements that run
//! past the wall-clock budget. Ground-truth results are memoized by SQL text.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ehrsql_core::exec::RawValue;
use ehrsql_core::{ExecutionOutcome, Executor};
use rusqlite::hooks::{AuthAction, AuthContext, Authorization};
use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode, OpenFlags};

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(30_000);
/// Virtual machine steps between deadline checks.
const PROGRESS_STEPS: i32 = 1_000;

fn read_only_authorizer(ctx: AuthContext<'_>) -> Authorization {
    match ctx.action {
        AuthAction::Select | AuthAction::Read { .. } | AuthAction::Function { .. } | AuthAction::Recursive => {
            Authorization::Allow
        }
        _ => Authorization::Deny,
    }
}

fn guard(conn: &Connection) {
    conn.authorizer(Some(read_only_authorizer));
}

enum Source {
    File { path: PathBuf, idle: Mutex<Vec<Connection>> },
    Single(Mutex<Connection>),
}

pub struct SqliteExecutor {
    source: Source,
    timeout: Duration,
    current_time: Option<String>,
    memo: Mutex<HashMap<String, ExecutionOutcome>>,
}

fn open_read_only(path: &Path) -> Result<Connection> {
    let unreadable = |reason: String| Error::DatabaseUnreadable { path: path.to_owned(), reason };
    if !path.is_file() {
        return Err(unreadable("no such file".into()));
    }
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
    )
    .map_err(|e| unreadable(e.to_string()))?;
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))
        .map_err(|e| unreadable(e.to_string()))?;
    guard(&conn);
    Ok(conn)
}

impl SqliteExecutor {
    /// Opens the database file read-only. One connection is opened per
    /// concurrent caller and reused afterwards.
    pub fn open(path: impl AsRef<Path>, timeout: Duration) -> Result<Self> {
        let path = path.as_ref().to_owned();
        let first = open_read_only(&path)?;
        Ok(Self {
            source: Source::File { path, idle: Mutex::new(vec![first]) },
            timeout,
            current_time: None,
            memo: Mutex::new(HashMap::new()),
        })
    }

    /// Wraps an existing connection, e.g. an in-memory database. Calls are
    /// serialized on it.
    pub fn from_connection(conn: Connection, timeout: Duration) -> Self {
        guard(&conn);
        Self { source: Source::Single(Mutex::new(conn)), timeout, current_time: None, memo: Mutex::new(HashMap::new()) }
    }

    /// Replaces the bare token `current_time` with this SQL literal before
    /// execution, in predictions and ground truth alike.
    pub fn with_current_time(mut self, literal: Option<String>) -> Self {
        self.current_time = literal;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn run(&self, conn: &Connection, sql: &str) -> ExecutionOutcome {
        let start = Instant::now();
        let elapsed = || start.elapsed().as_millis() as u64;
        if sql.trim().is_empty() {
            return ExecutionOutcome::sql_error("empty statement", 0);
        }
        let sql = match &self.current_time {
            Some(literal) => substitute_current_time(sql, literal),
            None => sql.to_owned(),
        };
        let deadline = start + self.timeout;
        conn.progress_handler(PROGRESS_STEPS, Some(move || Instant::now() >= deadline));
        let result = fetch(conn, &sql);
        conn.progress_handler(PROGRESS_STEPS, None::<fn() -> bool>);
        match result {
            Ok(rows) => ExecutionOutcome::ok(rows, elapsed()),
            Err(e) if e.sqlite_error_code() == Some(ErrorCode::OperationInterrupted) => {
                ExecutionOutcome::timeout(elapsed())
            }
            Err(e) => ExecutionOutcome::sql_error(e.to_string(), elapsed()),
        }
    }
}

fn fetch(conn: &Connection, sql: &str) -> rusqlite::Result<Vec<Vec<RawValue>>> {
    let mut stmt = conn.prepare(sql)?;
    let columns = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        let mut cells = Vec::with_capacity(columns);
        for i in 0..columns {
            cells.push(match row.get_ref(i)? {
                ValueRef::Null => RawValue::Null,
                ValueRef::Integer(v) => RawValue::Integer(v),
                ValueRef::Real(v) => RawValue::Real(v),
                ValueRef::Text(t) => RawValue::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => RawValue::Blob(b.to_vec()),
            });
        }
        out.push(cells);
    }
    Ok(out)
}

impl Executor for SqliteExecutor {
    fn execute(&self, sql: &str) -> ExecutionOutcome {
        match &self.source {
            Source::Single(conn) => {
                let conn = conn.lock().unwrap_or_else(|p| p.into_inner());
                self.run(&conn, sql)
            }
            Source::File { path, idle } => {
                let pooled = idle.lock().unwrap_or_else(|p| p.into_inner()).pop();
                let conn = match pooled {
                    Some(c) => c,
                    None => match open_read_only(path) {
                        Ok(c) => c,
                        Err(e) => return ExecutionOutcome::sql_error(e.to_string(), 0),
                    },
                };
                let outcome = self.run(&conn, sql);
                idle.lock().unwrap_or_else(|p| p.into_inner()).push(conn);
                outcome
            }
        }
    }

    fn execute_reference(&self, sql: &str) -> ExecutionOutcome {
        if let Some(hit) = self.memo.lock().unwrap_or_else(|p| p.into_inner()).get(sql) {
            return hit.clone();
        }
        let outcome = self.execute(sql);
        self.memo.lock().unwrap_or_else(|p| p.into_inner()).insert(sql.to_owned(), outcome.clone());
        outcome
    }
}

/// Replaces the identifier `current_time` (any case, outside literals) with `literal`.
pub fn substitute_current_time(sql: &str, literal: &str) -> String {
    const TOKEN: &str = "current_time";
    let is_ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    let mut out = String::with_capacity(sql.len());
    let mut quote: Option<char> = None;
    let mut prev: Option<char> = None;
    let mut i = 0;
    while i < sql.len() {
        let c = sql[i..].chars().next().unwrap_or_default();
        match quote {
            Some(q) => {
                if c == q {
                    quote = None;
                }
            }
            None if c == '\'' || c == '"' => quote = Some(c),
            None => {
                let candidate = sql.get(i..i + TOKEN.len());
                let after = sql[i..].chars().nth(TOKEN.len());
                if candidate.is_some_and(|t| t.eq_ignore_ascii_case(TOKEN))
                    && !prev.is_some_and(is_ident)
                    && !after.is_some_and(is_ident)
                {
                    out.push_str(literal);
                    i += TOKEN.len();
                    prev = Some('t');
                    continue;
                }
            }
        }
        out.push(c);
        prev = Some(c);
        i += c.len_utf8();
    }
    out
}
