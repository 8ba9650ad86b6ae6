mod common;

use std::fs;
use std::path::Path;

use rusqlite::Connection;

/// Rewrites `tests/fixtures/mini`. Run with `cargo test --test fixture -- --ignored`.
#[test]
#[ignore]
fn regenerate_mini_fixture() {
    let dir = common::checked_in();
    let _ = fs::remove_dir_all(&dir);
    common::build_mini(&dir);
}

fn dump(db: &Path) -> Vec<String> {
    let conn = Connection::open(db).unwrap();
    let mut out = Vec::new();
    for table in ["patients", "admissions", "labevents"] {
        let mut stmt = conn.prepare(&format!("SELECT * FROM {table} ORDER BY row_id")).unwrap();
        let cols = stmt.column_count();
        let rows = stmt
            .query_map([], |r| {
                (0..cols)
                    .map(|i| r.get::<_, rusqlite::types::Value>(i).map(|v| format!("{v:?}")))
                    .collect::<Result<Vec<_>, _>>()
            })
            .unwrap();
        for row in rows {
            out.push(format!("{table}: {}", row.unwrap().join("|")));
        }
    }
    out
}

fn files(dir: &Path, base: &Path, out: &mut Vec<String>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files(&path, base, out);
        } else {
            out.push(path.strip_prefix(base).unwrap().to_string_lossy().into_owned());
        }
    }
    out.sort();
}

#[test]
fn checked_in_fixture_matches_builder() {
    let fresh = tempfile::tempdir().unwrap();
    common::build_mini(fresh.path());
    let disk = common::checked_in();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    files(fresh.path(), fresh.path(), &mut a);
    files(&disk, &disk, &mut b);
    b.retain(|f| !f.starts_with("out/"));
    assert_eq!(a, b);
    for f in &a {
        if f.ends_with(".sqlite") {
            assert_eq!(dump(&fresh.path().join(f)), dump(&disk.join(f)));
        } else {
            assert_eq!(
                fs::read_to_string(fresh.path().join(f)).unwrap(),
                fs::read_to_string(disk.join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
