//! Tab-separated vector store files.
//!
//! ```text
//! model_id<TAB>dims
//! key<TAB>v1,v2,...,vdims
//! ```
//!
//! Files read by the `vector_file` provider key each vector by the SHA-256
//! of the embedded text (see [`text_key`]).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ehrsql_core::VectorStore;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn text_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn parse(content: &str, path: &Path) -> Result<VectorStore> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::malformed(path, "empty vector file"))?;
    let (model_id, dims) =
        header.split_once('\t').ok_or_else(|| Error::malformed(path, "header must be model_id<TAB>dims"))?;
    let dims: usize = dims.trim().parse().map_err(|_| Error::malformed(path, format!("bad dims {dims:?}")))?;
    if dims == 0 || model_id.is_empty() {
        return Err(Error::malformed(path, "header needs a model id and positive dims"));
    }
    let mut store = VectorStore::new(model_id, dims);
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let at = |reason: String| Error::malformed(path, format!("line {}: {reason}", n + 1));
        let (id, values) = line.split_once('\t').ok_or_else(|| at("expected id<TAB>values".into()))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| at(e.to_string()))?;
        store.insert(id, values).map_err(|e| at(e.to_string()))?;
    }
    Ok(store)
}

pub fn read(path: &Path) -> Result<VectorStore> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&content, path)
}

pub fn render(store: &VectorStore) -> String {
    let mut out = format!("{}\t{}\n", store.model_id(), store.dims());
    for (id, values) in store.iter() {
        out.push_str(id);
        out.push('\t');
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // shortest representation that parses back to the same f64
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn write(store: &VectorStore, path: &Path) -> Result<()> {
    fs::write(path, render(store)).map_err(|e| Error::io(path, e))
}
