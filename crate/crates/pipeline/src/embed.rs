//! Embedding providers: pre-computed vector files and the HTTP embed service.

use std::path::PathBuf;
use std::time::Duration;

use ehrsql_core::{Question, VectorStore};
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector_file::{self, text_key};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSource {
    /// Vectors keyed by the SHA-256 of each text.
    VectorFile { path: PathBuf },
    /// `POST {"model", "texts"}` returning `{"vectors"}`.
    HttpService { url: String, batch_size: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub model_id: String,
    pub dims: usize,
    #[serde(flatten)]
    pub source: EmbeddingSource,
}

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn dims(&self) -> usize;
    /// One vector per text, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

pub struct FileProvider {
    store: VectorStore,
}

impl FileProvider {
    pub fn new(store: VectorStore) -> Self {
        Self { store }
    }
}

impl EmbeddingProvider for FileProvider {
    fn model_id(&self) -> &str {
        self.store.model_id()
    }

    fn dims(&self) -> usize {
        self.store.dims()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                let key = text_key(t);
                self.store
                    .get(&key)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::MissingVector { model_id: self.store.model_id().to_owned(), text_hash: key })
            })
            .collect()
    }
}

pub const DEFAULT_BATCH: usize = 64;

pub struct HttpProvider {
    model_id: String,
    dims: usize,
    url: String,
    batch_size: usize,
    client: Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpProvider {
    pub fn new(model_id: &str, dims: usize, url: &str, batch_size: Option<usize>) -> Result<Self> {
        let client =
            Client::builder().timeout(Duration::from_secs(300)).build().map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            model_id: model_id.to_owned(),
            dims,
            url: url.to_owned(),
            batch_size: batch_size.unwrap_or(DEFAULT_BATCH).max(1),
            client,
        })
    }
}

impl EmbeddingProvider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let response = self
                .client
                .post(&self.url)
                .json(&EmbedRequest { model: &self.model_id, texts: batch })
                .send()
                .map_err(|e| Error::ServiceError(e.to_string()))?;
            let status = response.status();
            if !status.is_success() {
                let body = response.text().unwrap_or_default();
                return Err(Error::ServiceError(format!("status {status}: {body}")));
            }
            let parsed: EmbedResponse = response.json().map_err(|e| Error::ServiceError(e.to_string()))?;
            if parsed.vectors.len() != batch.len() {
                return Err(Error::ServiceError(format!("{} texts but {} vectors", batch.len(), parsed.vectors.len())));
            }
            if let Some(v) = parsed.vectors.iter().find(|v| v.len() != self.dims) {
                return Err(Error::ServiceError(format!("expected {} dims, got {}", self.dims, v.len())));
            }
            out.extend(parsed.vectors);
        }
        Ok(out)
    }
}

pub fn build(config: &EmbeddingProviderConfig) -> Result<Box<dyn EmbeddingProvider>> {
    if config.dims == 0 {
        return Err(Error::Config(format!("provider {} needs dims > 0", config.model_id)));
    }
    Ok(match &config.source {
        EmbeddingSource::VectorFile { path } => {
            let store = vector_file::read(path)?;
            if store.model_id() != config.model_id || store.dims() != config.dims {
                return Err(Error::Config(format!(
                    "{} holds {} vectors of {} dims, configured {} with {} dims",
                    path.display(),
                    store.model_id(),
                    store.dims(),
                    config.model_id,
                    config.dims
                )));
            }
            Box::new(FileProvider::new(store))
        }
        EmbeddingSource::HttpService { url, batch_size } => {
            Box::new(HttpProvider::new(&config.model_id, config.dims, url, *batch_size)?)
        }
    })
}

/// Embeds every question and keys the vectors by question id.
pub fn question_store(provider: &dyn EmbeddingProvider, questions: &[Question]) -> Result<VectorStore> {
    let texts: Vec<&str> = questions.iter().map(|q| q.text.as_str()).collect();
    let vectors = if texts.is_empty() { Vec::new() } else { provider.embed(&texts)? };
    let mut store = VectorStore::new(provider.model_id(), provider.dims());
    for (q, v) in questions.iter().zip(vectors) {
        store.insert(q.id.clone(), v)?;
    }
    Ok(store)
}

/// Embeds distinct texts and keys the vectors by text hash, for `vector_file` sources.
pub fn text_store(provider: &dyn EmbeddingProvider, texts: &[&str]) -> Result<VectorStore> {
    let mut unique: Vec<&str> = Vec::with_capacity(texts.len());
    let mut seen = std::collections::HashSet::new();
    for t in texts {
        if seen.insert(*t) {
            unique.push(t);
        }
    }
    let vectors = if unique.is_empty() { Vec::new() } else { provider.embed(&unique)? };
    let mut store = VectorStore::new(provider.model_id(), provider.dims());
    for (t, v) in unique.iter().zip(vectors) {
        store.insert(text_key(t), v)?;
    }
    Ok(store)
}
