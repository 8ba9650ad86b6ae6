//! Generation backends: remote HTTP, scripted mock and replay cache.

mod http;
mod mock;
mod replay;
pub mod retry;

use std::path::PathBuf;
use std::time::Instant;

use ehrsql_core::extract::extract_sql;
use ehrsql_core::Answer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use http::{HttpGenerator, DEFAULT_RESPONSE_POINTER};
pub use mock::MockGenerator;
pub use replay::{ReplayCache, ReplayGenerator};
pub use retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decoding {
    /// Omitted from requests unless set, so the service default applies.
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
}

/// Where a model's outputs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Endpoint {
    /// Chat-completion service. With `replay` set, recorded outputs are used
    /// when present and new outputs are recorded.
    Http {
        url: String,
        /// Model name sent to the service; defaults to the model id.
        checkpoint: Option<String>,
        token_env: Option<String>,
        response_pointer: Option<String>,
        replay: Option<PathBuf>,
        timeout_ms: Option<u64>,
    },
    /// Recorded outputs only; a prompt without a recording is a cache miss.
    Replay { path: PathBuf },
    /// Outputs scripted per question id, `{"q1": "SELECT ...", ...}`.
    Mock { script: PathBuf, default_output: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    pub endpoint: Endpoint,
    #[serde(default)]
    pub decoding: Decoding,
    /// Lower value wins when an ensemble emits one of several agreeing queries.
    pub priority: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenerationResult {
    pub question_id: String,
    pub model_id: String,
    pub raw_output: String,
    #[serde(serialize_with = "answer_str")]
    pub extracted: Answer,
    pub latency_ms: u64,
    pub from_cache: bool,
}

fn answer_str<S: serde::Serializer>(a: &Answer, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(a.as_file_str())
}

/// Raw text returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawGeneration {
    pub text: String,
    pub from_cache: bool,
}

pub trait Generator: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, question_id: &str, prompt: &str) -> Result<RawGeneration>;

    /// Flushes any recordings made during the run.
    fn finish(&self) -> Result<()> {
        Ok(())
    }
}

/// Hex SHA-256 of the prompt text, the replay-cache key.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn generate(generator: &dyn Generator, question_id: &str, prompt: &str) -> Result<GenerationResult> {
    let start = Instant::now();
    let raw = generator.complete(question_id, prompt)?;
    Ok(GenerationResult {
        question_id: question_id.to_owned(),
        model_id: generator.model_id().to_owned(),
        extracted: extract_sql(&raw.text),
        raw_output: raw.text,
        latency_ms: start.elapsed().as_millis() as u64,
        from_cache: raw.from_cache,
    })
}

/// Builds the backend for `config`.
pub fn build(config: &ModelConfig, retry: RetryPolicy) -> Result<Box<dyn Generator>> {
    Ok(match &config.endpoint {
        Endpoint::Http { url, checkpoint, token_env, response_pointer, replay, timeout_ms } => {
            let http = HttpGenerator::new(
                &config.model_id,
                url,
                checkpoint.as_deref().unwrap_or(&config.model_id),
                token_env.as_deref(),
                response_pointer.as_deref().unwrap_or(DEFAULT_RESPONSE_POINTER),
                config.decoding.clone(),
                retry,
                timeout_ms.map(std::time::Duration::from_millis),
            )?;
            match replay {
                Some(path) => {
                    Box::new(ReplayGenerator::recording(ReplayCache::open_or_empty(&config.model_id, path)?, http))
                }
                None => Box::new(http),
            }
        }
        Endpoint::Replay { path } => Box::new(ReplayGenerator::read_only(ReplayCache::load(&config.model_id, path)?)),
        Endpoint::Mock { script, default_output } => {
            Box::new(MockGenerator::from_file(&config.model_id, script, default_output.clone())?)
        }
    })
}

impl Error {
    /// Errors that abort a generation run instead of marking one question Null.
    pub fn is_fatal_for_run(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Io { .. } | Error::Config(_))
    }
}
