use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{Decoding, Generator, RawGeneration, RetryPolicy};
use crate::error::{Error, Result};

pub const DEFAULT_RESPONSE_POINTER: &str = "/choices/0/message/content";
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Chat-completion client. Rate limits, server errors and timeouts are retried.
pub struct HttpGenerator {
    model_id: String,
    url: String,
    checkpoint: String,
    token: Option<String>,
    response_pointer: String,
    decoding: Decoding,
    retry: RetryPolicy,
    client: Client,
    retries: AtomicU32,
}

enum Attempt {
    Done(String),
    Retry(Error),
    Fail(Error),
}

impl HttpGenerator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model_id: &str,
        url: &str,
        checkpoint: &str,
        token_env: Option<&str>,
        response_pointer: &str,
        decoding: Decoding,
        retry: RetryPolicy,
        timeout: Option<Duration>,
    ) -> Result<Self> {
        let token = match token_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?)
            }
            None => None,
        };
        let client = Client::builder()
            .timeout(timeout.unwrap_or(DEFAULT_TIMEOUT))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            model_id: model_id.to_owned(),
            url: url.to_owned(),
            checkpoint: checkpoint.to_owned(),
            token,
            response_pointer: response_pointer.to_owned(),
            decoding,
            retry,
            client,
            retries: AtomicU32::new(0),
        })
    }

    /// Retries performed so far across all requests.
    pub fn retries(&self) -> u32 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.checkpoint,
            "messages": [{"role": "user", "content": prompt}],
        });
        let fields = [
            ("temperature", self.decoding.temperature.map(Value::from)),
            ("top_p", self.decoding.top_p.map(Value::from)),
            ("max_tokens", self.decoding.max_tokens.map(Value::from)),
        ];
        for (key, value) in fields {
            if let Some(v) = value {
                body[key] = v;
            }
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut request = self.client.post(&self.url).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = match request.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(Error::Timeout(e.to_string())),
            Err(e) => return Attempt::Fail(Error::Transport(e.to_string())),
        };
        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(Error::RateLimited { attempts: 0 });
        }
        if status.is_server_error() {
            return Attempt::Retry(Error::Transport(format!("server returned {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Attempt::Fail(Error::MalformedResponse(format!("status {status}: {text}")));
        }
        let value: Value = match response.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Attempt::Retry(Error::Timeout(e.to_string())),
            Err(e) => return Attempt::Fail(Error::MalformedResponse(e.to_string())),
        };
        match value.pointer(&self.response_pointer).and_then(Value::as_str) {
            Some(text) => Attempt::Done(text.to_owned()),
            None => Attempt::Fail(Error::MalformedResponse(format!("no string at {}", self.response_pointer))),
        }
    }
}

impl Generator for HttpGenerator {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, question_id: &str, prompt: &str) -> Result<RawGeneration> {
        let body = self.request_body(prompt);
        let mut rng = rand::thread_rng();
        let mut attempt = 1;
        loop {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(RawGeneration { text, from_cache: false }),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.retry.max_attempts => {
                    return Err(match e {
                        Error::RateLimited { .. } => Error::RateLimited { attempts: attempt },
                        other => other,
                    });
                }
                Attempt::Retry(e) => {
                    let wait = self.retry.delay(attempt, &mut rng);
                    log::warn!("{} {question_id}: attempt {attempt} failed ({e}), retrying in {wait:?}", self.model_id);
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}
