use std::collections::HashMap;
use std::path::Path;

use super::{Generator, RawGeneration};
use crate::error::{Error, Result};

/// Returns a scripted output per question id.
pub struct MockGenerator {
    model_id: String,
    script: HashMap<String, String>,
    default_output: Option<String>,
}

impl MockGenerator {
    pub fn new(model_id: impl Into<String>, script: HashMap<String, String>, default_output: Option<String>) -> Self {
        Self { model_id: model_id.into(), script, default_output }
    }

    pub fn from_file(model_id: &str, path: &Path, default_output: Option<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let script = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        Ok(Self::new(model_id, script, default_output))
    }
}

impl Generator for MockGenerator {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, question_id: &str, _prompt: &str) -> Result<RawGeneration> {
        let text = self.script.get(question_id).or(self.default_output.as_ref()).ok_or_else(|| {
            Error::MalformedResponse(format!("mock {} has no output for {question_id}", self.model_id))
        })?;
        Ok(RawGeneration { text: text.clone(), from_cache: false })
    }
}
