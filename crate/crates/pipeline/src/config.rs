//! Run configuration: a TOML file, overridden by command-line flags.
//!
//! Relative paths in the file are resolved against the file's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ehrsql_core::ensemble::VoteRule;
use ehrsql_core::prompt::{ExemplarOrder, PromptOptions};
use ehrsql_core::schema::DEFAULT_SAMPLE_CHARS;
use ehrsql_core::scoring::{ScoreMode, DEFAULT_COSTS};
use ehrsql_core::Split;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingProviderConfig, EmbeddingSource};
use crate::error::{Error, Result};
use crate::llm::{Endpoint, ModelConfig, RetryPolicy};
use crate::schema::SchemaOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_costs")]
    pub costs: Vec<f64>,
    #[serde(default)]
    pub scoring_mode: ScoreMode,
    pub paths: Paths,
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub exec: ExecConfig,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub db: PathBuf,
    pub train_questions: PathBuf,
    pub train_labels: PathBuf,
    /// The split that is generated for and scored.
    pub eval_questions: PathBuf,
    pub eval_labels: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub eval_split: Split,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Exemplars per prompt.
    pub n: usize,
    #[serde(default)]
    pub providers: Vec<EmbeddingProviderConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub with_samples: bool,
    pub samples_per_column: usize,
    pub sample_chars: usize,
    pub foreign_keys: bool,
    pub char_budget: Option<usize>,
    pub order: ExemplarOrder,
    /// Write every prompt under the output directory.
    pub archive: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            with_samples: true,
            samples_per_column: 1,
            sample_chars: DEFAULT_SAMPLE_CHARS,
            foreign_keys: false,
            char_budget: None,
            order: ExemplarOrder::MostSimilarFirst,
            archive: false,
        }
    }
}

impl PromptConfig {
    pub fn schema_options(&self) -> SchemaOptions {
        SchemaOptions {
            with_samples: self.with_samples,
            samples_per_column: self.samples_per_column,
            sample_chars: self.sample_chars,
            foreign_keys: self.foreign_keys,
        }
    }

    pub fn options(&self) -> PromptOptions {
        PromptOptions { order: self.order, char_budget: self.char_budget }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub rule: VoteRule,
    /// Smallest subset size swept when `subsets` is not given.
    pub min_size: usize,
    pub subsets: Option<Vec<Vec<String>>>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { rule: VoteRule::Strict, min_size: 2, subsets: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    pub timeout_ms: u64,
    /// SQL literal substituted for `current_time` before execution.
    pub current_time: Option<String>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self { timeout_ms: 30_000, current_time: None }
    }
}

impl ExecConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        let p = RetryPolicy::default();
        Self {
            max_attempts: p.max_attempts,
            base_delay_ms: p.base_delay.as_millis() as u64,
            max_delay_ms: p.max_delay.as_millis() as u64,
        }
    }
}

impl RetryConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
            ..RetryPolicy::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Model used for the ablation; defaults to the first configured model.
    pub model: Option<String>,
}

fn default_parallelism() -> usize {
    4
}

fn default_costs() -> Vec<f64> {
    DEFAULT_COSTS.to_vec()
}

fn default_split() -> Split {
    Split::Valid
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub n: Option<usize>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub costs: Option<Vec<f64>>,
    pub scoring_mode: Option<ScoreMode>,
    pub rule: Option<VoteRule>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.db,
            &mut paths.train_questions,
            &mut paths.train_labels,
            &mut paths.eval_questions,
            &mut paths.output_dir,
        ] {
            fix(p);
        }
        if let Some(p) = paths.eval_labels.as_mut() {
            fix(p);
        }
        for provider in &mut self.retrieval.providers {
            if let EmbeddingSource::VectorFile { path } = &mut provider.source {
                fix(path);
            }
        }
        for model in &mut self.models {
            match &mut model.endpoint {
                Endpoint::Http { replay: Some(path), .. }
                | Endpoint::Replay { path }
                | Endpoint::Mock { script: path, .. } => fix(path),
                Endpoint::Http { replay: None, .. } => {}
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.n {
            self.retrieval.n = n;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.paths.output_dir = d.clone();
        }
        if let Some(d) = &o.db {
            self.paths.db = d.clone();
        }
        if let Some(c) = &o.costs {
            self.costs = c.clone();
        }
        if let Some(m) = o.scoring_mode {
            self.scoring_mode = m;
        }
        if let Some(r) = o.rule {
            self.ensemble.rule = r;
        }
    }

    /// Checks invariants and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1".into());
        }
        if let Some(c) = self.costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return fail(format!("cost {c} must be finite and non-negative"));
        }
        let p = &self.paths;
        let mut inputs = vec![&p.db, &p.train_questions, &p.train_labels, &p.eval_questions];
        inputs.extend(p.eval_labels.as_ref());
        for provider in &self.retrieval.providers {
            if provider.dims == 0 {
                return fail(format!("provider {} needs dims > 0", provider.model_id));
            }
            if let EmbeddingSource::VectorFile { path } = &provider.source {
                inputs.push(path);
            }
        }
        for model in &self.models {
            match &model.endpoint {
                Endpoint::Replay { path } | Endpoint::Mock { script: path, .. } => inputs.push(path),
                Endpoint::Http { .. } => {}
            }
            let d = &model.decoding;
            if d.temperature.is_some_and(|t| t.is_nan() || t < 0.0) {
                return fail(format!("model {}: temperature must be >= 0", model.model_id));
            }
            if d.top_p.is_some_and(|t| !(t > 0.0 && t <= 1.0)) {
                return fail(format!("model {}: top_p must be in (0, 1]", model.model_id));
            }
        }
        if let Some(missing) = inputs.into_iter().find(|p| !p.exists()) {
            return fail(format!("{} does not exist", missing.display()));
        }
        unique(self.models.iter().map(|m| m.model_id.as_str()), "model id")?;
        unique(self.models.iter().map(|m| m.priority), "model priority")?;
        unique(self.retrieval.providers.iter().map(|m| m.model_id.as_str()), "provider id")?;
        if self.retrieval.n > 0 && self.retrieval.providers.is_empty() {
            return fail("retrieval.n > 0 needs at least one provider".into());
        }
        let ids: HashSet<&str> = self.models.iter().map(|m| m.model_id.as_str()).collect();
        for subset in self.ensemble.subsets.iter().flatten() {
            if subset.is_empty() {
                return fail("empty ensemble subset".into());
            }
            if let Some(m) = subset.iter().find(|m| !ids.contains(m.as_str())) {
                return fail(format!("ensemble subset names unknown model {m}"));
            }
        }
        if let Some(m) = &self.ablation.model {
            if !ids.contains(m.as_str()) {
                return fail(format!("ablation model {m} is not configured"));
            }
        }
        if self.retry.max_attempts == 0 {
            return fail("retry.max_attempts must be at least 1".into());
        }
        Ok(())
    }

    pub fn model(&self, id: &str) -> Result<&ModelConfig> {
        self.models.iter().find(|m| m.model_id == id).ok_or_else(|| Error::Config(format!("unknown model {id}")))
    }
}

fn unique<T: Eq + std::hash::Hash + std::fmt::Display>(items: impl Iterator<Item = T>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        if let Some(dup) = seen.replace(item) {
            return Err(Error::Config(format!("duplicate {what} {dup}")));
        }
    }
    Ok(())
}
