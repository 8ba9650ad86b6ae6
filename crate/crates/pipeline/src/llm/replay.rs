//! Recorded model outputs keyed by prompt hash, one JSON file per model.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{prompt_hash, Generator, RawGeneration};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct ReplayCache {
    model_id: String,
    path: PathBuf,
    entries: Mutex<BTreeMap<String, String>>,
    dirty: Mutex<bool>,
}

impl ReplayCache {
    pub fn load(model_id: &str, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        Ok(Self::with_entries(model_id, path, entries))
    }

    pub fn open_or_empty(model_id: &str, path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(model_id, path)
        } else {
            Ok(Self::with_entries(model_id, path, BTreeMap::new()))
        }
    }

    fn with_entries(model_id: &str, path: &Path, entries: BTreeMap<String, String>) -> Self {
        Self {
            model_id: model_id.to_owned(),
            path: path.to_owned(),
            entries: Mutex::new(entries),
            dirty: Mutex::new(false),
        }
    }

    pub fn lookup(&self, prompt: &str) -> Option<String> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).get(&prompt_hash(prompt)).cloned()
    }

    pub fn record(&self, prompt: &str, raw_output: &str) {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).insert(prompt_hash(prompt), raw_output.to_owned());
        *self.dirty.lock().unwrap_or_else(|p| p.into_inner()) = true;
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the cache back if anything was recorded. Keys are sorted.
    pub fn save(&self) -> Result<()> {
        let mut dirty = self.dirty.lock().unwrap_or_else(|p| p.into_inner());
        if !*dirty {
            return Ok(());
        }
        let entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        let json = serde_json::to_string_pretty(&*entries).expect("string map serializes");
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&self.path, json + "\n").map_err(|e| Error::io(&self.path, e))?;
        *dirty = false;
        Ok(())
    }
}

/// Serves recorded outputs, optionally falling through to a live backend
/// whose outputs are then recorded.
pub struct ReplayGenerator {
    cache: ReplayCache,
    live: Option<Box<dyn Generator>>,
}

impl ReplayGenerator {
    pub fn read_only(cache: ReplayCache) -> Self {
        Self { cache, live: None }
    }

    pub fn recording(cache: ReplayCache, live: impl Generator + 'static) -> Self {
        Self { cache, live: Some(Box::new(live)) }
    }

    pub fn cache(&self) -> &ReplayCache {
        &self.cache
    }
}

impl Generator for ReplayGenerator {
    fn model_id(&self) -> &str {
        &self.cache.model_id
    }

    fn complete(&self, question_id: &str, prompt: &str) -> Result<RawGeneration> {
        if let Some(text) = self.cache.lookup(prompt) {
            return Ok(RawGeneration { text, from_cache: true });
        }
        match &self.live {
            Some(live) => {
                let out = live.complete(question_id, prompt)?;
                self.cache.record(prompt, &out.text);
                Ok(out)
            }
            None => Err(Error::CacheMiss { model_id: self.cache.model_id.clone(), prompt_hash: prompt_hash(prompt) }),
        }
    }

    fn finish(&self) -> Result<()> {
        self.cache.save()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{generate, MockGenerator};
    use std::collections::HashMap;

    #[test]
    fn hit_miss_and_recording() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("caches/m.json");
        let live = MockGenerator::new("m", HashMap::from([("q1".to_owned(), "SELECT 1;".to_owned())]), None);
        let rec = ReplayGenerator::recording(ReplayCache::open_or_empty("m", &path).unwrap(), live);
        let first = generate(&rec, "q1", "prompt one").unwrap();
        assert!(!first.from_cache);
        assert!(generate(&rec, "q1", "prompt one").unwrap().from_cache);
        rec.finish().unwrap();

        let replay = ReplayGenerator::read_only(ReplayCache::load("m", &path).unwrap());
        let hit = generate(&replay, "q1", "prompt one").unwrap();
        assert!(hit.from_cache);
        assert_eq!(hit.raw_output, first.raw_output);
        let miss = generate(&replay, "q1", "prompt two").unwrap_err();
        assert!(
            matches!(miss, Error::CacheMiss { ref prompt_hash, .. } if *prompt_hash == super::prompt_hash("prompt two"))
        );
    }

    #[test]
    fn malformed_cache_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, "[1, 2]").unwrap();
        assert!(matches!(ReplayCache::load("m", &path), Err(Error::MalformedFile { .. })));
    }
}
