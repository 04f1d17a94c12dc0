//! Fixture-driven backend for reproducible tests and golden runs.
//!
//! Chat responses are looked up by a key derived from the prompt: by default
//! `tag:sha256(normalized text)`, so whitespace-only template tweaks under
//! test control do not invalidate fixtures; strict mode hashes the untouched
//! text for golden tests. A prompt with no fixture is an error, never a
//! silent fallback. Embeddings delegate to the deterministic hash embedder;
//! scripting vectors by hand adds nothing a fixture could check.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{
    estimate_tokens, Backend, BackendConfig, BackendReply, ChatRequest, EmbeddingVector, PromptTag,
    SyntheticBackend,
};
use crate::text::{collapse_whitespace, sha256_hex};

/// Default fixture key: tag plus hash of the whitespace-normalized prompt.
pub fn fixture_key(tag: PromptTag, system_prompt: &str, user_prompt: &str) -> String {
    let normalized = collapse_whitespace(&format!("{system_prompt}\n\n{user_prompt}"));
    format!(
        "{}:{}",
        tag.as_str(),
        &sha256_hex(normalized.as_bytes())[..32]
    )
}

/// Strict fixture key: tag plus hash of the full untouched prompt text.
pub fn strict_fixture_key(tag: PromptTag, system_prompt: &str, user_prompt: &str) -> String {
    let full = format!("{system_prompt}\n\n{user_prompt}");
    format!(
        "{}:full:{}",
        tag.as_str(),
        &sha256_hex(full.as_bytes())[..32]
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureRecord {
    key: String,
    response: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum FixtureFile {
    One(FixtureRecord),
    Many(Vec<FixtureRecord>),
}

pub struct ScriptedBackend {
    fixtures: BTreeMap<String, String>,
    strict: bool,
    embedder: SyntheticBackend,
}

impl ScriptedBackend {
    pub fn empty(config: &BackendConfig) -> ScriptedBackend {
        ScriptedBackend {
            fixtures: BTreeMap::new(),
            strict: config.strict_fixtures,
            embedder: SyntheticBackend::from_config(config),
        }
    }

    /// Loads every `*.json` file in `dir`; each file holds one
    /// `{key, response}` object or an array of them.
    pub fn from_dir(dir: &Path, config: &BackendConfig) -> Result<ScriptedBackend> {
        let mut backend = ScriptedBackend::empty(config);
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let data = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            match serde_json::from_str::<FixtureFile>(&data)? {
                FixtureFile::One(record) => {
                    backend.fixtures.insert(record.key, record.response);
                }
                FixtureFile::Many(records) => {
                    for record in records {
                        backend.fixtures.insert(record.key, record.response);
                    }
                }
            }
        }
        Ok(backend)
    }

    fn key_for(&self, request: &ChatRequest) -> String {
        if self.strict {
            strict_fixture_key(request.tag, &request.system_prompt, &request.user_prompt)
        } else {
            fixture_key(request.tag, &request.system_prompt, &request.user_prompt)
        }
    }

    /// Registers the response for a prompt, keyed the same way lookup keys.
    pub fn add_response(&mut self, request: &ChatRequest, response: impl Into<String>) {
        self.fixtures.insert(self.key_for(request), response.into());
    }

    /// Registers a response under an explicit key.
    pub fn add_keyed(&mut self, key: impl Into<String>, response: impl Into<String>) {
        self.fixtures.insert(key.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Writes all fixtures into `dir` as one JSON file.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let records: Vec<FixtureRecord> = self
            .fixtures
            .iter()
            .map(|(key, response)| FixtureRecord {
                key: key.clone(),
                response: response.clone(),
            })
            .collect();
        let path = dir.join("fixtures.json");
        let body = serde_json::to_string_pretty(&records)?;
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

impl Backend for ScriptedBackend {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply> {
        let key = self.key_for(request);
        match self.fixtures.get(&key) {
            Some(response) => Ok(BackendReply {
                prompt_tokens: estimate_tokens(&request.system_prompt)
                    + estimate_tokens(&request.user_prompt),
                completion_tokens: estimate_tokens(response),
                text: response.clone(),
            }),
            None => Err(Error::UnscriptedPrompt { key }),
        }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.embedder.embed(texts)
    }

    fn embed_model_id(&self) -> String {
        self.embedder.embed_model_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(user: &str) -> ChatRequest {
        ChatRequest {
            system_prompt: "system".to_string(),
            user_prompt: user.to_string(),
            max_tokens: 64,
            temperature: 0.0,
            tag: PromptTag::Profile,
        }
    }

    #[test]
    fn lookup_returns_fixture_verbatim() {
        let mut backend = ScriptedBackend::empty(&BackendConfig::default());
        backend.add_response(&request("hello"), "fixture text");
        let reply = backend.chat(&request("hello")).unwrap();
        assert_eq!(reply.text, "fixture text");
    }

    #[test]
    fn whitespace_changes_hit_the_same_normalized_key() {
        let mut backend = ScriptedBackend::empty(&BackendConfig::default());
        backend.add_response(&request("hello   world"), "ok");
        assert_eq!(backend.chat(&request("hello world")).unwrap().text, "ok");
    }

    #[test]
    fn strict_mode_distinguishes_whitespace() {
        let config = BackendConfig {
            strict_fixtures: true,
            ..BackendConfig::default()
        };
        let mut backend = ScriptedBackend::empty(&config);
        backend.add_response(&request("hello   world"), "ok");
        assert!(backend.chat(&request("hello world")).is_err());
    }

    #[test]
    fn unscripted_prompt_is_an_error() {
        let backend = ScriptedBackend::empty(&BackendConfig::default());
        let err = backend.chat(&request("never seen")).unwrap_err();
        assert!(err.to_string().starts_with("unscripted prompt"));
    }

    #[test]
    fn fixture_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut backend = ScriptedBackend::empty(&BackendConfig::default());
        backend.add_response(&request("a"), "ra");
        backend.add_response(&request("b"), "rb");
        backend.save_dir(dir.path()).unwrap();

        let config = BackendConfig::scripted(dir.path());
        let loaded = ScriptedBackend::from_dir(dir.path(), &config).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.chat(&request("b")).unwrap().text, "rb");
    }
}
