//! OpenAI-compatible HTTP backend.
//!
//! Speaks `POST /v1/chat/completions` and `POST /v1/embeddings` with JSON
//! bodies. The API key is read from the environment variable named in the
//! config, never from files. 429 and 5xx responses surface as retryable
//! errors so the gateway's backoff loop can take over; other 4xx responses
//! fail immediately.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::gateway::{Backend, BackendConfig, BackendReply, ChatRequest, EmbeddingVector};

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    model_name: String,
    embed_model_name: String,
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<HttpBackend> {
        let base_url = config
            .base_url
            .clone()
            .ok_or_else(|| Error::Config("http backend requires base_url".to_string()))?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build();
        Ok(HttpBackend {
            agent: ureq::Agent::new_with_config(agent_config),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model_name: config.model_name.clone(),
            embed_model_name: if config.embed_model_name.is_empty() {
                "text-embedding-3-small".to_string()
            } else {
                config.embed_model_name.clone()
            },
        })
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let url = format!("{}{}", self.base_url, path);
        let mut request = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| Error::Backend {
            message: format!("transport failure on {path}: {e}"),
            retryable: true,
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let body = response
                .body_mut()
                .read_to_string()
                .unwrap_or_default()
                .chars()
                .take(500)
                .collect();
            return Err(Error::HttpStatus { status, body });
        }
        response
            .body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| Error::Backend {
                message: format!("invalid json from {path}: {e}"),
                retryable: false,
            })
    }
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl Backend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply> {
        let body = json!({
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let value = self.post("/v1/chat/completions", &body)?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Backend {
                message: "completion response missing choices[0].message.content".to_string(),
                retryable: false,
            })?
            .to_string();
        let usage: Usage = value
            .get("usage")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .unwrap_or(Usage {
                prompt_tokens: 0,
                completion_tokens: 0,
            });
        Ok(BackendReply {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({
            "model": self.embed_model_name,
            "input": texts,
        });
        let value = self.post("/v1/embeddings", &body)?;
        let data = value
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| Error::Backend {
                message: "embedding response missing data array".to_string(),
                retryable: false,
            })?;
        let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
        for entry in data {
            let index = entry
                .get("index")
                .and_then(|i| i.as_u64())
                .unwrap_or(rows.len() as u64);
            let values: Vec<f32> = entry
                .get("embedding")
                .and_then(|e| e.as_array())
                .map(|a| {
                    a.iter()
                        .filter_map(|v| v.as_f64())
                        .map(|v| v as f32)
                        .collect()
                })
                .unwrap_or_default();
            if values.is_empty() {
                return Err(Error::Backend {
                    message: "embedding entry missing values".to_string(),
                    retryable: false,
                });
            }
            rows.push((index as usize, values));
        }
        rows.sort_by_key(|(index, _)| *index);
        if rows.len() != texts.len() {
            return Err(Error::Backend {
                message: format!("expected {} embeddings, got {}", texts.len(), rows.len()),
                retryable: false,
            });
        }
        Ok(rows
            .into_iter()
            .map(|(_, values)| EmbeddingVector {
                values,
                model_id: self.embed_model_name.clone(),
            })
            .collect())
    }

    fn embed_model_id(&self) -> String {
        self.embed_model_name.clone()
    }
}
