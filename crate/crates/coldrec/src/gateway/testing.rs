//! Deterministic backends with hand-controlled behavior, for tests and the
//! runnable examples. Unlike the scripted backend these do not require
//! knowing exact prompt texts up front: edge scores come from a lookup
//! table keyed by edge description, and recommendations echo the candidate
//! list in presented order.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::gateway::{
    estimate_tokens, Backend, BackendReply, ChatRequest, EmbeddingVector, PromptTag,
    SyntheticBackend,
};

/// How the table backend answers recommendation prompts.
#[derive(Debug, Clone)]
pub enum RecommendRule {
    /// First k candidates in the order the prompt presents them.
    EchoCandidates,
    /// Always this list, rendered as "1. ...\n2. ...".
    FixedList(Vec<String>),
}

/// Backend whose edge scores are a function of the edge description.
pub struct TableBackend {
    edge_scores: BTreeMap<String, u32>,
    default_score: u32,
    recommend: RecommendRule,
    synthetic: SyntheticBackend,
}

impl TableBackend {
    pub fn new(dim: usize) -> TableBackend {
        TableBackend {
            edge_scores: BTreeMap::new(),
            default_score: 0,
            recommend: RecommendRule::EchoCandidates,
            synthetic: SyntheticBackend::new(dim),
        }
    }

    pub fn with_score(mut self, description: impl Into<String>, score: u32) -> TableBackend {
        self.edge_scores.insert(description.into(), score);
        self
    }

    pub fn with_scores<I: IntoIterator<Item = (String, u32)>>(mut self, scores: I) -> TableBackend {
        self.edge_scores.extend(scores);
        self
    }

    pub fn with_default_score(mut self, score: u32) -> TableBackend {
        self.default_score = score;
        self
    }

    pub fn with_recommend_rule(mut self, rule: RecommendRule) -> TableBackend {
        self.recommend = rule;
        self
    }

    pub fn score_for(&self, description: &str) -> u32 {
        *self
            .edge_scores
            .get(description)
            .unwrap_or(&self.default_score)
    }

    fn respond(&self, request: &ChatRequest) -> String {
        match request.tag {
            PromptTag::EdgeScoring => {
                let mut lines = Vec::new();
                let mut index = 0usize;
                let Some(start) = request.user_prompt.find("Edges:") else {
                    return String::new();
                };
                for line in request.user_prompt[start + "Edges:".len()..].lines() {
                    let line = line.trim();
                    let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
                    if digits.is_empty() {
                        continue;
                    }
                    index += 1;
                    let rest = line[digits.len()..].trim_start_matches(['.', ')']).trim();
                    // Lines are "src -> tgt: description" or bare descriptions.
                    let description = rest
                        .split_once(" -> ")
                        .and_then(|(_, tail)| tail.split_once(": "))
                        .map(|(_, desc)| desc)
                        .unwrap_or(rest);
                    lines.push(format!("{}: {}", index, self.score_for(description)));
                }
                lines.join("\n")
            }
            PromptTag::Recommendation => match &self.recommend {
                RecommendRule::FixedList(titles) => titles
                    .iter()
                    .enumerate()
                    .map(|(i, t)| format!("{}. {}", i + 1, t))
                    .collect::<Vec<_>>()
                    .join("\n"),
                RecommendRule::EchoCandidates => {
                    let k = request
                        .user_prompt
                        .split("Recommend the top-")
                        .nth(1)
                        .and_then(|s| s.split(' ').next())
                        .and_then(|s| s.parse::<usize>().ok())
                        .unwrap_or(10);
                    let Some(start) = request.user_prompt.find("Candidates:") else {
                        return (1..=k)
                            .map(|i| format!("{i}. Invented Title {i}"))
                            .collect::<Vec<_>>()
                            .join("\n");
                    };
                    request.user_prompt[start + "Candidates:".len()..]
                        .lines()
                        .map(str::trim)
                        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
                        .take(k)
                        .collect::<Vec<_>>()
                        .join("\n")
                }
            },
            _ => self
                .synthetic
                .chat(request)
                .map(|r| r.text)
                .unwrap_or_default(),
        }
    }
}

impl Backend for TableBackend {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply> {
        let text = self.respond(request);
        Ok(BackendReply {
            prompt_tokens: estimate_tokens(&request.user_prompt),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.synthetic.embed(texts)
    }

    fn embed_model_id(&self) -> String {
        self.synthetic.embed_model_id()
    }
}

/// Backend that fails the first `failures` chat calls with a retryable
/// error, then delegates to the synthetic rules.
pub struct FlakyBackend {
    failures: std::sync::Mutex<u32>,
    inner: SyntheticBackend,
}

impl FlakyBackend {
    pub fn new(failures: u32, dim: usize) -> FlakyBackend {
        FlakyBackend {
            failures: std::sync::Mutex::new(failures),
            inner: SyntheticBackend::new(dim),
        }
    }
}

impl Backend for FlakyBackend {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply> {
        let mut remaining = self.failures.lock().expect("poisoned");
        if *remaining > 0 {
            *remaining -= 1;
            return Err(crate::error::Error::Backend {
                message: "injected transient failure".to_string(),
                retryable: true,
            });
        }
        drop(remaining);
        self.inner.chat(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.inner.embed(texts)
    }

    fn embed_model_id(&self) -> String {
        self.inner.embed_model_id()
    }
}
