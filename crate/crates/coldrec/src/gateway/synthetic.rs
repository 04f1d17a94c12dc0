//! Deterministic offline backend.
//!
//! Embeddings use the hashing trick over the text's token multiset, so any
//! two runs (on any machine) produce identical unit-norm vectors and texts
//! sharing tokens land closer than disjoint ones. Completions are produced
//! by per-stage rules keyed off the prompt structure: profiles restate the
//! metadata, extraction emits one graph record per attribute, edge scores
//! blend token overlap with a stable hash, and recommendations rank the
//! offered candidates by overlap with the history. The result is a pipeline
//! that runs end to end with zero fixtures and zero network traffic.

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::gateway::{
    estimate_tokens, Backend, BackendConfig, BackendReply, ChatRequest, EmbeddingVector, PromptTag,
};
use crate::text::{stable_hash64, tokenize, truncate_chars};

const PROBES_PER_TOKEN: usize = 4;

pub struct SyntheticBackend {
    dim: usize,
    embed_model_id: String,
}

impl SyntheticBackend {
    pub fn new(dim: usize) -> SyntheticBackend {
        SyntheticBackend {
            dim: dim.max(8),
            embed_model_id: format!("hash-synthetic-{}", dim.max(8)),
        }
    }

    pub fn from_config(config: &BackendConfig) -> SyntheticBackend {
        let mut backend = SyntheticBackend::new(config.embed_dim);
        if !config.embed_model_name.is_empty() {
            backend.embed_model_id = config.embed_model_name.clone();
        }
        backend
    }

    /// Unit-norm vector determined by the normalized token multiset.
    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0f32; self.dim];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            values[0] = 1.0;
            return EmbeddingVector {
                values,
                model_id: self.embed_model_id.clone(),
            };
        }
        for token in &tokens {
            let digest = Sha256::digest(token.as_bytes());
            for probe in 0..PROBES_PER_TOKEN {
                let chunk: [u8; 4] = digest[probe * 4..probe * 4 + 4]
                    .try_into()
                    .expect("4 bytes");
                let raw = u32::from_be_bytes(chunk);
                let index = (raw >> 1) as usize % self.dim;
                let sign = if raw & 1 == 1 { 1.0 } else { -1.0 };
                values[index] += sign;
            }
        }
        let norm = values
            .iter()
            .map(|v| (*v as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for v in values.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        } else {
            values[0] = 1.0;
        }
        EmbeddingVector {
            values,
            model_id: self.embed_model_id.clone(),
        }
    }

    fn respond(&self, request: &ChatRequest) -> String {
        match request.tag {
            PromptTag::Profile => profile_response(&request.user_prompt),
            PromptTag::Extraction => extraction_response(&request.user_prompt),
            PromptTag::EdgeScoring => edge_scoring_response(&request.user_prompt),
            PromptTag::Recommendation => recommendation_response(&request.user_prompt),
        }
    }
}

impl Backend for SyntheticBackend {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply> {
        let text = self.respond(request);
        Ok(BackendReply {
            prompt_tokens: estimate_tokens(&request.system_prompt)
                + estimate_tokens(&request.user_prompt),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn embed_model_id(&self) -> String {
        self.embed_model_id.clone()
    }
}

/// Text of `prompt` between `marker` and the next marker in `stops` (or EOF).
fn span_between(prompt: &str, marker: &str, stops: &[&str]) -> Option<String> {
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    let end = stops
        .iter()
        .filter_map(|s| rest.find(s))
        .min()
        .unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

/// Lines shaped "N. text" following `marker`, numbering stripped.
fn numbered_lines_after(prompt: &str, marker: &str) -> Vec<String> {
    let Some(start) = prompt.find(marker) else {
        return Vec::new();
    };
    prompt[start + marker.len()..]
        .lines()
        .map(str::trim)
        .skip_while(|l| l.is_empty())
        .take_while(|l| !l.is_empty())
        .filter_map(|line| {
            let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
            if digits.is_empty() {
                return None;
            }
            let rest = line[digits.len()..]
                .trim_start_matches(['.', ')', ':'])
                .trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect()
}

fn profile_response(prompt: &str) -> String {
    let title = span_between(
        prompt,
        "Title:",
        &["Description:", "Attributes:", "Review excerpts:"],
    )
    .unwrap_or_default();
    let description = span_between(prompt, "Description:", &["Attributes:", "Review excerpts:"])
        .unwrap_or_default();
    let attributes = span_between(prompt, "Attributes:", &["Review excerpts:"]).unwrap_or_default();
    let review = span_between(prompt, "Review excerpts:", &[]).unwrap_or_default();

    let mut profile = String::new();
    if description.is_empty() {
        profile.push_str(&format!("{title} is a catalog item."));
    } else {
        profile.push_str(&format!("{title}: {description}"));
        if !profile.ends_with('.') {
            profile.push('.');
        }
    }
    if !attributes.is_empty() {
        profile.push_str(&format!(" Attributes: {attributes}."));
    }
    if !review.is_empty() {
        profile.push_str(&format!(
            " Reviewers note: {}",
            truncate_chars(&review, 160)
        ));
    }
    profile
}

fn extraction_response(prompt: &str) -> String {
    let title = span_between(prompt, "Item title:", &["Item profile:"]).unwrap_or_default();
    let profile = span_between(prompt, "Item profile:", &[]).unwrap_or_default();
    let d = super::templates::RECORD_DELIMITER;

    let mut lines = Vec::new();
    lines.push(format!(
        "ENTITY{d}{title}{d}item{d}{}",
        truncate_chars(&profile, 200)
    ));

    // One entity and a bidirectional edge pair per "key: value" attribute,
    // so the graph is traversable along outgoing edges in both directions.
    if let Some(attr_start) = profile.find("Attributes:") {
        let tail = &profile[attr_start + "Attributes:".len()..];
        let attrs = tail.split('.').next().unwrap_or("");
        for pair in attrs.split(';') {
            let Some((key, value)) = pair.split_once(':') else {
                continue;
            };
            let key = key.trim().to_lowercase().replace(' ', "_");
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                continue;
            }
            lines.push(format!(
                "ENTITY{d}{value}{d}{key}{d}{value} is a {key} associated with {title}"
            ));
            lines.push(format!(
                "RELATION{d}{title}{d}{value}{d}{title} features the {key} {value}"
            ));
            lines.push(format!(
                "RELATION{d}{value}{d}{title}{d}the {key} {value} characterizes {title}"
            ));
        }
    }
    lines.push(super::templates::RECORD_TERMINATOR.to_string());
    lines.join("\n")
}

fn edge_scoring_response(prompt: &str) -> String {
    let history_block =
        span_between(prompt, "User history (most recent last):", &["Edges:"]).unwrap_or_default();
    let history_tokens: Vec<String> = tokenize(&history_block)
        .into_iter()
        .filter(|t| t.len() >= 3)
        .collect();
    let edges = numbered_lines_after(prompt, "Edges:");

    edges
        .iter()
        .enumerate()
        .map(|(i, edge)| {
            let overlap = tokenize(edge)
                .into_iter()
                .filter(|t| t.len() >= 3)
                .collect::<std::collections::BTreeSet<_>>()
                .intersection(&history_tokens.iter().cloned().collect())
                .count();
            let score = if overlap > 0 {
                (6 + overlap).min(10) as u64
            } else {
                stable_hash64(&format!("{edge}\n{history_block}")) % 7
            };
            format!("{}: {}", i + 1, score)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn recommendation_response(prompt: &str) -> String {
    let k = span_between(prompt, "Recommend the top-", &[" items"])
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(10);
    let history = numbered_lines_after(prompt, "User history (most recent last):");
    let history_tokens: std::collections::BTreeSet<String> = history
        .iter()
        .flat_map(|t| tokenize(t))
        .filter(|t| t.len() >= 3)
        .collect();

    let candidates = numbered_lines_after(prompt, "Candidates:");
    if candidates.is_empty() {
        // Free-form generation: no grounding to draw on, so half the slots
        // echo history and half invent out-of-catalog titles.
        return (1..=k)
            .map(|i| {
                if i % 2 == 0 && !history.is_empty() {
                    format!("{}. {}", i, history[(i / 2 - 1) % history.len()])
                } else {
                    format!("{}. Uncharted Suggestion {}", i, i)
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
    }

    // Ties break on the title itself, never on list position, so the reply
    // is a pure function of the candidate set and run-to-run shuffles of
    // the prompt cannot leak into the output.
    let mut ranked: Vec<(usize, &String)> = candidates
        .iter()
        .map(|title| {
            let overlap = tokenize(title)
                .into_iter()
                .filter(|t| t.len() >= 3)
                .filter(|t| history_tokens.contains(t))
                .count();
            (overlap, title)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (_, title))| format!("{}. {}", i + 1, title))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::gateway::templates::render_template;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn profile_rule_keeps_attribute_structure() {
        let request = render_template(
            PromptTag::Profile,
            &slots(&[
                ("title", "Arcade Rally"),
                ("description", "a fast racing game"),
                ("attributes", "genre: arcade; feature: split screen"),
                ("review", ""),
            ]),
        )
        .unwrap();
        let backend = SyntheticBackend::new(64);
        let reply = backend.chat(&request).unwrap();
        assert!(reply.text.contains("Arcade Rally"));
        assert!(reply
            .text
            .contains("Attributes: genre: arcade; feature: split screen."));
    }

    #[test]
    fn extraction_rule_emits_item_and_attribute_records() {
        let request = render_template(
            PromptTag::Extraction,
            &slots(&[
                ("title", "Arcade Rally"),
                (
                    "profile",
                    "Arcade Rally: a fast racing game. Attributes: genre: arcade; feature: split screen.",
                ),
            ]),
        )
        .unwrap();
        let backend = SyntheticBackend::new(64);
        let text = backend.chat(&request).unwrap().text;
        assert!(text.contains("ENTITY<|>Arcade Rally<|>item<|>"));
        assert!(text.contains("ENTITY<|>arcade<|>genre<|>"));
        assert!(text.contains("RELATION<|>arcade<|>Arcade Rally<|>"));
        assert!(text.trim_end().ends_with("<|COMPLETE|>"));
    }

    #[test]
    fn edge_scores_prefer_history_overlap() {
        let backend = SyntheticBackend::new(64);
        let request = render_template(
            PromptTag::EdgeScoring,
            &slots(&[
                ("history", "1. Galaxy Strike Arcade"),
                (
                    "edges",
                    "1. arcade -> Galaxy Strike Arcade: the genre arcade characterizes Galaxy Strike Arcade\n2. pastel -> Quiet Farm: soothing pastel visuals",
                ),
            ]),
        )
        .unwrap();
        let text = backend.chat(&request).unwrap().text;
        let scores: Vec<u64> = text
            .lines()
            .map(|l| l.split(": ").last().unwrap().trim().parse().unwrap())
            .collect();
        assert!(scores[0] >= 7, "overlapping edge scored {}", scores[0]);
        assert!(scores[1] <= 6, "disjoint edge scored {}", scores[1]);
    }

    #[test]
    fn recommendation_rule_echoes_candidates_by_overlap() {
        let backend = SyntheticBackend::new(64);
        let request = render_template(
            PromptTag::Recommendation,
            &slots(&[
                ("context", "some context"),
                ("history", "1. Galaxy Strike Arcade"),
                (
                    "candidates",
                    "1. Quiet Farm\n2. Galaxy Strike Saga\n3. Desk Organizer",
                ),
                ("k", "2"),
            ]),
        )
        .unwrap();
        let text = backend.chat(&request).unwrap().text;
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "1. Galaxy Strike Saga");
    }

    #[test]
    fn free_form_recommendation_mixes_ood_titles() {
        let backend = SyntheticBackend::new(64);
        let request = render_template(
            PromptTag::Recommendation,
            &slots(&[
                ("context", ""),
                ("history", "1. Galaxy Strike Arcade"),
                ("candidates", ""),
                ("k", "4"),
            ]),
        )
        .unwrap();
        let text = backend.chat(&request).unwrap().text;
        assert!(text.contains("Uncharted Suggestion 1"));
        assert!(text.contains("Galaxy Strike Arcade"));
    }
}
