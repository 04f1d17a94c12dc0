//! Prompt templates for the four pipeline stages.
//!
//! Slot values are escaped before insertion so a value containing the record
//! delimiter or terminator cannot forge extraction records or break the
//! numbered-list structure the parsers rely on.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, PromptTag};

/// Record delimiter of the extraction wire format.
pub const RECORD_DELIMITER: &str = "<|>";
/// Terminator line of the extraction wire format.
pub const RECORD_TERMINATOR: &str = "<|COMPLETE|>";

/// Fallback system prompt used when no retrieved context is available.
pub const FALLBACK_SYSTEM_PROMPT: &str =
    "You are a recommender system. Rank items for the user based on their interaction history.";

fn required(slots: &BTreeMap<String, String>, name: &str) -> Result<String> {
    slots
        .get(name)
        .map(|v| escape_slot(v))
        .ok_or_else(|| Error::MissingSlot(name.to_string()))
}

/// Neutralizes the extraction delimiters inside slot values.
pub fn escape_slot(value: &str) -> String {
    value.replace("<|", "< |")
}

/// Renders one of the four stage templates. Temperature is left at 0; the
/// gateway applies the configured recommendation temperature on top.
pub fn render_template(tag: PromptTag, slots: &BTreeMap<String, String>) -> Result<ChatRequest> {
    match tag {
        PromptTag::Profile => {
            let title = required(slots, "title")?;
            let description = required(slots, "description")?;
            let attributes = required(slots, "attributes")?;
            let review = required(slots, "review")?;
            let user_prompt = format!(
                "Write a concise profile of the item below. Summarize what it is, its genre \
                 or category, standout features, characters or other notable entities, and \
                 the audience it suits. Fill small gaps from general knowledge, stay factual, \
                 and answer in plain prose of at most 150 words.\n\n\
                 Title: {title}\n\
                 Description: {description}\n\
                 Attributes: {attributes}\n\
                 Review excerpts: {review}"
            );
            Ok(ChatRequest {
                system_prompt: "You curate item knowledge for a recommender system.".to_string(),
                user_prompt,
                max_tokens: 400,
                temperature: 0.0,
                tag,
            })
        }
        PromptTag::Extraction => {
            let title = required(slots, "title")?;
            let profile = required(slots, "profile")?;
            let user_prompt = format!(
                "From the item profile below, extract the entities and the relations between \
                 them.\n\n\
                 Rules:\n\
                 - Output one record per line and nothing else.\n\
                 - Entity lines: ENTITY{d}name{d}type{d}description\n\
                 - Relation lines: RELATION{d}source name{d}target name{d}description\n\
                 - The item itself must appear as exactly one entity of type \"item\" named \
                 \"{title}\".\n\
                 - Prefer the types: item, genre, feature, target_user, setting, etc.\n\
                 - Emit at most 20 entities and 30 relations.\n\
                 - Finish with the line {t}\n\n\
                 Item title: {title}\n\
                 Item profile: {profile}",
                d = RECORD_DELIMITER,
                t = RECORD_TERMINATOR,
            );
            Ok(ChatRequest {
                system_prompt: "You turn item profiles into structured graph records.".to_string(),
                user_prompt,
                max_tokens: 1200,
                temperature: 0.0,
                tag,
            })
        }
        PromptTag::EdgeScoring => {
            let history = required(slots, "history")?;
            let edges = required(slots, "edges")?;
            let user_prompt = format!(
                "Given the user's interaction history, rate how relevant each edge of a \
                 knowledge graph is to what the user may want next. Reply with one line per \
                 edge in the form \"<index>: <score>\" where the score is an integer from 0 \
                 (irrelevant) to 10 (highly relevant). No other text.\n\n\
                 User history (most recent last):\n{history}\n\n\
                 Edges:\n{edges}"
            );
            Ok(ChatRequest {
                system_prompt:
                    "You judge the relevance of knowledge-graph edges to a user's interests."
                        .to_string(),
                user_prompt,
                max_tokens: 500,
                temperature: 0.0,
                tag,
            })
        }
        PromptTag::Recommendation => {
            let context = required(slots, "context")?;
            let history = required(slots, "history")?;
            let candidates = required(slots, "candidates")?;
            let k = required(slots, "k")?;
            let system_prompt = if context.trim().is_empty() {
                FALLBACK_SYSTEM_PROMPT.to_string()
            } else {
                context
            };
            let user_prompt = if candidates.trim().is_empty() {
                format!(
                    "Below are the user's recent interactions.\n\
                     Recommend the top-{k} items the user is most likely to enjoy next, based \
                     on the user's history. Reply with a numbered list, one item title per \
                     line, best first.\n\n\
                     User history (most recent last):\n{history}"
                )
            } else {
                format!(
                    "Below are the user's recent interactions and a list of candidate items.\n\
                     Recommend the top-{k} items among the given candidate list, based on the \
                     user's history and retrieved context. Reply with a numbered list, one \
                     item title per line, best first. Use the exact candidate titles.\n\n\
                     User history (most recent last):\n{history}\n\n\
                     Candidates:\n{candidates}"
                )
            };
            Ok(ChatRequest {
                system_prompt,
                user_prompt,
                max_tokens: 800,
                temperature: 0.0,
                tag,
            })
        }
    }
}

/// Formats an entity or relation description batch as numbered lines,
/// 1-based, one edge per line.
pub fn format_edge_batch(edges: &[(String, String, String)], include_endpoints: bool) -> String {
    edges
        .iter()
        .enumerate()
        .map(|(i, (source, target, description))| {
            if include_endpoints {
                format!("{}. {} -> {}: {}", i + 1, source, target, description)
            } else {
                format!("{}. {}", i + 1, description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Formats history titles as numbered lines, most recent last.
pub fn format_history(titles: &[String]) -> String {
    titles
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Formats candidate titles as numbered lines.
pub fn format_candidates(titles: &[String]) -> String {
    format_history(titles)
}

/// Attribute pairs joined as "key: value; key: value".
pub fn format_attributes(attributes: &[(String, String)]) -> String {
    attributes
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn profile_template_contains_every_slot_value() {
        let request = render_template(
            PromptTag::Profile,
            &slots(&[
                ("title", "Tomb Raider"),
                ("description", "an action-adventure classic"),
                ("attributes", "genre: action-adventure"),
                ("review", "loved the puzzles"),
            ]),
        )
        .unwrap();
        for value in [
            "Tomb Raider",
            "an action-adventure classic",
            "genre: action-adventure",
            "loved the puzzles",
        ] {
            assert!(request.user_prompt.contains(value), "missing {value}");
        }
    }

    #[test]
    fn extraction_missing_profile_slot_is_named() {
        let err = render_template(PromptTag::Extraction, &slots(&[("title", "X")])).unwrap_err();
        assert_eq!(err.to_string(), "missing slot: profile");
    }

    #[test]
    fn edge_scoring_prompt_enumerates_all_edges() {
        let edges: Vec<(String, String, String)> = (0..12)
            .map(|i| {
                (
                    format!("src{i}"),
                    format!("tgt{i}"),
                    format!("edge description {i}"),
                )
            })
            .collect();
        let request = render_template(
            PromptTag::EdgeScoring,
            &slots(&[
                ("history", "1. Some Game"),
                ("edges", &format_edge_batch(&edges, true)),
            ]),
        )
        .unwrap();
        for i in 1..=12 {
            assert!(
                request.user_prompt.contains(&format!("{i}. src")),
                "marker {i} missing"
            );
        }
        assert!(!request.user_prompt.contains("13. "));
    }

    #[test]
    fn recommendation_empty_context_uses_fallback() {
        let request = render_template(
            PromptTag::Recommendation,
            &slots(&[
                ("context", ""),
                ("history", "1. A"),
                ("candidates", "1. B"),
                ("k", "10"),
            ]),
        )
        .unwrap();
        assert_eq!(request.system_prompt, FALLBACK_SYSTEM_PROMPT);
    }

    #[test]
    fn slot_values_cannot_forge_records() {
        let hostile = format!("x{}ENTITY{}y", RECORD_TERMINATOR, RECORD_DELIMITER);
        let escaped = escape_slot(&hostile);
        assert!(!escaped.contains(RECORD_DELIMITER));
        assert!(!escaped.contains(RECORD_TERMINATOR));
    }
}
