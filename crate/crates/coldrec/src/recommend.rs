//! Generation and output parsing: compose the system/user prompts from
//! retrieval output, invoke the model, extract the ranked titles and match
//! them against the catalog with hallucination accounting.
//!
//! Title matching runs exact, then normalized (case/punctuation/whitespace
//! folded), then fuzzy (normalized Levenshtein at a configurable ceiling,
//! default 0.15). When a candidate restriction set is given, every tier is
//! confined to it (fuzzy matching can never escape the offered list), so
//! an entry is out-of-domain if it names nothing the model was shown.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemMetadata;
use crate::error::{Error, Result};
use crate::gateway::templates::{format_candidates, format_history};
use crate::gateway::{Gateway, PromptTag};
use crate::retrieval::{self, RetrievalConfig, RetrievalTrace, UserQuery};
use crate::store::KnowledgeBase;
use crate::text::{normalize_title, normalized_edit_distance, stable_hash64};

/// Default ceiling on normalized edit distance for fuzzy title matches.
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Normalized,
    Fuzzy,
    OutOfDomain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecEntry {
    /// 1-based, gapless.
    pub rank: u32,
    pub raw_title: String,
    pub matched_item_id: Option<String>,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedRecommendation {
    pub entries: Vec<RecEntry>,
    pub k: usize,
}

impl RankedRecommendation {
    pub fn ood_count(&self) -> u32 {
        self.entries
            .iter()
            .filter(|e| e.match_kind == MatchKind::OutOfDomain)
            .count() as u32
    }

    /// Rank of a target item among the entries, if present.
    pub fn rank_of(&self, item_id: &str) -> Option<u32> {
        self.entries
            .iter()
            .find(|e| e.matched_item_id.as_deref() == Some(item_id))
            .map(|e| e.rank)
    }

    /// The entries as the numbered list the parser accepts.
    pub fn as_numbered_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}. {}", e.rank, e.raw_title))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Title lookup built from the catalog (or the KB's item entities):
/// normalized title -> item id, plus display titles.
#[derive(Debug, Clone, Default)]
pub struct TitleIndex {
    by_exact: BTreeMap<String, String>,
    by_norm: BTreeMap<String, String>,
    display: BTreeMap<String, String>,
}

impl TitleIndex {
    pub fn from_catalog(catalog: &BTreeMap<String, ItemMetadata>) -> TitleIndex {
        let mut index = TitleIndex::default();
        for (item_id, meta) in catalog {
            index.insert(item_id, &meta.title);
        }
        index
    }

    pub fn from_kb(kb: &KnowledgeBase) -> TitleIndex {
        let mut index = TitleIndex::default();
        for item_id in kb.item_ids() {
            if let Some(title) = kb.item_title(item_id) {
                index.insert(item_id, title);
            }
        }
        index
    }

    pub fn insert(&mut self, item_id: &str, title: &str) {
        // First title wins so duplicate titles stay deterministic.
        self.by_exact
            .entry(title.to_string())
            .or_insert_with(|| item_id.to_string());
        self.by_norm
            .entry(normalize_title(title))
            .or_insert_with(|| item_id.to_string());
        self.display.insert(item_id.to_string(), title.to_string());
    }

    pub fn title_of(&self, item_id: &str) -> Option<&str> {
        self.display.get(item_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.display.len()
    }

    pub fn is_empty(&self) -> bool {
        self.display.is_empty()
    }

    fn iter_titles(&self) -> impl Iterator<Item = (&String, &String)> {
        // (normalized title, item_id)
        self.by_norm.iter()
    }
}

/// Builds the recommendation prompt slots: retrieved context as the system
/// prompt (static fallback when empty), the last `history_window` history
/// titles, the numbered candidates, and the top-k instruction. An empty
/// candidate list switches the prompt to free-form generation.
pub fn compose_slots(
    context_block: &str,
    query: &UserQuery,
    candidates: &[(String, String)],
    k: usize,
    history_window: usize,
) -> BTreeMap<String, String> {
    let skip = query.history.len().saturating_sub(history_window);
    let titles: Vec<String> = query.history[skip..]
        .iter()
        .map(|(_, t)| t.clone())
        .collect();
    let candidate_titles: Vec<String> = candidates.iter().map(|(_, t)| t.clone()).collect();
    [
        ("context".to_string(), context_block.to_string()),
        ("history".to_string(), format_history(&titles)),
        (
            "candidates".to_string(),
            format_candidates(&candidate_titles),
        ),
        ("k".to_string(), k.to_string()),
    ]
    .into()
}

/// Renders the full (system, user) prompt pair.
pub fn compose_prompts(
    context_block: &str,
    query: &UserQuery,
    candidates: &[(String, String)],
    k: usize,
    history_window: usize,
) -> Result<(String, String)> {
    let slots = compose_slots(context_block, query, candidates, k, history_window);
    let request = crate::gateway::templates::render_template(PromptTag::Recommendation, &slots)?;
    Ok((request.system_prompt, request.user_prompt))
}

fn extract_ranked_lines(raw: &str) -> Vec<String> {
    let mut lines = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
        let rest = if !digits.is_empty() {
            let tail = &line[digits.len()..];
            let Some(stripped) = tail.strip_prefix(['.', ')', ':', '-']) else {
                continue;
            };
            stripped
        } else if let Some(stripped) = line.strip_prefix(['-', '*', '\u{2022}']) {
            stripped
        } else {
            continue;
        };
        let title = rest
            .trim()
            .trim_matches('*')
            .trim_matches('"')
            .trim_matches('\u{201c}')
            .trim_matches('\u{201d}')
            .trim();
        if !title.is_empty() {
            lines.push(title.to_string());
        }
    }
    lines
}

fn match_title(
    raw: &str,
    index: &TitleIndex,
    restriction: Option<&[(String, String)]>,
    fuzzy_threshold: f64,
) -> (Option<String>, MatchKind) {
    // Tier 1: exact text.
    let exact_hit = match restriction {
        Some(candidates) => candidates
            .iter()
            .find(|(_, title)| title == raw)
            .map(|(id, _)| id.clone()),
        None => index.by_exact.get(raw).cloned(),
    };
    if let Some(id) = exact_hit {
        return (Some(id), MatchKind::Exact);
    }

    // Tier 2: normalized equality.
    let norm = normalize_title(raw);
    if !norm.is_empty() {
        let norm_hit = match restriction {
            Some(candidates) => candidates
                .iter()
                .find(|(_, title)| normalize_title(title) == norm)
                .map(|(id, _)| id.clone()),
            None => index.by_norm.get(&norm).cloned(),
        };
        if let Some(id) = norm_hit {
            return (Some(id), MatchKind::Normalized);
        }
    }

    // Tier 3: bounded fuzzy distance, best match wins, ties by item id.
    let mut best: Option<(f64, String)> = None;
    let mut consider = |candidate_norm: &str, item_id: &str| {
        let distance = normalized_edit_distance(&norm, candidate_norm);
        if distance <= fuzzy_threshold {
            let better = match &best {
                None => true,
                Some((best_distance, best_id)) => {
                    distance < *best_distance
                        || (distance == *best_distance && item_id < best_id.as_str())
                }
            };
            if better {
                best = Some((distance, item_id.to_string()));
            }
        }
    };
    match restriction {
        Some(candidates) => {
            for (item_id, title) in candidates {
                consider(&normalize_title(title), item_id);
            }
        }
        None => {
            for (candidate_norm, item_id) in index.iter_titles() {
                consider(candidate_norm, item_id);
            }
        }
    }
    match best {
        Some((_, id)) => (Some(id), MatchKind::Fuzzy),
        None => (None, MatchKind::OutOfDomain),
    }
}

/// Extracts the ranked titles from a generation and matches each against
/// the catalog (or the candidate restriction set, when given). Duplicates
/// of an already-matched item are dropped; the list truncates to `k`.
pub fn parse_top_k(
    raw: &str,
    index: &TitleIndex,
    restriction: Option<&[(String, String)]>,
    k: usize,
    fuzzy_threshold: f64,
) -> Result<RankedRecommendation> {
    let lines = extract_ranked_lines(raw);
    if lines.is_empty() {
        return Err(Error::UnparseableRecommendation);
    }
    let mut entries: Vec<RecEntry> = Vec::new();
    let mut seen_items: Vec<String> = Vec::new();
    for raw_title in lines {
        if entries.len() >= k {
            break;
        }
        let (matched_item_id, match_kind) =
            match_title(&raw_title, index, restriction, fuzzy_threshold);
        if let Some(id) = &matched_item_id {
            if seen_items.iter().any(|seen| seen == id) {
                continue;
            }
            seen_items.push(id.clone());
        }
        entries.push(RecEntry {
            rank: entries.len() as u32 + 1,
            raw_title,
            matched_item_id,
            match_kind,
        });
    }
    Ok(RankedRecommendation { entries, k })
}

/// Which pipeline variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecMode {
    /// Graph construction + adaptive retrieval.
    #[serde(rename = "full")]
    Full,
    /// Graph, but retrieval replaced by embedding-similarity top-k.
    #[serde(rename = "wo_R")]
    WoR,
    /// Plain generation: no graph, no retrieval, no candidate list.
    #[serde(rename = "wo_GR")]
    WoGr,
}

impl std::str::FromStr for RecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<RecMode> {
        match s {
            "full" => Ok(RecMode::Full),
            "wo_r" | "wo_R" => Ok(RecMode::WoR),
            "wo_gr" | "wo_GR" | "wo_g_r" => Ok(RecMode::WoGr),
            other => Err(Error::Config(format!("unknown mode: {other}"))),
        }
    }
}

impl RecMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RecMode::Full => "full",
            RecMode::WoR => "wo_R",
            RecMode::WoGr => "wo_GR",
        }
    }
}

/// Everything one generation produced, for scoring and audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub user_id: String,
    pub mode: RecMode,
    /// (system, user) prompts; populated only in audit mode.
    pub prompts: Option<(String, String)>,
    pub raw_response: String,
    pub recommendation: RankedRecommendation,
    pub ood_count: u32,
    /// Entries emitted (every one occupies a rank).
    pub entries_count: u32,
    /// Set when both parse attempts failed; scored as a miss.
    pub parse_failed: bool,
    /// Set when a pipeline stage failed; scored as a miss.
    pub failure: Option<String>,
    /// Traversal pool size (0 for fallback/plain modes).
    pub pool_size: usize,
    pub used_fallback: bool,
}

impl GenerationRecord {
    fn empty(user_id: &str, mode: RecMode, k: usize) -> GenerationRecord {
        GenerationRecord {
            user_id: user_id.to_string(),
            mode,
            prompts: None,
            raw_response: String::new(),
            recommendation: RankedRecommendation {
                entries: Vec::new(),
                k,
            },
            ood_count: 0,
            entries_count: 0,
            parse_failed: false,
            failure: None,
            pool_size: 0,
            used_fallback: false,
        }
    }
}

pub struct RecommendOutcome {
    pub record: GenerationRecord,
    pub trace: Option<RetrievalTrace>,
}

/// Runs the pipeline for one user: retrieve (per mode), compose, generate,
/// parse. Candidates are shuffled with a per-user seed before prompt
/// insertion to avoid position bias. Unparseable generations get one
/// repair-reprompt and are otherwise returned as an empty, flagged record
/// rather than an error, so evaluation runs never abort on one user.
#[allow(clippy::too_many_arguments)]
pub fn recommend(
    user_id: &str,
    query: &UserQuery,
    kb: Option<&KnowledgeBase>,
    index: &TitleIndex,
    config: &RetrievalConfig,
    gateway: &Gateway,
    mode: RecMode,
    k: usize,
    seed: u64,
    audit: bool,
) -> Result<RecommendOutcome> {
    let mut trace: Option<RetrievalTrace> = None;
    let mut pool_size = 0usize;
    let mut used_fallback = false;

    let (context_block, mut candidates) = match mode {
        RecMode::Full => {
            let kb = kb
                .ok_or(Error::EmptyKnowledgeBase)
                .map_err(Error::in_stage("retrieval"))?;
            let (run_trace, candidate_set) = retrieval::retrieve(kb, query, config, gateway)
                .map_err(Error::in_stage("retrieval"))?;
            if let Some(reason) = &run_trace.aborted {
                let mut record = GenerationRecord::empty(user_id, mode, k);
                record.failure = Some(reason.clone());
                return Ok(RecommendOutcome {
                    record,
                    trace: Some(run_trace),
                });
            }
            pool_size = run_trace.pool.len();
            used_fallback = run_trace.used_fallback;
            let context = candidate_set.context_block.clone();
            trace = Some(run_trace);
            (context, candidate_set.items)
        }
        RecMode::WoR => {
            let kb = kb
                .ok_or(Error::EmptyKnowledgeBase)
                .map_err(Error::in_stage("retrieval"))?;
            let candidate_set = retrieval::similarity_fallback(query, kb, config, gateway)
                .map_err(Error::in_stage("retrieval"))?;
            (candidate_set.context_block, candidate_set.items)
        }
        RecMode::WoGr => (String::new(), Vec::new()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash64(user_id));
    candidates.shuffle(&mut rng);

    let slots = compose_slots(&context_block, query, &candidates, k, config.history_window);
    let request = gateway
        .render(PromptTag::Recommendation, &slots)
        .map_err(Error::in_stage("compose"))?;
    let response = gateway
        .chat(&request)
        .map_err(Error::in_stage("generation"))?;

    let restriction = match mode {
        RecMode::WoGr => None,
        _ => Some(candidates.as_slice()),
    };
    let parsed = match parse_top_k(&response, index, restriction, k, DEFAULT_FUZZY_THRESHOLD) {
        Ok(parsed) => Ok(parsed),
        Err(Error::UnparseableRecommendation) => {
            let mut repair = request.clone();
            repair.user_prompt.push_str(
                "\n\nYour previous reply could not be parsed. Reply only with a numbered list, \
                 one item title per line.",
            );
            let second = gateway
                .chat(&repair)
                .map_err(Error::in_stage("generation"))?;
            parse_top_k(&second, index, restriction, k, DEFAULT_FUZZY_THRESHOLD)
        }
        Err(other) => Err(other),
    };

    let (recommendation, parse_failed) = match parsed {
        Ok(parsed) => (parsed, false),
        Err(Error::UnparseableRecommendation) => (
            RankedRecommendation {
                entries: Vec::new(),
                k,
            },
            true,
        ),
        Err(other) => return Err(Error::in_stage("parse")(other)),
    };

    let record = GenerationRecord {
        user_id: user_id.to_string(),
        mode,
        prompts: audit.then(|| (request.system_prompt.clone(), request.user_prompt.clone())),
        raw_response: response,
        ood_count: recommendation.ood_count(),
        entries_count: recommendation.entries.len() as u32,
        recommendation,
        parse_failed,
        failure: None,
        pool_size,
        used_fallback,
    };
    Ok(RecommendOutcome { record, trace })
}
