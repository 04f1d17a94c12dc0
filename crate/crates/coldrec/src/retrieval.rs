//! Adaptive candidate retrieval over the knowledge graph.
//!
//! A user's history titles anchor a frontier of graph entities by cosine
//! similarity. The frontier then expands hop by hop: every outgoing edge of
//! the current frontier is scored by the LLM against the history, edges at
//! or above the threshold λ are retained, item-typed targets join the
//! candidate pool with their edge evidence, and retained targets form the
//! next frontier. Traversal stops when the pool reaches θ_pool, the
//! frontier empties, or the hop cap is hit. The pool is then ranked by
//! hop-discounted aggregate edge score down to θ_top candidates, whose
//! evidence becomes the generation context.
//!
//! Ranking is deterministic summation (discount γ per extra hop) rather
//! than another LLM call, so it is auditable and cheap; an optional
//! `llm_rerank` flag reorders the final list with one prompt. Embedding
//! similarity over item entities doubles as both the empty-pool fallback
//! and the retrieval ablation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::templates::{format_edge_batch, format_history};
use crate::gateway::{EmbeddingVector, Gateway, PromptTag};
use crate::store::{KnowledgeBase, Relation};
use crate::text::{normalize_title, truncate_chars};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Edge retention threshold on the 0..10 score scale.
    pub lambda: f64,
    /// Traversal stops once the pool holds this many items.
    pub theta_pool: usize,
    /// Final candidate set size after ranking.
    pub theta_top: usize,
    pub max_hops: usize,
    pub anchors_per_history_item: usize,
    pub anchor_similarity_floor: f64,
    /// How many of the most recent history items participate.
    pub history_window: usize,
    /// Edges per scoring prompt.
    pub edge_batch_size: usize,
    /// Highest-scoring evidence edges kept per candidate in the context.
    pub evidence_per_item: usize,
    /// Character budget for the generation context block.
    pub context_char_budget: usize,
    /// Per-hop discount applied when aggregating edge scores.
    pub hop_discount: f64,
    /// Also traverse edges against their stored direction.
    pub undirected: bool,
    /// Whether item-typed frontier nodes keep expanding.
    pub expand_item_nodes: bool,
    /// Include endpoint names next to the description in scoring prompts.
    pub score_includes_endpoints: bool,
    /// Rerank the final candidates with one extra LLM call.
    pub llm_rerank: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            lambda: 7.0,
            theta_pool: 300,
            theta_top: 100,
            max_hops: 3,
            anchors_per_history_item: 3,
            anchor_similarity_floor: 0.5,
            history_window: 10,
            edge_batch_size: 16,
            evidence_per_item: 3,
            context_char_budget: 6_000,
            hop_discount: 0.9,
            undirected: false,
            expand_item_nodes: true,
            score_includes_endpoints: true,
            llm_rerank: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=10.0).contains(&self.lambda) {
            return Err(Error::BadThreshold(self.lambda));
        }
        if self.theta_top > self.theta_pool {
            return Err(Error::Config(format!(
                "theta_top {} exceeds theta_pool {}",
                self.theta_top, self.theta_pool
            )));
        }
        if self.max_hops == 0 {
            return Err(Error::Config("max_hops must be at least 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserQuery {
    /// (item id, title) pairs, oldest first.
    pub history: Vec<(String, String)>,
    pub free_text: Option<String>,
}

impl UserQuery {
    pub fn from_titles(history: Vec<(String, String)>) -> UserQuery {
        UserQuery {
            history,
            free_text: None,
        }
    }

    fn windowed_titles(&self, window: usize) -> Vec<String> {
        let skip = self.history.len().saturating_sub(window);
        let mut titles: Vec<String> = self.history[skip..]
            .iter()
            .map(|(_, t)| t.clone())
            .collect();
        if let Some(text) = &self.free_text {
            if !text.trim().is_empty() {
                titles.push(text.clone());
            }
        }
        titles
    }

    fn history_ids(&self) -> BTreeSet<&str> {
        self.history.iter().map(|(id, _)| id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredEdge {
    pub source_key: String,
    pub target_key: String,
    pub description: String,
    /// Clamped into [0, 10].
    pub score: f64,
    pub hop: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evidence {
    pub description: String,
    pub score: f64,
    pub hop: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolEntry {
    pub item_id: String,
    pub title: String,
    /// Hop at which the item was first reached.
    pub first_hop: usize,
    /// The item entity's stored description.
    pub item_description: String,
    /// One entry per retained edge that reached this item.
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RetrievalTrace {
    /// (history title, entity key, similarity) anchor matches.
    pub anchors: Vec<(String, String, f64)>,
    /// Frontier per hop; index 0 is the anchor frontier.
    pub frontiers: Vec<Vec<String>>,
    pub scored_edges: Vec<ScoredEdge>,
    pub pool: Vec<PoolEntry>,
    pub final_candidates: Vec<String>,
    pub context_block: String,
    /// Unparseable score lines defaulted to 0.
    pub score_parse_warnings: u32,
    /// Set when edge scoring failed mid-run; the trace is partial.
    pub aborted: Option<String>,
    /// True when the empty-pool similarity fallback produced the candidates.
    pub used_fallback: bool,
}

/// Final candidates with their generation context.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub items: Vec<(String, String)>,
    pub context_block: String,
}

/// (history title, entity key, cosine similarity) anchor match.
pub type AnchorMatch = (String, String, f64);

/// Embeds the windowed history titles and matches each against stored
/// entity embeddings; the deduplicated union is the anchor frontier. When
/// the similarity floor filters everything out, the top-1 match per title
/// is taken regardless of the floor.
pub fn anchor(
    query: &UserQuery,
    kb: &KnowledgeBase,
    config: &RetrievalConfig,
    gateway: &Gateway,
) -> Result<(Vec<String>, Vec<AnchorMatch>)> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let titles = query.windowed_titles(config.history_window);
    if titles.is_empty() {
        return Err(Error::Config(
            "anchoring needs a non-empty history".to_string(),
        ));
    }
    let vectors = gateway.embed(&titles)?;

    let mut frontier: BTreeSet<String> = BTreeSet::new();
    let mut anchors = Vec::new();
    for (title, vector) in titles.iter().zip(&vectors) {
        let hits = kb.nearest_entities(vector, config.anchors_per_history_item, None)?;
        for (key, similarity) in hits {
            if similarity >= config.anchor_similarity_floor {
                frontier.insert(key.clone());
                anchors.push((title.clone(), key, similarity));
            }
        }
    }
    if frontier.is_empty() {
        for (title, vector) in titles.iter().zip(&vectors) {
            if let Some((key, similarity)) =
                kb.nearest_entities(vector, 1, None)?.into_iter().next()
            {
                frontier.insert(key.clone());
                anchors.push((title.clone(), key, similarity));
            }
        }
    }
    Ok((frontier.into_iter().collect(), anchors))
}

/// One edge as presented to the scoring prompt.
struct EdgeView<'a> {
    relation: &'a Relation,
    /// The frontier node this edge was reached from.
    neighbor_key: &'a str,
}

/// Scores a slice of relations against the history, batching prompts and
/// parsing numbered integer replies. Missing or malformed scores default
/// to 0 (exclusion-safe); out-of-range values clamp into [0, 10].
pub fn score_edges(
    edges: &[(String, String, String)],
    history_titles: &[String],
    gateway: &Gateway,
    config: &RetrievalConfig,
) -> Result<(Vec<f64>, u32)> {
    if edges.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let history_block = format_history(history_titles);
    let batch_size = config.edge_batch_size.max(1);
    let batches: Vec<&[(String, String, String)]> = edges.chunks(batch_size).collect();

    // Batches dispatch concurrently (the gateway gate bounds them); results
    // are applied in batch order regardless of completion order.
    let responses: Vec<Result<String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batches
            .iter()
            .map(|batch| {
                let history_block = history_block.clone();
                scope.spawn(move || {
                    let slots: BTreeMap<String, String> = [
                        ("history".to_string(), history_block),
                        (
                            "edges".to_string(),
                            format_edge_batch(batch, config.score_includes_endpoints),
                        ),
                    ]
                    .into();
                    let request = gateway.render(PromptTag::EdgeScoring, &slots)?;
                    gateway.chat(&request)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring worker panicked"))
            .collect()
    });

    let mut scores = Vec::with_capacity(edges.len());
    let mut warnings = 0u32;
    for (batch, response) in batches.iter().zip(responses) {
        let response = response?;
        let parsed = parse_score_lines(&response, batch.len());
        for value in &parsed {
            match value {
                Some(score) => scores.push(*score),
                None => {
                    scores.push(0.0);
                    warnings += 1;
                }
            }
        }
    }
    Ok((scores, warnings))
}

/// Parses "index: score" lines into per-edge slots (1-based indices).
fn parse_score_lines(response: &str, batch_len: usize) -> Vec<Option<f64>> {
    let mut slots: Vec<Option<f64>> = vec![None; batch_len];
    for line in response.lines() {
        let line = line.trim();
        let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let Ok(index) = digits.parse::<usize>() else {
            continue;
        };
        if index == 0 || index > batch_len {
            continue;
        }
        let rest = &line[digits.len()..];
        let number: String = rest
            .chars()
            .skip_while(|c| !c.is_ascii_digit() && *c != '-' && *c != '.')
            .take_while(|c| c.is_ascii_digit() || *c == '-' || *c == '.')
            .collect();
        if let Ok(value) = number.parse::<f64>() {
            slots[index - 1] = Some(value.clamp(0.0, 10.0));
        }
    }
    slots
}

/// Threshold-filtered multi-hop frontier expansion. Stops at the pool cap,
/// frontier exhaustion, or the hop cap; cycles are cut by a visited set and
/// each (source, target, description) triple is scored at most once per run.
/// A scoring backend failure mid-run returns the partial trace with
/// `aborted` set instead of discarding completed hops.
pub fn expand(
    kb: &KnowledgeBase,
    query: &UserQuery,
    config: &RetrievalConfig,
    gateway: &Gateway,
) -> Result<RetrievalTrace> {
    let (frontier_keys, anchors) = anchor(query, kb, config, gateway)?;
    let history_ids = query.history_ids();
    let history_titles = query.windowed_titles(config.history_window);

    let mut trace = RetrievalTrace {
        anchors,
        frontiers: vec![frontier_keys.clone()],
        ..RetrievalTrace::default()
    };
    let mut visited: BTreeSet<String> = frontier_keys.iter().cloned().collect();
    let mut scored_triples: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut pool_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut frontier = frontier_keys;

    for hop in 1..=config.max_hops {
        // Collect unscored edges leaving the frontier, in deterministic
        // triple order.
        let mut edge_views: Vec<EdgeView> = Vec::new();
        for key in &frontier {
            for relation in kb.out_edges(key) {
                edge_views.push(EdgeView {
                    relation,
                    neighbor_key: &relation.target_key,
                });
            }
            if config.undirected {
                for relation in kb.in_edges(key) {
                    edge_views.push(EdgeView {
                        relation,
                        neighbor_key: &relation.source_key,
                    });
                }
            }
        }
        edge_views.retain(|view| !scored_triples.contains(&view.relation.triple()));
        edge_views.sort_by_key(|a| a.relation.triple());
        edge_views.dedup_by(|a, b| a.relation.triple() == b.relation.triple());
        if edge_views.is_empty() {
            break;
        }

        let prompts: Vec<(String, String, String)> = edge_views
            .iter()
            .map(|view| {
                let display = |key: &str| {
                    kb.entity(key)
                        .map(|e| e.name.clone())
                        .unwrap_or_else(|| key.to_string())
                };
                (
                    display(&view.relation.source_key),
                    display(&view.relation.target_key),
                    view.relation.description.clone(),
                )
            })
            .collect();
        let (scores, warnings) = match score_edges(&prompts, &history_titles, gateway, config) {
            Ok(result) => result,
            Err(err) => {
                trace.aborted = Some(format!("edge scoring failed at hop {hop}: {err}"));
                return Ok(trace);
            }
        };
        trace.score_parse_warnings += warnings;

        let mut next_frontier: BTreeSet<String> = BTreeSet::new();
        for (view, score) in edge_views.iter().zip(scores) {
            let triple = view.relation.triple();
            scored_triples.insert(triple.clone());
            trace.scored_edges.push(ScoredEdge {
                source_key: triple.0,
                target_key: triple.1,
                description: triple.2,
                score,
                hop,
            });
            if score < config.lambda {
                continue;
            }
            let Some(neighbor) = kb.entity(view.neighbor_key) else {
                continue;
            };
            if neighbor.is_item {
                if let Some(item_id) = &neighbor.item_id {
                    if !history_ids.contains(item_id.as_str()) {
                        let evidence = Evidence {
                            description: view.relation.description.clone(),
                            score,
                            hop,
                        };
                        match pool_index.get(item_id) {
                            Some(&index) => trace.pool[index].evidence.push(evidence),
                            None => {
                                pool_index.insert(item_id.clone(), trace.pool.len());
                                trace.pool.push(PoolEntry {
                                    item_id: item_id.clone(),
                                    title: neighbor.name.clone(),
                                    first_hop: hop,
                                    item_description: neighbor
                                        .descriptions
                                        .first()
                                        .map(|(_, text)| text.clone())
                                        .unwrap_or_default(),
                                    evidence: vec![evidence],
                                });
                            }
                        }
                    }
                }
            }
            if (!neighbor.is_item || config.expand_item_nodes)
                && !visited.contains(view.neighbor_key)
            {
                visited.insert(view.neighbor_key.to_string());
                next_frontier.insert(view.neighbor_key.to_string());
            }
        }

        frontier = next_frontier.into_iter().collect();
        trace.frontiers.push(frontier.clone());
        // Overflow check runs after the full hop so a scoring batch is never
        // partially applied.
        if trace.pool.len() >= config.theta_pool {
            trace.pool.truncate(config.theta_pool);
            break;
        }
        if frontier.is_empty() {
            break;
        }
    }
    Ok(trace)
}

/// Ranks the pool by hop-discounted aggregate edge score, selects the top
/// θ_top, and assembles the evidence context block. Ties break on the best
/// single edge score, then ascending item id.
pub fn rank_pool(
    trace: &mut RetrievalTrace,
    config: &RetrievalConfig,
    gateway: &Gateway,
    history_titles: &[String],
) -> Result<CandidateSet> {
    let mut ranked: Vec<(f64, f64, &PoolEntry)> = trace
        .pool
        .iter()
        .map(|entry| {
            let aggregate: f64 = entry
                .evidence
                .iter()
                .map(|e| e.score * config.hop_discount.powi(e.hop as i32 - 1))
                .sum();
            let best: f64 = entry.evidence.iter().map(|e| e.score).fold(0.0, f64::max);
            (aggregate, best, entry)
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.2.item_id.cmp(&b.2.item_id))
    });
    ranked.truncate(config.theta_top);

    let mut selected: Vec<(String, String)> = ranked
        .iter()
        .map(|(_, _, entry)| (entry.item_id.clone(), entry.title.clone()))
        .collect();

    let mut context = String::new();
    for (_, _, entry) in &ranked {
        let mut evidence = entry.evidence.clone();
        evidence.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.description.cmp(&b.description))
        });
        let lines: Vec<String> = evidence
            .iter()
            .take(config.evidence_per_item)
            .map(|e| e.description.clone())
            .collect();
        context.push_str(&format!(
            "Item: {}\n{}\nEvidence: {}\n\n",
            entry.title,
            entry.item_description,
            lines.join(" | ")
        ));
    }
    let context_block = truncate_chars(context.trim_end(), config.context_char_budget);

    if config.llm_rerank && selected.len() > 1 {
        selected = llm_rerank(&selected, &context_block, history_titles, config, gateway)?;
    }

    trace.final_candidates = selected.iter().map(|(id, _)| id.clone()).collect();
    trace.context_block = context_block.clone();
    Ok(CandidateSet {
        items: selected,
        context_block,
    })
}

/// One recommendation-style prompt reorders the selected candidates;
/// titles the model omits keep their deterministic order at the tail.
fn llm_rerank(
    selected: &[(String, String)],
    context_block: &str,
    history_titles: &[String],
    _config: &RetrievalConfig,
    gateway: &Gateway,
) -> Result<Vec<(String, String)>> {
    let titles: Vec<String> = selected.iter().map(|(_, t)| t.clone()).collect();
    let slots: BTreeMap<String, String> = [
        ("context".to_string(), context_block.to_string()),
        ("history".to_string(), format_history(history_titles)),
        ("candidates".to_string(), format_history(&titles)),
        ("k".to_string(), selected.len().to_string()),
    ]
    .into();
    let request = gateway.render(PromptTag::Recommendation, &slots)?;
    let response = gateway.chat(&request)?;

    let by_norm: BTreeMap<String, usize> = selected
        .iter()
        .enumerate()
        .map(|(i, (_, title))| (normalize_title(title), i))
        .collect();
    let mut order: Vec<usize> = Vec::new();
    let mut taken = vec![false; selected.len()];
    for line in response.lines() {
        let line = line.trim();
        let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let title = line[digits.len()..]
            .trim_start_matches(['.', ')', ':'])
            .trim();
        if let Some(&index) = by_norm.get(&normalize_title(title)) {
            if !taken[index] {
                taken[index] = true;
                order.push(index);
            }
        }
    }
    for (index, done) in taken.iter().enumerate() {
        if !done {
            order.push(index);
        }
    }
    Ok(order.into_iter().map(|i| selected[i].clone()).collect())
}

/// Embedding-similarity retrieval over item entities: the θ_top items
/// nearest the centroid of the history-title embeddings, excluding the
/// history itself. Serves as both the retrieval ablation and the
/// empty-pool fallback.
pub fn similarity_fallback(
    query: &UserQuery,
    kb: &KnowledgeBase,
    config: &RetrievalConfig,
    gateway: &Gateway,
) -> Result<CandidateSet> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let titles = query.windowed_titles(config.history_window);
    if titles.is_empty() {
        return Err(Error::Config(
            "similarity retrieval needs a non-empty history".to_string(),
        ));
    }
    let vectors = gateway.embed(&titles)?;
    let dim = vectors[0].dim();
    let mut centroid = vec![0f64; dim];
    for vector in &vectors {
        for (slot, value) in centroid.iter_mut().zip(&vector.values) {
            *slot += *value as f64;
        }
    }
    let centroid = EmbeddingVector {
        values: centroid
            .iter()
            .map(|v| (*v / vectors.len() as f64) as f32)
            .collect(),
        model_id: vectors[0].model_id.clone(),
    };

    let history_ids = query.history_ids();
    let hits = kb.nearest_entities(
        &centroid,
        config.theta_top + query.history.len(),
        Some(crate::store::ITEM_TYPE),
    )?;
    let mut items = Vec::new();
    let mut context = String::new();
    for (key, _similarity) in hits {
        let Some(entity) = kb.entity(&key) else {
            continue;
        };
        let Some(item_id) = &entity.item_id else {
            continue;
        };
        if history_ids.contains(item_id.as_str()) {
            continue;
        }
        context.push_str(&format!(
            "Item: {}\n{}\n\n",
            entity.name,
            entity
                .descriptions
                .first()
                .map(|(_, text)| text.as_str())
                .unwrap_or_default()
        ));
        items.push((item_id.clone(), entity.name.clone()));
        if items.len() >= config.theta_top {
            break;
        }
    }
    Ok(CandidateSet {
        items,
        context_block: truncate_chars(context.trim_end(), config.context_char_budget),
    })
}

/// Full retrieval: expand, rank, and fall back to embedding similarity when
/// the pool came up empty.
pub fn retrieve(
    kb: &KnowledgeBase,
    query: &UserQuery,
    config: &RetrievalConfig,
    gateway: &Gateway,
) -> Result<(RetrievalTrace, CandidateSet)> {
    let history_titles = query.windowed_titles(config.history_window);
    let mut trace = expand(kb, query, config, gateway)?;
    if trace.aborted.is_some() {
        return Ok((trace, CandidateSet::default()));
    }
    let mut candidates = rank_pool(&mut trace, config, gateway, &history_titles)?;
    if candidates.items.is_empty() {
        candidates = similarity_fallback(query, kb, config, gateway)?;
        trace.used_fallback = true;
        trace.final_candidates = candidates.items.iter().map(|(id, _)| id.clone()).collect();
        trace.context_block = candidates.context_block.clone();
    }
    Ok((trace, candidates))
}
