//! Persistent hybrid knowledge base: a typed entity/relation graph with
//! textual descriptions plus an embedding index with exact cosine top-k.
//!
//! Entity identity is (case-folded, whitespace-collapsed, punctuation-
//! stripped name, type), so "Lara Croft" extracted from two games is one
//! node. Merged entities re-embed the concatenation of all descriptions,
//! oldest first, keeping the embedding a pure function of stored text.
//!
//! Exact (brute-force) cosine search is the contract here; no approximate
//! index participates in correctness. Traversal policy lives in the
//! retrieval engine; this module only stores adjacency.
//!
//! In-process, `&KnowledgeBase` is the consistent read snapshot and
//! `&mut KnowledgeBase` the single-writer gate. Cross-process writers go
//! through the CLI's lock file.

mod persist;

pub use persist::{SaveOpts, STORE_SCHEMA_VERSION};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{EmbeddingVector, Gateway};
use crate::text::canonical_name;

/// Reserved type for entities auto-created as relation endpoints.
pub const AUTO_TYPE: &str = "etc";
/// Type marking catalog items.
pub const ITEM_TYPE: &str = "item";

/// Canonical key: normalized name + "|" + lowercased type.
pub fn entity_key(name: &str, entity_type: &str) -> String {
    format!(
        "{}|{}",
        canonical_name(name),
        entity_type.trim().to_lowercase()
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entity {
    pub entity_key: String,
    /// Display name as first seen.
    pub name: String,
    pub entity_type: String,
    /// (source item id, text) pairs, oldest first, no exact duplicates.
    pub descriptions: Vec<(String, String)>,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
    pub is_item: bool,
    pub item_id: Option<String>,
}

impl Entity {
    /// Full description text: concatenation of all descriptions, oldest first.
    pub fn description_text(&self) -> String {
        self.descriptions
            .iter()
            .map(|(_, text)| text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub source_key: String,
    pub target_key: String,
    pub description: String,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
    pub source_item_id: String,
}

impl Relation {
    pub fn triple(&self) -> (String, String, String) {
        (
            self.source_key.clone(),
            self.target_key.clone(),
            self.description.clone(),
        )
    }
}

/// Candidate for [`KnowledgeBase::upsert_entities`].
#[derive(Debug, Clone)]
pub struct EntityCandidate {
    pub name: String,
    pub entity_type: String,
    pub description: String,
    /// Provenance: the catalog item whose extraction produced this.
    pub source_item_id: String,
    /// Set for item entities only.
    pub item_id: Option<String>,
}

/// Candidate for [`KnowledgeBase::upsert_relations`]. Endpoints are names,
/// resolved against stored entities at upsert time.
#[derive(Debug, Clone)]
pub struct RelationCandidate {
    pub source_name: String,
    pub target_name: String,
    pub description: String,
    pub source_item_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub inserted: u64,
    pub merged: u64,
    /// Relation endpoints auto-created as type "etc".
    pub auto_created: u64,
    /// Exact-duplicate entries skipped.
    pub skipped_duplicates: u64,
}

impl MergeReport {
    pub fn absorb(&mut self, other: &MergeReport) {
        self.inserted += other.inserted;
        self.merged += other.merged;
        self.auto_created += other.auto_created;
        self.skipped_duplicates += other.skipped_duplicates;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub embed_model_id: String,
    /// 0 until the first vector fixes it.
    pub dimension: usize,
    pub entity_count: u64,
    pub relation_count: u64,
    pub created: String,
    pub updated: String,
}

/// Entity-type histogram and (source type, target type) edge matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgStats {
    pub type_histogram: BTreeMap<String, u64>,
    pub edge_type_matrix: BTreeMap<String, u64>,
}

impl KgStats {
    pub fn entity_total(&self) -> u64 {
        self.type_histogram.values().sum()
    }

    pub fn relation_total(&self) -> u64 {
        self.edge_type_matrix.values().sum()
    }

    pub fn matrix_key(source_type: &str, target_type: &str) -> String {
        format!("{source_type}->{target_type}")
    }
}

#[derive(Debug)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
    out_edges: BTreeMap<String, Vec<Relation>>,
    /// item_id -> entity_key, derived, not persisted.
    item_index: BTreeMap<String, String>,
    manifest: Manifest,
}

fn now_rfc3339() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // Seconds-resolution UTC stamp without pulling in a time crate.
    let days = secs / 86_400;
    let (y, m, d) = civil_from_days(days as i64);
    let rem = secs % 86_400;
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

/// Days-since-epoch to (year, month, day), civil calendar.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

impl KnowledgeBase {
    pub fn new(embed_model_id: impl Into<String>) -> KnowledgeBase {
        let stamp = now_rfc3339();
        KnowledgeBase {
            entities: BTreeMap::new(),
            out_edges: BTreeMap::new(),
            item_index: BTreeMap::new(),
            manifest: Manifest {
                schema_version: STORE_SCHEMA_VERSION,
                embed_model_id: embed_model_id.into(),
                dimension: 0,
                entity_count: 0,
                relation_count: 0,
                created: stamp.clone(),
                updated: stamp,
            },
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity_count(&self) -> u64 {
        self.entities.len() as u64
    }

    pub fn relation_count(&self) -> u64 {
        self.out_edges.values().map(|v| v.len() as u64).sum()
    }

    pub fn entity(&self, key: &str) -> Option<&Entity> {
        self.entities.get(key)
    }

    /// Entities in ascending key order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn out_edges(&self, key: &str) -> &[Relation] {
        self.out_edges.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Incoming edges, scanned; only used by the undirected traversal flag.
    pub fn in_edges(&self, key: &str) -> Vec<&Relation> {
        self.out_edges
            .values()
            .flatten()
            .filter(|r| r.target_key == key)
            .collect()
    }

    /// All relations in (source key, insertion order) order.
    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.out_edges.values().flatten()
    }

    pub fn item_entity_key(&self, item_id: &str) -> Option<&String> {
        self.item_index.get(item_id)
    }

    pub fn item_title(&self, item_id: &str) -> Option<&str> {
        self.item_index
            .get(item_id)
            .and_then(|key| self.entities.get(key))
            .map(|e| e.name.as_str())
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &String> {
        self.item_index.keys()
    }

    /// Verifies the runtime embedder matches the one the KB was built with.
    pub fn ensure_embedder(&self, configured: &str) -> Result<()> {
        if self.manifest.embed_model_id != configured {
            return Err(Error::EmbedderMismatch {
                stored: self.manifest.embed_model_id.clone(),
                configured: configured.to_string(),
            });
        }
        Ok(())
    }

    fn touch(&mut self) {
        self.manifest.entity_count = self.entity_count();
        self.manifest.relation_count = self.relation_count();
        self.manifest.updated = now_rfc3339();
    }

    fn check_dimension(&mut self, vector: &EmbeddingVector) -> Result<()> {
        if self.manifest.dimension == 0 {
            self.manifest.dimension = vector.dim();
            return Ok(());
        }
        if vector.dim() != self.manifest.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.manifest.dimension,
                got: vector.dim(),
            });
        }
        Ok(())
    }

    /// Low-level insert with a caller-supplied embedding. Skips merging; the
    /// key must not exist yet. Upserts are the merging path.
    pub fn insert_entity(&mut self, mut entity: Entity) -> Result<()> {
        let vector = entity.embedding.take().ok_or_else(|| Error::Backend {
            message: format!("entity {} has no embedding", entity.entity_key),
            retryable: false,
        })?;
        self.check_dimension(&vector)?;
        entity.embedding = Some(vector);
        if entity.is_item {
            if let Some(item_id) = &entity.item_id {
                self.item_index
                    .insert(item_id.clone(), entity.entity_key.clone());
            }
        }
        self.entities.insert(entity.entity_key.clone(), entity);
        self.touch();
        Ok(())
    }

    /// Low-level relation insert; endpoints must exist.
    pub fn insert_relation(&mut self, relation: Relation) -> Result<()> {
        for endpoint in [&relation.source_key, &relation.target_key] {
            if !self.entities.contains_key(endpoint) {
                return Err(Error::Backend {
                    message: format!("relation endpoint {endpoint} not stored"),
                    retryable: false,
                });
            }
        }
        if let Some(vector) = &relation.embedding {
            self.check_dimension(vector)?;
        }
        self.out_edges
            .entry(relation.source_key.clone())
            .or_default()
            .push(relation);
        self.touch();
        Ok(())
    }

    /// Merges a batch of entity candidates. Existing keys gain any new
    /// description and re-embed the concatenation of all descriptions,
    /// oldest first; new keys are inserted and embedded.
    pub fn upsert_entities(
        &mut self,
        batch: &[EntityCandidate],
        gateway: &Gateway,
    ) -> Result<MergeReport> {
        let mut report = MergeReport::default();
        let mut dirty: BTreeSet<String> = BTreeSet::new();
        let mut late_item_ids: Vec<(String, String)> = Vec::new();

        for candidate in batch {
            let entity_type = candidate.entity_type.trim().to_lowercase();
            let entity_type = if entity_type.is_empty() {
                AUTO_TYPE.to_string()
            } else {
                entity_type
            };
            let key = entity_key(&candidate.name, &entity_type);
            if key.starts_with('|') {
                // Name normalized to nothing; unusable as identity.
                report.skipped_duplicates += 1;
                continue;
            }
            match self.entities.get_mut(&key) {
                Some(existing) => {
                    report.merged += 1;
                    let duplicate = existing
                        .descriptions
                        .iter()
                        .any(|(_, text)| text == &candidate.description);
                    if !duplicate && !candidate.description.is_empty() {
                        existing.descriptions.push((
                            candidate.source_item_id.clone(),
                            candidate.description.clone(),
                        ));
                        dirty.insert(key.clone());
                    }
                    if existing.is_item && existing.item_id.is_none() {
                        existing.item_id = candidate.item_id.clone();
                        if let Some(item_id) = &existing.item_id {
                            late_item_ids.push((item_id.clone(), key.clone()));
                        }
                    }
                }
                None => {
                    report.inserted += 1;
                    let is_item = entity_type == ITEM_TYPE;
                    let entity = Entity {
                        entity_key: key.clone(),
                        name: candidate.name.trim().to_string(),
                        entity_type,
                        descriptions: vec![(
                            candidate.source_item_id.clone(),
                            candidate.description.clone(),
                        )],
                        embedding: None,
                        is_item,
                        item_id: if is_item {
                            candidate.item_id.clone()
                        } else {
                            None
                        },
                    };
                    if is_item {
                        if let Some(item_id) = &entity.item_id {
                            self.item_index.insert(item_id.clone(), key.clone());
                        }
                    }
                    self.entities.insert(key.clone(), entity);
                    dirty.insert(key);
                }
            }
        }

        for (item_id, key) in late_item_ids {
            self.item_index.insert(item_id, key);
        }
        self.reembed_entities(&dirty, gateway)?;
        self.touch();
        Ok(report)
    }

    fn reembed_entities(&mut self, keys: &BTreeSet<String>, gateway: &Gateway) -> Result<()> {
        if keys.is_empty() {
            return Ok(());
        }
        let texts: Vec<String> = keys
            .iter()
            .map(|key| self.entities[key].description_text())
            .collect();
        let vectors = gateway.embed(&texts)?;
        for (key, vector) in keys.iter().zip(vectors) {
            self.check_dimension(&vector)?;
            self.entities
                .get_mut(key)
                .expect("dirty key exists")
                .embedding = Some(vector);
        }
        Ok(())
    }

    /// Merges a batch of relation candidates. Endpoint names resolve to
    /// stored entities (declared item types win, then lexicographic type);
    /// unresolvable endpoints are auto-created as type "etc" with the
    /// relation description as their description. Exact-duplicate
    /// (source, target, description) triples are skipped.
    pub fn upsert_relations(
        &mut self,
        batch: &[RelationCandidate],
        gateway: &Gateway,
    ) -> Result<MergeReport> {
        let mut report = MergeReport::default();
        let mut resolved: Vec<(String, String, &RelationCandidate)> =
            Vec::with_capacity(batch.len());

        for candidate in batch {
            let mut keys = [None, None];
            for (slot, name) in [&candidate.source_name, &candidate.target_name]
                .into_iter()
                .enumerate()
            {
                keys[slot] = match self.resolve_endpoint(name) {
                    Some(key) => Some(key),
                    None => {
                        let auto = EntityCandidate {
                            name: name.clone(),
                            entity_type: AUTO_TYPE.to_string(),
                            description: candidate.description.clone(),
                            source_item_id: candidate.source_item_id.clone(),
                            item_id: None,
                        };
                        let auto_report =
                            self.upsert_entities(std::slice::from_ref(&auto), gateway)?;
                        if auto_report.inserted == 0 {
                            // Name normalized to nothing.
                            None
                        } else {
                            report.auto_created += 1;
                            Some(entity_key(name, AUTO_TYPE))
                        }
                    }
                };
            }
            let (Some(source_key), Some(target_key)) = (keys[0].clone(), keys[1].clone()) else {
                report.skipped_duplicates += 1;
                continue;
            };
            let duplicate = self.out_edges.get(&source_key).is_some_and(|edges| {
                edges
                    .iter()
                    .any(|r| r.target_key == target_key && r.description == candidate.description)
            }) || resolved.iter().any(|(s, t, c)| {
                s == &source_key && t == &target_key && c.description == candidate.description
            });
            if duplicate {
                report.skipped_duplicates += 1;
                continue;
            }
            resolved.push((source_key, target_key, candidate));
        }

        if resolved.is_empty() {
            self.touch();
            return Ok(report);
        }
        let texts: Vec<String> = resolved
            .iter()
            .map(|(_, _, c)| c.description.clone())
            .collect();
        let vectors = gateway.embed(&texts)?;
        for ((source_key, target_key, candidate), vector) in resolved.into_iter().zip(vectors) {
            self.check_dimension(&vector)?;
            self.out_edges
                .entry(source_key.clone())
                .or_default()
                .push(Relation {
                    source_key,
                    target_key,
                    description: candidate.description.clone(),
                    embedding: Some(vector),
                    source_item_id: candidate.source_item_id.clone(),
                });
            report.inserted += 1;
        }
        self.touch();
        Ok(report)
    }

    /// Name-only endpoint resolution: among entities whose canonical name
    /// matches, prefer the item-typed one, then the lexicographically
    /// smallest type.
    fn resolve_endpoint(&self, name: &str) -> Option<String> {
        let canon = canonical_name(name);
        if canon.is_empty() {
            return None;
        }
        let prefix = format!("{canon}|");
        let mut candidates: Vec<&String> = self
            .entities
            .range(prefix.clone()..)
            .take_while(|(key, _)| key.starts_with(&prefix))
            .map(|(key, _)| key)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        candidates.sort();
        candidates
            .iter()
            .find(|key| key.ends_with(&format!("|{ITEM_TYPE}")))
            .or(candidates.first())
            .map(|key| (*key).clone())
    }

    /// Exact top-k cosine search over entity embeddings. Results come in
    /// non-increasing similarity with ties broken by ascending key.
    pub fn nearest_entities(
        &self,
        query: &EmbeddingVector,
        k: usize,
        type_filter: Option<&str>,
    ) -> Result<Vec<(String, f64)>> {
        if self.manifest.dimension != 0 && query.dim() != self.manifest.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.manifest.dimension,
                got: query.dim(),
            });
        }
        let mut scored: Vec<(String, f64)> = self
            .entities
            .values()
            .filter(|e| type_filter.is_none_or(|t| e.entity_type == t))
            .filter_map(|e| {
                e.embedding
                    .as_ref()
                    .map(|v| (e.entity_key.clone(), query.cosine(v)))
            })
            .collect();
        // Stable sort over a key-ordered scan: ties stay in ascending key order.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        scored.truncate(k);
        Ok(scored)
    }

    /// Exact counts by entity type and (source type, target type) pair.
    pub fn stats(&self) -> KgStats {
        let mut stats = KgStats::default();
        for entity in self.entities.values() {
            *stats
                .type_histogram
                .entry(entity.entity_type.clone())
                .or_insert(0) += 1;
        }
        for relation in self.relations() {
            let source_type = self
                .entities
                .get(&relation.source_key)
                .map(|e| e.entity_type.as_str())
                .unwrap_or("?");
            let target_type = self
                .entities
                .get(&relation.target_key)
                .map(|e| e.entity_type.as_str())
                .unwrap_or("?");
            *stats
                .edge_type_matrix
                .entry(KgStats::matrix_key(source_type, target_type))
                .or_insert(0) += 1;
        }
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendConfig;

    fn gateway() -> Gateway {
        let mut config = BackendConfig::synthetic();
        config.embed_dim = 64;
        Gateway::new(config).unwrap()
    }

    fn candidate(name: &str, entity_type: &str, description: &str) -> EntityCandidate {
        EntityCandidate {
            name: name.to_string(),
            entity_type: entity_type.to_string(),
            description: description.to_string(),
            source_item_id: "src".to_string(),
            item_id: None,
        }
    }

    fn vector(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector {
            values: values.to_vec(),
            model_id: "test".to_string(),
        }
    }

    fn raw_entity(key_name: &str, entity_type: &str, values: &[f32]) -> Entity {
        Entity {
            entity_key: entity_key(key_name, entity_type),
            name: key_name.to_string(),
            entity_type: entity_type.to_string(),
            descriptions: vec![("src".to_string(), format!("{key_name} description"))],
            embedding: Some(vector(values)),
            is_item: entity_type == ITEM_TYPE,
            item_id: (entity_type == ITEM_TYPE).then(|| key_name.to_string()),
        }
    }

    #[test]
    fn duplicate_insert_merges_to_one_entity_one_description() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        let c = candidate("Lara Croft", "character", "iconic explorer");
        let report = kb.upsert_entities(&[c.clone(), c], &gw).unwrap();
        assert_eq!(
            report,
            MergeReport {
                inserted: 1,
                merged: 1,
                ..Default::default()
            }
        );
        let entity = kb.entity("lara croft|character").unwrap();
        assert_eq!(entity.descriptions.len(), 1);
    }

    #[test]
    fn distinct_descriptions_accumulate() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        kb.upsert_entities(&[candidate("Lara Croft", "character", "from game A")], &gw)
            .unwrap();
        kb.upsert_entities(&[candidate("Lara Croft", "character", "from game B")], &gw)
            .unwrap();
        let entity = kb.entity("lara croft|character").unwrap();
        assert_eq!(entity.descriptions.len(), 2);
        assert_eq!(entity.descriptions[0].1, "from game A");
    }

    #[test]
    fn case_and_whitespace_fold_to_one_key() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        let report = kb
            .upsert_entities(
                &[
                    candidate("Lara Croft", "character", "a"),
                    candidate("  lara   CROFT ", "Character", "b"),
                ],
                &gw,
            )
            .unwrap();
        assert_eq!(report.inserted, 1);
        assert_eq!(report.merged, 1);
        assert_eq!(kb.entity_count(), 1);
    }

    #[test]
    fn duplicate_triple_stored_once() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        kb.upsert_entities(
            &[
                candidate("A", "item", "item a"),
                candidate("B", "genre", "genre b"),
            ],
            &gw,
        )
        .unwrap();
        let relation = RelationCandidate {
            source_name: "A".to_string(),
            target_name: "B".to_string(),
            description: "A belongs to B".to_string(),
            source_item_id: "a".to_string(),
        };
        let first = kb
            .upsert_relations(std::slice::from_ref(&relation), &gw)
            .unwrap();
        let second = kb.upsert_relations(&[relation], &gw).unwrap();
        assert_eq!(first.inserted, 1);
        assert_eq!(second.inserted, 0);
        assert_eq!(second.skipped_duplicates, 1);
        assert_eq!(kb.relation_count(), 1);
    }

    #[test]
    fn unknown_endpoint_is_auto_created() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        kb.upsert_entities(&[candidate("A", "item", "item a")], &gw)
            .unwrap();
        let report = kb
            .upsert_relations(
                &[RelationCandidate {
                    source_name: "A".to_string(),
                    target_name: "Mystery Studio".to_string(),
                    description: "A was made by Mystery Studio".to_string(),
                    source_item_id: "a".to_string(),
                }],
                &gw,
            )
            .unwrap();
        assert_eq!(report.auto_created, 1);
        assert_eq!(report.inserted, 1);
        let auto = kb.entity("mystery studio|etc").unwrap();
        assert_eq!(auto.descriptions[0].1, "A was made by Mystery Studio");
    }

    #[test]
    fn three_distinct_triples_grow_count_by_three() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        kb.upsert_entities(
            &[
                candidate("A", "item", "a"),
                candidate("B", "genre", "b"),
                candidate("C", "feature", "c"),
            ],
            &gw,
        )
        .unwrap();
        let mk = |target: &str, desc: &str| RelationCandidate {
            source_name: "A".to_string(),
            target_name: target.to_string(),
            description: desc.to_string(),
            source_item_id: "a".to_string(),
        };
        let before = kb.relation_count();
        kb.upsert_relations(&[mk("B", "r1"), mk("C", "r2"), mk("B", "r3")], &gw)
            .unwrap();
        assert_eq!(kb.relation_count(), before + 3);
    }

    #[test]
    fn upsert_is_idempotent_for_identical_batches() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        let batch = vec![
            candidate("A", "item", "item a"),
            candidate("B", "genre", "genre b"),
        ];
        kb.upsert_entities(&batch, &gw).unwrap();
        let stats_once = kb.stats();
        kb.upsert_entities(&batch, &gw).unwrap();
        assert_eq!(kb.stats(), stats_once);
    }

    #[test]
    fn nearest_identity_similarity_one() {
        let mut kb = KnowledgeBase::new("test");
        kb.insert_entity(raw_entity("a", "item", &[1.0, 2.0, 2.0]))
            .unwrap();
        let hits = kb
            .nearest_entities(&vector(&[1.0, 2.0, 2.0]), 1, None)
            .unwrap();
        assert_eq!(hits[0].0, "a|item");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nearest_orthogonal_similarity_zero() {
        let mut kb = KnowledgeBase::new("test");
        kb.insert_entity(raw_entity("a", "item", &[0.0, 1.0, 0.0]))
            .unwrap();
        let hits = kb
            .nearest_entities(&vector(&[1.0, 0.0, 0.0]), 1, None)
            .unwrap();
        assert!(hits[0].1.abs() < 1e-6);
    }

    #[test]
    fn nearest_hand_computed_cosine() {
        // store {[1,2,2],[2,1,2]}, query [1,2,2]: dot = 2+2+4 = 8, norms 3·3 = 9.
        let mut kb = KnowledgeBase::new("test");
        kb.insert_entity(raw_entity("a", "item", &[1.0, 2.0, 2.0]))
            .unwrap();
        kb.insert_entity(raw_entity("b", "item", &[2.0, 1.0, 2.0]))
            .unwrap();
        let hits = kb
            .nearest_entities(&vector(&[1.0, 2.0, 2.0]), 2, None)
            .unwrap();
        assert_eq!(hits[0].0, "a|item");
        assert_eq!(hits[1].0, "b|item");
        assert!((hits[1].1 - 8.0 / 9.0).abs() < 1e-6, "got {}", hits[1].1);
    }

    #[test]
    fn nearest_ties_break_by_ascending_key() {
        let mut kb = KnowledgeBase::new("test");
        kb.insert_entity(raw_entity("zeta", "item", &[1.0, 0.0]))
            .unwrap();
        kb.insert_entity(raw_entity("alpha", "item", &[1.0, 0.0]))
            .unwrap();
        kb.insert_entity(raw_entity("mid", "item", &[1.0, 0.0]))
            .unwrap();
        let hits = kb.nearest_entities(&vector(&[1.0, 0.0]), 3, None).unwrap();
        let keys: Vec<&str> = hits.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, vec!["alpha|item", "mid|item", "zeta|item"]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut kb = KnowledgeBase::new("test");
        kb.insert_entity(raw_entity("a", "item", &[1.0, 0.0]))
            .unwrap();
        let err = kb
            .nearest_entities(&vector(&[1.0, 0.0, 0.0]), 1, None)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                got: 3
            }
        ));
    }

    #[test]
    fn stats_histogram_counts_fixture() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        let mut batch = Vec::new();
        for i in 0..5 {
            batch.push(candidate(&format!("item {i}"), "item", "an item"));
            batch.push(candidate(&format!("feature {i}"), "feature", "a feature"));
        }
        kb.upsert_entities(&batch, &gw).unwrap();
        let stats = kb.stats();
        assert_eq!(stats.type_histogram.get("item"), Some(&5));
        assert_eq!(stats.type_histogram.get("feature"), Some(&5));
        assert_eq!(stats.entity_total(), kb.manifest().entity_count);
    }

    #[test]
    fn empty_kb_has_zero_stats() {
        let kb = KnowledgeBase::new("test");
        let stats = kb.stats();
        assert_eq!(stats.entity_total(), 0);
        assert_eq!(stats.relation_total(), 0);
    }

    #[test]
    fn stats_totals_match_manifest_counts() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        kb.upsert_entities(
            &[candidate("A", "item", "a"), candidate("B", "genre", "b")],
            &gw,
        )
        .unwrap();
        kb.upsert_relations(
            &[RelationCandidate {
                source_name: "A".to_string(),
                target_name: "B".to_string(),
                description: "A is B".to_string(),
                source_item_id: "a".to_string(),
            }],
            &gw,
        )
        .unwrap();
        let stats = kb.stats();
        assert_eq!(stats.entity_total(), kb.manifest().entity_count);
        assert_eq!(stats.relation_total(), kb.manifest().relation_count);
    }

    #[test]
    fn referential_integrity_holds_after_upserts() {
        let gw = gateway();
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        kb.upsert_entities(&[candidate("A", "item", "a")], &gw)
            .unwrap();
        kb.upsert_relations(
            &[RelationCandidate {
                source_name: "Ghost".to_string(),
                target_name: "A".to_string(),
                description: "ghost points at A".to_string(),
                source_item_id: "a".to_string(),
            }],
            &gw,
        )
        .unwrap();
        for relation in kb.relations() {
            assert!(kb.entity(&relation.source_key).is_some());
            assert!(kb.entity(&relation.target_key).is_some());
        }
    }
}
