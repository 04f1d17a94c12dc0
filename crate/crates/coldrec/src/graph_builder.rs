//! Knowledge-graph construction: item profiles, entity/relation extraction,
//! batch builds and single-item incremental insertion.
//!
//! The extraction wire format is one record per line,
//! `ENTITY<|>name<|>type<|>description` or
//! `RELATION<|>source<|>target<|>description`, closed by a `<|COMPLETE|>`
//! line. Unparseable records are dropped and counted; a fully unparseable
//! response earns one repair-reprompt (with the parse error appended) and is
//! then skipped. Builds are resume-safe through an append-only journal keyed
//! by the hash of each item's metadata.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::ItemMetadata;
use crate::error::{Error, Result};
use crate::gateway::templates::{format_attributes, RECORD_DELIMITER, RECORD_TERMINATOR};
use crate::gateway::{Gateway, PromptTag};
use crate::store::{EntityCandidate, KnowledgeBase, MergeReport, RelationCandidate, ITEM_TYPE};
use crate::text::{canonical_name, collapse_whitespace, sha256_hex, truncate_chars};

#[derive(Debug, Clone)]
pub struct BuildCaps {
    /// Profile text cap in characters.
    pub profile_max_chars: usize,
    /// Extraction caps per item.
    pub max_entities: usize,
    pub max_relations: usize,
    /// Build is marked failed when item failures exceed this rate.
    pub failure_ceiling: f64,
}

impl Default for BuildCaps {
    fn default() -> Self {
        BuildCaps {
            profile_max_chars: 1_200,
            max_entities: 20,
            max_relations: 30,
            failure_ceiling: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemProfile {
    pub item_id: String,
    pub text: String,
    /// Hash of the metadata this profile was generated from.
    pub source_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub name: String,
    pub entity_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedRelation {
    pub source_name: String,
    pub target_name: String,
    pub description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub item_id: String,
    pub entities: Vec<ExtractedEntity>,
    pub relations: Vec<ExtractedRelation>,
    pub raw_response: String,
    /// Unparseable or over-cap records dropped.
    pub dropped_records: u32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub items_total: usize,
    pub items_ok: usize,
    pub items_failed: usize,
    /// Items satisfied from the journal without any LLM call.
    pub items_skipped: usize,
    /// True when the failure rate exceeded the configured ceiling.
    pub failed: bool,
    pub entities_inserted: u64,
    pub entities_merged: u64,
    pub relations_inserted: u64,
    pub relations_auto_created: u64,
    pub llm_calls: u64,
    pub tokens: u64,
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AddReport {
    /// True when the journal already had this item at the same source hash.
    pub skipped: bool,
    pub merge: MergeReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalLine {
    item_id: String,
    source_hash: String,
    status: String,
}

/// Append-only progress journal enabling resumable builds.
#[derive(Debug, Default)]
struct Journal {
    seen: BTreeMap<String, String>,
    path: Option<PathBuf>,
}

impl Journal {
    fn load(path: PathBuf) -> Result<Journal> {
        let mut seen = BTreeMap::new();
        if path.exists() {
            let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in std::io::BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalLine = serde_json::from_str(&line)?;
                if entry.status == "ok" {
                    seen.insert(entry.item_id, entry.source_hash);
                }
            }
        }
        Ok(Journal {
            seen,
            path: Some(path),
        })
    }

    fn contains(&self, item_id: &str, source_hash: &str) -> bool {
        self.seen.get(item_id).is_some_and(|h| h == source_hash)
    }

    fn record(&mut self, item_id: &str, source_hash: &str, ok: bool) -> Result<()> {
        if ok {
            self.seen
                .insert(item_id.to_string(), source_hash.to_string());
        }
        if let Some(path) = &self.path {
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(&JournalLine {
                item_id: item_id.to_string(),
                source_hash: source_hash.to_string(),
                status: if ok { "ok" } else { "failed" }.to_string(),
            })?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Stable hash of the metadata fields a profile depends on.
pub fn metadata_hash(metadata: &ItemMetadata) -> String {
    let canonical = serde_json::to_string(metadata).expect("metadata serializes");
    sha256_hex(canonical.as_bytes())
}

pub struct GraphBuilder<'g> {
    gateway: &'g Gateway,
    caps: BuildCaps,
    journal: Journal,
}

impl<'g> GraphBuilder<'g> {
    pub fn new(gateway: &'g Gateway) -> GraphBuilder<'g> {
        GraphBuilder {
            gateway,
            caps: BuildCaps::default(),
            journal: Journal::default(),
        }
    }

    pub fn with_caps(mut self, caps: BuildCaps) -> GraphBuilder<'g> {
        self.caps = caps;
        self
    }

    /// Attaches a journal file; existing "ok" lines are honored on resume.
    pub fn with_journal(mut self, path: impl Into<PathBuf>) -> Result<GraphBuilder<'g>> {
        self.journal = Journal::load(path.into())?;
        Ok(self)
    }

    /// Curates raw metadata into a whitespace-normalized, capped profile.
    pub fn generate_profile(&self, metadata: &ItemMetadata) -> Result<ItemProfile> {
        let slots: BTreeMap<String, String> = [
            ("title".to_string(), metadata.title.clone()),
            ("description".to_string(), metadata.description.clone()),
            (
                "attributes".to_string(),
                format_attributes(&metadata.attributes),
            ),
            ("review".to_string(), metadata.review.clone()),
        ]
        .into();
        let request = self.gateway.render(PromptTag::Profile, &slots)?;
        let mut completion = self.gateway.chat(&request)?;
        if completion.trim().is_empty() {
            completion = self.gateway.chat(&request)?;
        }
        if completion.trim().is_empty() {
            return Err(Error::EmptyProfile {
                item_id: metadata.item_id.clone(),
            });
        }
        let text = truncate_chars(
            &collapse_whitespace(&completion),
            self.caps.profile_max_chars,
        );
        Ok(ItemProfile {
            item_id: metadata.item_id.clone(),
            text,
            source_hash: metadata_hash(metadata),
        })
    }

    /// Extracts graph records from a profile, repairing once on a fully
    /// unparseable response. The item entity is synthesized when omitted.
    pub fn extract_graph(&self, profile: &ItemProfile, title: &str) -> Result<ExtractionResult> {
        let slots: BTreeMap<String, String> = [
            ("title".to_string(), title.to_string()),
            ("profile".to_string(), profile.text.clone()),
        ]
        .into();
        let request = self.gateway.render(PromptTag::Extraction, &slots)?;
        let response = self.gateway.chat(&request)?;
        let mut parsed = parse_extraction(&response);
        if parsed.entities.is_empty() && parsed.relations.is_empty() {
            let mut repair = request.clone();
            repair.user_prompt.push_str(
                "\n\nYour previous reply could not be parsed (no ENTITY or RELATION records \
                 found). Reply again, following the record format exactly.",
            );
            let second = self.gateway.chat(&repair)?;
            parsed = parse_extraction(&second);
            if parsed.entities.is_empty() && parsed.relations.is_empty() {
                return Err(Error::ExtractionFailed {
                    item_id: profile.item_id.clone(),
                    detail: "no parseable records after repair".to_string(),
                });
            }
        }
        let (entities, relations, mut dropped) = parsed.into_parts();
        let mut entities = entities;
        let mut relations = relations;

        // Exactly one item-typed entity named after the item.
        let canon_title = canonical_name(title);
        let mut seen_title_entity = false;
        entities.retain(|e| {
            if e.entity_type == ITEM_TYPE && canonical_name(&e.name) == canon_title {
                if seen_title_entity {
                    dropped += 1;
                    return false;
                }
                seen_title_entity = true;
            }
            true
        });
        if !seen_title_entity {
            entities.insert(
                0,
                ExtractedEntity {
                    name: title.to_string(),
                    entity_type: ITEM_TYPE.to_string(),
                    description: truncate_chars(&profile.text, 200),
                },
            );
        }
        if entities.len() > self.caps.max_entities {
            dropped += (entities.len() - self.caps.max_entities) as u32;
            entities.truncate(self.caps.max_entities);
        }
        if relations.len() > self.caps.max_relations {
            dropped += (relations.len() - self.caps.max_relations) as u32;
            relations.truncate(self.caps.max_relations);
        }
        Ok(ExtractionResult {
            item_id: profile.item_id.clone(),
            entities,
            relations,
            raw_response: response,
            dropped_records: dropped,
        })
    }

    /// Profiles and extracts every catalog item (resume-safe, concurrent up
    /// to the gateway's in-flight bound) and merges the results into `kb`.
    pub fn build(
        &mut self,
        catalog: &BTreeMap<String, ItemMetadata>,
        kb: &mut KnowledgeBase,
    ) -> Result<BuildReport> {
        if catalog.is_empty() {
            return Err(Error::Config("catalog is empty".to_string()));
        }
        let meter_before = self.gateway.meter();
        let mut report = BuildReport {
            items_total: catalog.len(),
            ..BuildReport::default()
        };

        let pending: Vec<&ItemMetadata> = catalog
            .values()
            .filter(|meta| {
                let fresh = !self.journal.contains(&meta.item_id, &metadata_hash(meta));
                if !fresh {
                    report.items_skipped += 1;
                    report.items_ok += 1;
                }
                fresh
            })
            .collect();

        let chunk_size = self.gateway.max_inflight();
        for chunk in pending.chunks(chunk_size) {
            let worker: &GraphBuilder = &*self;
            let outcomes: Vec<(String, String, Result<ExtractionResult>)> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|meta| {
                            scope.spawn(move || {
                                let hash = metadata_hash(meta);
                                let extraction =
                                    worker.generate_profile(meta).and_then(|profile| {
                                        worker.extract_graph(&profile, &meta.title)
                                    });
                                (meta.item_id.clone(), hash, extraction)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                });

            // Store writes and journal appends stay in deterministic order.
            for (item_id, source_hash, outcome) in outcomes {
                match outcome {
                    Ok(extraction) => {
                        let merge = self.apply_extraction(&extraction, kb)?;
                        report.entities_inserted += merge.0.inserted;
                        report.entities_merged += merge.0.merged;
                        report.relations_inserted += merge.1.inserted;
                        report.relations_auto_created += merge.1.auto_created;
                        report.items_ok += 1;
                        self.journal.record(&item_id, &source_hash, true)?;
                    }
                    Err(err) => {
                        report.items_failed += 1;
                        report.failures.push((item_id.clone(), err.to_string()));
                        self.journal.record(&item_id, &source_hash, false)?;
                    }
                }
            }
        }

        let meter_after = self.gateway.meter();
        report.llm_calls = meter_after.chat_calls - meter_before.chat_calls;
        report.tokens = (meter_after.prompt_tokens + meter_after.completion_tokens)
            - (meter_before.prompt_tokens + meter_before.completion_tokens);
        report.failed =
            report.items_failed as f64 > self.caps.failure_ceiling * report.items_total as f64;
        Ok(report)
    }

    /// Inserts a single new item into an existing knowledge base. A repeat
    /// call with unchanged metadata is a no-op by source hash.
    pub fn add_item(
        &mut self,
        metadata: &ItemMetadata,
        kb: &mut KnowledgeBase,
    ) -> Result<AddReport> {
        let hash = metadata_hash(metadata);
        if self.journal.contains(&metadata.item_id, &hash) {
            return Ok(AddReport {
                skipped: true,
                merge: MergeReport::default(),
            });
        }
        let profile = self.generate_profile(metadata)?;
        let extraction = self.extract_graph(&profile, &metadata.title)?;
        let (entity_report, relation_report) = self.apply_extraction(&extraction, kb)?;
        self.journal.record(&metadata.item_id, &hash, true)?;
        let mut merge = entity_report;
        merge.absorb(&relation_report);
        Ok(AddReport {
            skipped: false,
            merge,
        })
    }

    fn apply_extraction(
        &self,
        extraction: &ExtractionResult,
        kb: &mut KnowledgeBase,
    ) -> Result<(MergeReport, MergeReport)> {
        let entities: Vec<EntityCandidate> = extraction
            .entities
            .iter()
            .map(|e| EntityCandidate {
                name: e.name.clone(),
                entity_type: e.entity_type.clone(),
                description: e.description.clone(),
                source_item_id: extraction.item_id.clone(),
                item_id: (e.entity_type == ITEM_TYPE).then(|| extraction.item_id.clone()),
            })
            .collect();
        let relations: Vec<RelationCandidate> = extraction
            .relations
            .iter()
            .map(|r| RelationCandidate {
                source_name: r.source_name.clone(),
                target_name: r.target_name.clone(),
                description: r.description.clone(),
                source_item_id: extraction.item_id.clone(),
            })
            .collect();
        let entity_report = kb.upsert_entities(&entities, self.gateway)?;
        let relation_report = kb.upsert_relations(&relations, self.gateway)?;
        Ok((entity_report, relation_report))
    }
}

struct ParsedRecords {
    entities: Vec<ExtractedEntity>,
    relations: Vec<ExtractedRelation>,
    dropped: u32,
}

impl ParsedRecords {
    fn into_parts(self) -> (Vec<ExtractedEntity>, Vec<ExtractedRelation>, u32) {
        (self.entities, self.relations, self.dropped)
    }
}

fn parse_extraction(response: &str) -> ParsedRecords {
    let mut parsed = ParsedRecords {
        entities: Vec::new(),
        relations: Vec::new(),
        dropped: 0,
    };
    for line in response.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == RECORD_TERMINATOR {
            break;
        }
        let fields: Vec<&str> = line.split(RECORD_DELIMITER).map(str::trim).collect();
        match fields.as_slice() {
            ["ENTITY", name, entity_type, description]
                if !name.is_empty() && !entity_type.is_empty() =>
            {
                parsed.entities.push(ExtractedEntity {
                    name: name.to_string(),
                    entity_type: entity_type.to_lowercase(),
                    description: description.to_string(),
                });
            }
            ["RELATION", source, target, description]
                if !source.is_empty() && !target.is_empty() =>
            {
                parsed.relations.push(ExtractedRelation {
                    source_name: source.to_string(),
                    target_name: target.to_string(),
                    description: description.to_string(),
                });
            }
            _ => parsed.dropped += 1,
        }
    }
    parsed
}
