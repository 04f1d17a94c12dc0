//! Knowledge-base directory format.
//!
//! ```text
//! <kb>/
//!   manifest.json     counts, model id, dimension, per-file checksums
//!   entities.jsonl    one entity per line, ascending key, no vectors
//!   relations.jsonl   one relation per line, grouped by source key
//!   embeddings.bin    little-endian f32, row-major
//!   embeddings.idx    one JSON line per row mapping it to its owner
//! ```
//!
//! Saves are staged into a sibling directory and swapped in with renames, so
//! an interrupted save never corrupts the previous state. Loads verify the
//! schema version, per-file checksums, counts and referential integrity.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::EmbeddingVector;
use crate::store::{Entity, KnowledgeBase, Manifest, Relation};

pub const STORE_SCHEMA_VERSION: u32 = 1;

const DATA_FILES: [&str; 4] = [
    "entities.jsonl",
    "relations.jsonl",
    "embeddings.bin",
    "embeddings.idx",
];

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: Manifest,
    checksums: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RowOwner {
    Entity {
        row: usize,
        key: String,
    },
    Relation {
        row: usize,
        source_key: String,
        ordinal: usize,
    },
}

/// Save options. The fault fields are test seams for interrupted-save
/// simulation and have no effect in normal use.
#[derive(Debug, Default, Clone)]
pub struct SaveOpts {
    /// Abort (with an error) after this many staged files were written.
    #[doc(hidden)]
    pub fail_after_files: Option<usize>,
}

impl KnowledgeBase {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_opts(path, &SaveOpts::default())
    }

    pub fn save_opts(&self, path: &Path, opts: &SaveOpts) -> Result<()> {
        let staging = sibling(path, ".staging");
        let backup = sibling(path, ".old");
        // Leftovers from a crashed earlier save are dead weight; clear them.
        let _ = std::fs::remove_dir_all(&staging);
        let _ = std::fs::remove_dir_all(&backup);
        std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

        let result = self.write_into(&staging, opts);
        if let Err(err) = result {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(err);
        }

        if path.exists() {
            std::fs::rename(path, &backup).map_err(|e| Error::io(path, e))?;
        }
        std::fs::rename(&staging, path).map_err(|e| Error::io(path, e))?;
        let _ = std::fs::remove_dir_all(&backup);
        Ok(())
    }

    fn write_into(&self, dir: &Path, opts: &SaveOpts) -> Result<()> {
        let mut written = 0usize;
        let fail_point = |written: usize| -> Result<()> {
            if opts.fail_after_files.is_some_and(|n| written >= n) {
                return Err(Error::Backend {
                    message: "injected save fault".to_string(),
                    retryable: false,
                });
            }
            Ok(())
        };

        // entities.jsonl: ascending key order, vectors live in the bin file.
        let mut rows: Vec<(String, EmbeddingVector)> = Vec::new();
        {
            let path = dir.join("entities.jsonl");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            for entity in self.entities.values() {
                writeln!(out, "{}", serde_json::to_string(entity)?)
                    .map_err(|e| Error::io(&path, e))?;
                if let Some(vector) = &entity.embedding {
                    rows.push((
                        serde_json::to_string(&RowOwner::Entity {
                            row: rows.len(),
                            key: entity.entity_key.clone(),
                        })?,
                        vector.clone(),
                    ));
                }
            }
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        written += 1;
        fail_point(written)?;

        // relations.jsonl: grouped by source key, insertion order within.
        {
            let path = dir.join("relations.jsonl");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            for (source_key, edges) in &self.out_edges {
                for (ordinal, relation) in edges.iter().enumerate() {
                    writeln!(out, "{}", serde_json::to_string(relation)?)
                        .map_err(|e| Error::io(&path, e))?;
                    if let Some(vector) = &relation.embedding {
                        rows.push((
                            serde_json::to_string(&RowOwner::Relation {
                                row: rows.len(),
                                source_key: source_key.clone(),
                                ordinal,
                            })?,
                            vector.clone(),
                        ));
                    }
                }
            }
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        written += 1;
        fail_point(written)?;

        // embeddings.bin + embeddings.idx.
        {
            let bin_path = dir.join("embeddings.bin");
            let idx_path = dir.join("embeddings.idx");
            let bin = std::fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
            let idx = std::fs::File::create(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
            let mut bin = BufWriter::new(bin);
            let mut idx = BufWriter::new(idx);
            for (owner_line, vector) in &rows {
                for value in &vector.values {
                    bin.write_all(&value.to_le_bytes())
                        .map_err(|e| Error::io(&bin_path, e))?;
                }
                writeln!(idx, "{owner_line}").map_err(|e| Error::io(&idx_path, e))?;
            }
            bin.flush().map_err(|e| Error::io(&bin_path, e))?;
            idx.flush().map_err(|e| Error::io(&idx_path, e))?;
        }
        written += 2;
        fail_point(written)?;

        // manifest.json carries checksums of everything above.
        let mut checksums = BTreeMap::new();
        for name in DATA_FILES {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            checksums.insert(name.to_string(), crate::text::sha256_hex(&bytes));
        }
        let manifest_file = ManifestFile {
            manifest: self.manifest.clone(),
            checksums,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest_file)?)
            .map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<KnowledgeBase> {
        let manifest_path = path.join("manifest.json");
        let manifest_raw =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest_file: ManifestFile = serde_json::from_str(&manifest_raw)?;
        if manifest_file.manifest.schema_version != STORE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: manifest_file.manifest.schema_version,
                supported: STORE_SCHEMA_VERSION,
            });
        }
        for name in DATA_FILES {
            let file_path = path.join(name);
            let bytes = std::fs::read(&file_path).map_err(|e| Error::io(&file_path, e))?;
            let expected =
                manifest_file
                    .checksums
                    .get(name)
                    .ok_or_else(|| Error::CorruptStore {
                        path: path.to_path_buf(),
                        detail: format!("manifest lacks checksum for {name}"),
                    })?;
            if &crate::text::sha256_hex(&bytes) != expected {
                return Err(Error::ChecksumMismatch {
                    file: name.to_string(),
                });
            }
        }

        let mut kb = KnowledgeBase {
            entities: BTreeMap::new(),
            out_edges: BTreeMap::new(),
            item_index: BTreeMap::new(),
            manifest: manifest_file.manifest,
        };

        let entities_path = path.join("entities.jsonl");
        let file = std::fs::File::open(&entities_path).map_err(|e| Error::io(&entities_path, e))?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&entities_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entity: Entity = serde_json::from_str(&line)?;
            if entity.is_item {
                if let Some(item_id) = &entity.item_id {
                    kb.item_index
                        .insert(item_id.clone(), entity.entity_key.clone());
                }
            }
            kb.entities.insert(entity.entity_key.clone(), entity);
        }

        let relations_path = path.join("relations.jsonl");
        let file =
            std::fs::File::open(&relations_path).map_err(|e| Error::io(&relations_path, e))?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&relations_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let relation: Relation = serde_json::from_str(&line)?;
            for endpoint in [&relation.source_key, &relation.target_key] {
                if !kb.entities.contains_key(endpoint) {
                    return Err(Error::CorruptStore {
                        path: path.to_path_buf(),
                        detail: format!("relation endpoint {endpoint} missing"),
                    });
                }
            }
            kb.out_edges
                .entry(relation.source_key.clone())
                .or_default()
                .push(relation);
        }

        // Re-attach vectors through the row index.
        let dimension = kb.manifest.dimension;
        let bin_path = path.join("embeddings.bin");
        let bin = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let idx_path = path.join("embeddings.idx");
        let idx = std::fs::read_to_string(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
        let row_bytes = dimension * 4;
        let model_id = kb.manifest.embed_model_id.clone();
        for line in idx.lines().filter(|l| !l.trim().is_empty()) {
            let owner: RowOwner = serde_json::from_str(line)?;
            let row = match &owner {
                RowOwner::Entity { row, .. } | RowOwner::Relation { row, .. } => *row,
            };
            let start = row * row_bytes;
            let end = start + row_bytes;
            if dimension == 0 || end > bin.len() {
                return Err(Error::CorruptStore {
                    path: path.to_path_buf(),
                    detail: format!("embedding row {row} out of range"),
                });
            }
            let values: Vec<f32> = bin[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let vector = EmbeddingVector {
                values,
                model_id: model_id.clone(),
            };
            match owner {
                RowOwner::Entity { key, .. } => {
                    let entity = kb
                        .entities
                        .get_mut(&key)
                        .ok_or_else(|| Error::CorruptStore {
                            path: path.to_path_buf(),
                            detail: format!("indexed entity {key} missing"),
                        })?;
                    entity.embedding = Some(vector);
                }
                RowOwner::Relation {
                    source_key,
                    ordinal,
                    ..
                } => {
                    let edges =
                        kb.out_edges
                            .get_mut(&source_key)
                            .ok_or_else(|| Error::CorruptStore {
                                path: path.to_path_buf(),
                                detail: format!("indexed relation source {source_key} missing"),
                            })?;
                    let relation = edges.get_mut(ordinal).ok_or_else(|| Error::CorruptStore {
                        path: path.to_path_buf(),
                        detail: format!("relation ordinal {ordinal} out of range"),
                    })?;
                    relation.embedding = Some(vector);
                }
            }
        }

        if kb.entity_count() != kb.manifest.entity_count
            || kb.relation_count() != kb.manifest.relation_count
        {
            return Err(Error::CorruptStore {
                path: path.to_path_buf(),
                detail: format!(
                    "manifest counts ({} entities, {} relations) disagree with stored collections ({}, {})",
                    kb.manifest.entity_count,
                    kb.manifest.relation_count,
                    kb.entity_count(),
                    kb.relation_count()
                ),
            });
        }
        Ok(kb)
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    name.push(format!("-{}", std::process::id()));
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendConfig, Gateway};
    use crate::store::{EntityCandidate, RelationCandidate};

    fn small_kb(gw: &Gateway) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(gw.embed_model_id());
        let mut entities = Vec::new();
        for i in 0..10 {
            entities.push(EntityCandidate {
                name: format!("entity {i}"),
                entity_type: if i % 2 == 0 { "item" } else { "feature" }.to_string(),
                description: format!("description of entity {i}"),
                source_item_id: format!("item-{i}"),
                item_id: (i % 2 == 0).then(|| format!("item-{i}")),
            });
        }
        kb.upsert_entities(&entities, gw).unwrap();
        let relations: Vec<RelationCandidate> = (0..5)
            .map(|i| RelationCandidate {
                source_name: format!("entity {}", i * 2),
                target_name: format!("entity {}", i * 2 + 1),
                description: format!("links {} to {}", i * 2, i * 2 + 1),
                source_item_id: format!("item-{}", i * 2),
            })
            .collect();
        kb.upsert_relations(&relations, gw).unwrap();
        kb
    }

    #[test]
    fn round_trip_preserves_everything() {
        let gw = Gateway::new(BackendConfig::synthetic()).unwrap();
        let kb = small_kb(&gw);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb");
        kb.save(&path).unwrap();

        let loaded = KnowledgeBase::load(&path).unwrap();
        assert_eq!(loaded.stats(), kb.stats());
        assert_eq!(loaded.entity_count(), kb.entity_count());
        assert_eq!(loaded.relation_count(), kb.relation_count());
        // Edge multiset, including descriptions and provenance.
        let triples = |kb: &KnowledgeBase| {
            let mut v: Vec<_> = kb
                .relations()
                .map(|r| (r.triple(), r.source_item_id.clone()))
                .collect();
            v.sort();
            v
        };
        assert_eq!(triples(&loaded), triples(&kb));
        // Vectors survive bit-exactly.
        for entity in kb.entities() {
            let other = loaded.entity(&entity.entity_key).unwrap();
            assert_eq!(other.embedding, entity.embedding);
        }
    }

    #[test]
    fn embedder_mismatch_is_detected() {
        let gw = Gateway::new(BackendConfig::synthetic()).unwrap();
        let kb = small_kb(&gw);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb");
        kb.save(&path).unwrap();
        let loaded = KnowledgeBase::load(&path).unwrap();
        assert!(loaded.ensure_embedder(&gw.embed_model_id()).is_ok());
        let err = loaded
            .ensure_embedder("text-embedding-3-small")
            .unwrap_err();
        assert!(err.to_string().contains("embedder mismatch"));
    }

    #[test]
    fn interrupted_save_leaves_previous_kb_intact() {
        let gw = Gateway::new(BackendConfig::synthetic()).unwrap();
        let kb = small_kb(&gw);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb");
        kb.save(&path).unwrap();

        let mut bigger = small_kb(&gw);
        bigger
            .upsert_entities(
                &[EntityCandidate {
                    name: "late arrival".to_string(),
                    entity_type: "genre".to_string(),
                    description: "added after the first save".to_string(),
                    source_item_id: "item-x".to_string(),
                    item_id: None,
                }],
                &gw,
            )
            .unwrap();
        for fail_after in 1..=4 {
            let err = bigger.save_opts(
                &path,
                &SaveOpts {
                    fail_after_files: Some(fail_after),
                },
            );
            assert!(err.is_err());
            let reloaded = KnowledgeBase::load(&path).unwrap();
            assert_eq!(
                reloaded.stats(),
                kb.stats(),
                "fail point {fail_after} corrupted the store"
            );
        }
        // And a clean save still succeeds afterwards.
        bigger.save(&path).unwrap();
        assert_eq!(KnowledgeBase::load(&path).unwrap().stats(), bigger.stats());
    }

    #[test]
    fn checksum_tampering_is_detected() {
        let gw = Gateway::new(BackendConfig::synthetic()).unwrap();
        let kb = small_kb(&gw);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb");
        kb.save(&path).unwrap();
        let victim = path.join("entities.jsonl");
        let mut data = std::fs::read_to_string(&victim).unwrap();
        data.push('\n');
        std::fs::write(&victim, data).unwrap();
        let err = KnowledgeBase::load(&path).unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch { .. }));
    }

    #[test]
    fn unsupported_schema_version_is_rejected() {
        let gw = Gateway::new(BackendConfig::synthetic()).unwrap();
        let kb = small_kb(&gw);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb");
        kb.save(&path).unwrap();
        let manifest_path = path.join("manifest.json");
        let data = std::fs::read_to_string(&manifest_path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        std::fs::write(&manifest_path, data).unwrap();
        let err = KnowledgeBase::load(&path).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { found: 99, .. }));
    }
}
