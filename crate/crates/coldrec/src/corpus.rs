//! Corpus loading, core filtering, cold-item designation and the
//! leave-one-out evaluation split.
//!
//! Input is JSON Lines, one record per line, in either the native field
//! names (`generic_jsonl`) or the Amazon review schema (`amazon_jsonl`,
//! reviewerID/asin/unixReviewTime). A corpus directory holds an
//! interactions file and an optional item-metadata file; interactions
//! referencing an item with no metadata record get a stub entry (title =
//! item id) and are counted in the load report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max review snippets folded into one item's metadata, longest first.
const MAX_REVIEW_SNIPPETS: usize = 5;
/// Total character cap on the folded review text.
const MAX_REVIEW_CHARS: usize = 2_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub review_text: Option<String>,
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub item_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub attributes: Vec<(String, String)>,
    /// Concatenated review snippets, possibly empty.
    #[serde(default)]
    pub review: String,
}

impl ItemMetadata {
    pub fn stub(item_id: &str) -> ItemMetadata {
        ItemMetadata {
            item_id: item_id.to_string(),
            title: item_id.to_string(),
            description: String::new(),
            attributes: Vec::new(),
            review: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ColdTest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    /// Time-ordered item ids, length >= 2.
    pub items: Vec<String>,
    pub split: Split,
}

impl UserSequence {
    pub fn history(&self) -> &[String] {
        &self.items[..self.items.len() - 1]
    }

    pub fn target(&self) -> &str {
        self.items.last().expect("length >= 2")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub sequences: Vec<UserSequence>,
    pub cold_items: BTreeSet<String>,
    pub catalog: BTreeMap<String, ItemMetadata>,
    pub filter_threshold: u32,
}

impl CorpusSplit {
    pub fn cold_test_sequences(&self) -> impl Iterator<Item = &UserSequence> {
        self.sequences.iter().filter(|s| s.split == Split::ColdTest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    AmazonJsonl,
    GenericJsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<CorpusFormat> {
        match s {
            "amazon_jsonl" | "amazon" => Ok(CorpusFormat::AmazonJsonl),
            "generic_jsonl" | "generic" => Ok(CorpusFormat::GenericJsonl),
            other => Err(Error::Config(format!("unknown corpus format: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub interactions: usize,
    pub items: usize,
    /// Malformed interaction lines skipped.
    pub skipped: usize,
    /// Malformed metadata lines skipped.
    pub skipped_meta: usize,
    /// Items seen in interactions but absent from the metadata file.
    pub stub_items: usize,
}

fn interactions_file(dir: &Path, format: CorpusFormat) -> std::path::PathBuf {
    match format {
        CorpusFormat::GenericJsonl => dir.join("interactions.jsonl"),
        CorpusFormat::AmazonJsonl => dir.join("reviews.jsonl"),
    }
}

fn metadata_file(dir: &Path, format: CorpusFormat) -> std::path::PathBuf {
    match format {
        CorpusFormat::GenericJsonl => dir.join("items.jsonl"),
        CorpusFormat::AmazonJsonl => dir.join("meta.jsonl"),
    }
}

fn parse_interaction(value: &serde_json::Value, format: CorpusFormat) -> Option<RawInteraction> {
    let (user_field, item_field, time_field, review_field, rating_field) = match format {
        CorpusFormat::GenericJsonl => ("user_id", "item_id", "timestamp", "review_text", "rating"),
        CorpusFormat::AmazonJsonl => (
            "reviewerID",
            "asin",
            "unixReviewTime",
            "reviewText",
            "overall",
        ),
    };
    let user_id = value.get(user_field)?.as_str()?.trim().to_string();
    let item_id = value.get(item_field)?.as_str()?.trim().to_string();
    let timestamp = value.get(time_field)?.as_i64()?;
    if user_id.is_empty() || item_id.is_empty() || timestamp < 0 {
        return None;
    }
    Some(RawInteraction {
        user_id,
        item_id,
        timestamp,
        review_text: value
            .get(review_field)
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .filter(|s| !s.trim().is_empty()),
        rating: value.get(rating_field).and_then(|v| v.as_f64()),
    })
}

fn string_or_join(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.trim().to_string(),
        serde_json::Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.as_str())
            .collect::<Vec<_>>()
            .join(" ")
            .trim()
            .to_string(),
        _ => String::new(),
    }
}

fn parse_metadata(value: &serde_json::Value, format: CorpusFormat) -> Option<ItemMetadata> {
    match format {
        CorpusFormat::GenericJsonl => {
            let item_id = value.get("item_id")?.as_str()?.trim().to_string();
            let title = value.get("title")?.as_str()?.trim().to_string();
            if item_id.is_empty() || title.is_empty() {
                return None;
            }
            let attributes = match value.get("attributes") {
                Some(serde_json::Value::Array(pairs)) => pairs
                    .iter()
                    .filter_map(|pair| {
                        let arr = pair.as_array()?;
                        Some((
                            arr.first()?.as_str()?.to_string(),
                            arr.get(1)?.as_str()?.to_string(),
                        ))
                    })
                    .collect(),
                Some(serde_json::Value::Object(map)) => map
                    .iter()
                    .filter_map(|(k, v)| v.as_str().map(|v| (k.clone(), v.to_string())))
                    .collect(),
                _ => Vec::new(),
            };
            Some(ItemMetadata {
                item_id,
                title,
                description: value
                    .get("description")
                    .map(string_or_join)
                    .unwrap_or_default(),
                attributes,
                review: value
                    .get("review")
                    .and_then(|v| v.as_str())
                    .unwrap_or("")
                    .to_string(),
            })
        }
        CorpusFormat::AmazonJsonl => {
            let item_id = value.get("asin")?.as_str()?.trim().to_string();
            let title = value.get("title")?.as_str()?.trim().to_string();
            if item_id.is_empty() || title.is_empty() {
                return None;
            }
            let mut attributes = Vec::new();
            for (field, key) in [("feature", "feature"), ("category", "category")] {
                if let Some(serde_json::Value::Array(values)) = value.get(field) {
                    for v in values.iter().filter_map(|v| v.as_str()) {
                        attributes.push((key.to_string(), v.to_string()));
                    }
                }
            }
            Some(ItemMetadata {
                item_id,
                title,
                description: value
                    .get("description")
                    .map(string_or_join)
                    .unwrap_or_default(),
                attributes,
                review: String::new(),
            })
        }
    }
}

/// Loads a corpus directory: interactions plus (optional) item metadata.
/// Items missing a metadata record get a stub with title = item id.
pub fn load_corpus(
    dir: &Path,
    format: CorpusFormat,
) -> Result<(
    Vec<RawInteraction>,
    BTreeMap<String, ItemMetadata>,
    LoadReport,
)> {
    let mut report = LoadReport::default();
    let interactions_path = interactions_file(dir, format);
    let file =
        std::fs::File::open(&interactions_path).map_err(|e| Error::io(&interactions_path, e))?;

    let mut interactions = Vec::new();
    let mut total_lines = 0usize;
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&interactions_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        let parsed = serde_json::from_str::<serde_json::Value>(&line)
            .ok()
            .as_ref()
            .and_then(|v| parse_interaction(v, format));
        match parsed {
            Some(interaction) => interactions.push(interaction),
            None => report.skipped += 1,
        }
    }
    if total_lines == 0 || interactions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if report.skipped * 10 > total_lines {
        return Err(Error::MalformedCorpus {
            path: interactions_path,
            skipped: report.skipped,
            total: total_lines,
        });
    }
    report.interactions = interactions.len();

    let mut catalog: BTreeMap<String, ItemMetadata> = BTreeMap::new();
    let metadata_path = metadata_file(dir, format);
    if metadata_path.exists() {
        let file = std::fs::File::open(&metadata_path).map_err(|e| Error::io(&metadata_path, e))?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&metadata_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .as_ref()
                .and_then(|v| parse_metadata(v, format));
            match parsed {
                // First record wins on duplicate item ids.
                Some(meta) => {
                    catalog.entry(meta.item_id.clone()).or_insert(meta);
                }
                None => report.skipped_meta += 1,
            }
        }
    }

    // Fold review snippets from interactions into items lacking review text.
    let mut snippets: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for interaction in &interactions {
        if let Some(text) = &interaction.review_text {
            snippets.entry(&interaction.item_id).or_default().push(text);
        }
    }
    for interaction in &interactions {
        if !catalog.contains_key(&interaction.item_id) {
            report.stub_items += 1;
            catalog.insert(
                interaction.item_id.clone(),
                ItemMetadata::stub(&interaction.item_id),
            );
        }
    }
    for (item_id, meta) in catalog.iter_mut() {
        if meta.review.is_empty() {
            if let Some(texts) = snippets.get(item_id.as_str()) {
                let mut texts: Vec<&str> = texts.clone();
                texts.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
                let mut folded = String::new();
                for text in texts.into_iter().take(MAX_REVIEW_SNIPPETS) {
                    if !folded.is_empty() {
                        folded.push_str(" | ");
                    }
                    folded.push_str(text.trim());
                    if folded.chars().count() >= MAX_REVIEW_CHARS {
                        folded = folded.chars().take(MAX_REVIEW_CHARS).collect();
                        break;
                    }
                }
                meta.review = folded;
            }
        }
    }
    report.items = catalog.len();
    Ok((interactions, catalog, report))
}

/// Iterative k-core pruning: keeps interactions until every surviving user
/// and every surviving item has at least `threshold` of them. Order
/// preserved; may return an empty vector.
pub fn core_filter(interactions: &[RawInteraction], threshold: u32) -> Vec<RawInteraction> {
    let mut alive: Vec<bool> = vec![true; interactions.len()];
    loop {
        let mut user_counts: BTreeMap<&str, u32> = BTreeMap::new();
        let mut item_counts: BTreeMap<&str, u32> = BTreeMap::new();
        for (i, interaction) in interactions.iter().enumerate() {
            if alive[i] {
                *user_counts.entry(&interaction.user_id).or_insert(0) += 1;
                *item_counts.entry(&interaction.item_id).or_insert(0) += 1;
            }
        }
        let mut changed = false;
        for (i, interaction) in interactions.iter().enumerate() {
            if alive[i]
                && (user_counts[interaction.user_id.as_str()] < threshold
                    || item_counts[interaction.item_id.as_str()] < threshold)
            {
                alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    interactions
        .iter()
        .zip(alive)
        .filter(|(_, keep)| *keep)
        .map(|(interaction, _)| interaction.clone())
        .collect()
}

/// The floor(fraction * |items|) items with the lowest interaction counts,
/// ties broken by ascending item id.
pub fn designate_cold_items(
    interactions: &[RawInteraction],
    fraction: f64,
) -> Result<BTreeSet<String>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadFraction(fraction));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for interaction in interactions {
        *counts.entry(&interaction.item_id).or_insert(0) += 1;
    }
    let take = (fraction * counts.len() as f64).floor() as usize;
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    Ok(ranked
        .into_iter()
        .take(take)
        .map(|(id, _)| id.to_string())
        .collect())
}

/// Builds per-user time-ordered sequences and samples up to `sample_size`
/// cold-ending ones as the test split, deterministically under `seed`.
pub fn build_split(
    interactions: &[RawInteraction],
    catalog: &BTreeMap<String, ItemMetadata>,
    cold_items: &BTreeSet<String>,
    sample_size: usize,
    seed: u64,
    filter_threshold: u32,
) -> Result<CorpusSplit> {
    let mut per_user: BTreeMap<&str, Vec<(i64, usize, &str)>> = BTreeMap::new();
    for (index, interaction) in interactions.iter().enumerate() {
        per_user.entry(&interaction.user_id).or_default().push((
            interaction.timestamp,
            index,
            &interaction.item_id,
        ));
    }

    let mut sequences: Vec<UserSequence> = Vec::new();
    for (user_id, mut events) in per_user {
        // Stable time order: source order breaks timestamp ties.
        events.sort_by_key(|(timestamp, index, _)| (*timestamp, *index));
        if events.len() < 2 {
            continue;
        }
        sequences.push(UserSequence {
            user_id: user_id.to_string(),
            items: events
                .into_iter()
                .map(|(_, _, item)| item.to_string())
                .collect(),
            split: Split::Train,
        });
    }

    let mut eligible: Vec<usize> = sequences
        .iter()
        .enumerate()
        .filter(|(_, s)| cold_items.contains(s.target()))
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoColdSequences);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    for index in eligible.into_iter().take(sample_size) {
        sequences[index].split = Split::ColdTest;
    }

    let cold_items: BTreeSet<String> = cold_items
        .iter()
        .filter(|id| catalog.contains_key(*id))
        .cloned()
        .collect();
    Ok(CorpusSplit {
        sequences,
        cold_items,
        catalog: catalog.clone(),
        filter_threshold,
    })
}

/// Summary manifest written next to ingest outputs as `split.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub threshold: u32,
    pub fraction: f64,
    pub sample_size: usize,
    pub interactions: usize,
    pub users: usize,
    pub items: usize,
    pub cold_items: usize,
    pub train_sequences: usize,
    pub cold_test_sequences: usize,
    pub cold_test_user_ids: Vec<String>,
}

impl SplitManifest {
    pub fn from_split(
        split: &CorpusSplit,
        interactions: usize,
        seed: u64,
        fraction: f64,
        sample_size: usize,
    ) -> SplitManifest {
        let cold_users: Vec<String> = split
            .cold_test_sequences()
            .map(|s| s.user_id.clone())
            .collect();
        SplitManifest {
            seed,
            threshold: split.filter_threshold,
            fraction,
            sample_size,
            interactions,
            users: split.sequences.len(),
            items: split.catalog.len(),
            cold_items: split.cold_items.len(),
            train_sequences: split.sequences.len() - cold_users.len(),
            cold_test_sequences: cold_users.len(),
            cold_test_user_ids: cold_users,
        }
    }
}

/// Writes a split to `dir`: split.json (manifest), catalog.jsonl
/// (normalized metadata) and sequences.jsonl.
pub fn save_split(dir: &Path, split: &CorpusSplit, manifest: &SplitManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("split.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;

    let catalog_path = dir.join("catalog.jsonl");
    let mut lines = String::new();
    for meta in split.catalog.values() {
        lines.push_str(&serde_json::to_string(meta)?);
        lines.push('\n');
    }
    std::fs::write(&catalog_path, lines).map_err(|e| Error::io(&catalog_path, e))?;

    let sequences_path = dir.join("sequences.jsonl");
    let mut lines = String::new();
    for sequence in &split.sequences {
        lines.push_str(&serde_json::to_string(sequence)?);
        lines.push('\n');
    }
    std::fs::write(&sequences_path, lines).map_err(|e| Error::io(&sequences_path, e))?;

    let cold_path = dir.join("cold_items.json");
    std::fs::write(&cold_path, serde_json::to_string_pretty(&split.cold_items)?)
        .map_err(|e| Error::io(&cold_path, e))?;
    Ok(())
}

/// Loads a split previously written by [`save_split`].
pub fn load_split(dir: &Path) -> Result<CorpusSplit> {
    let manifest_path = dir.join("split.json");
    let manifest: SplitManifest = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    )?;

    let catalog_path = dir.join("catalog.jsonl");
    let mut catalog = BTreeMap::new();
    let data = std::fs::read_to_string(&catalog_path).map_err(|e| Error::io(&catalog_path, e))?;
    for line in data.lines().filter(|l| !l.trim().is_empty()) {
        let meta: ItemMetadata = serde_json::from_str(line)?;
        catalog.insert(meta.item_id.clone(), meta);
    }

    let sequences_path = dir.join("sequences.jsonl");
    let mut sequences = Vec::new();
    let data =
        std::fs::read_to_string(&sequences_path).map_err(|e| Error::io(&sequences_path, e))?;
    for line in data.lines().filter(|l| !l.trim().is_empty()) {
        sequences.push(serde_json::from_str::<UserSequence>(line)?);
    }

    let cold_path = dir.join("cold_items.json");
    let cold_items: BTreeSet<String> = serde_json::from_str(
        &std::fs::read_to_string(&cold_path).map_err(|e| Error::io(&cold_path, e))?,
    )?;

    Ok(CorpusSplit {
        sequences,
        cold_items,
        catalog,
        filter_threshold: manifest.threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interaction(user: &str, item: &str, ts: i64) -> RawInteraction {
        RawInteraction {
            user_id: user.to_string(),
            item_id: item.to_string(),
            timestamp: ts,
            review_text: None,
            rating: None,
        }
    }

    fn write_lines(path: &Path, lines: &[&str]) {
        std::fs::write(path, lines.join("\n")).unwrap();
    }

    #[test]
    fn six_line_fixture_loads_six_interactions_three_items() {
        let dir = tempfile::tempdir().unwrap();
        write_lines(
            &dir.path().join("interactions.jsonl"),
            &[
                r#"{"user_id":"u1","item_id":"a","timestamp":1}"#,
                r#"{"user_id":"u1","item_id":"b","timestamp":2}"#,
                r#"{"user_id":"u2","item_id":"a","timestamp":3}"#,
                r#"{"user_id":"u2","item_id":"c","timestamp":4}"#,
                r#"{"user_id":"u3","item_id":"b","timestamp":5}"#,
                r#"{"user_id":"u3","item_id":"c","timestamp":6}"#,
            ],
        );
        write_lines(
            &dir.path().join("items.jsonl"),
            &[
                r#"{"item_id":"a","title":"Alpha"}"#,
                r#"{"item_id":"b","title":"Beta"}"#,
                r#"{"item_id":"c","title":"Gamma"}"#,
            ],
        );
        let (interactions, catalog, report) =
            load_corpus(dir.path(), CorpusFormat::GenericJsonl).unwrap();
        assert_eq!(interactions.len(), 6);
        assert_eq!(catalog.len(), 3);
        assert_eq!(report.interactions, 6);
        assert_eq!(report.stub_items, 0);
    }

    #[test]
    fn empty_file_is_an_empty_corpus_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("interactions.jsonl"), "").unwrap();
        let err = load_corpus(dir.path(), CorpusFormat::GenericJsonl).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn one_malformed_line_among_twenty_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines: Vec<String> = (0..19)
            .map(|i| {
                format!(
                    r#"{{"user_id":"u{}","item_id":"i{}","timestamp":{}}}"#,
                    i % 4,
                    i % 5,
                    i
                )
            })
            .collect();
        lines.insert(7, "{not json".to_string());
        std::fs::write(dir.path().join("interactions.jsonl"), lines.join("\n")).unwrap();
        let (interactions, _, report) =
            load_corpus(dir.path(), CorpusFormat::GenericJsonl).unwrap();
        assert_eq!(interactions.len(), 19);
        assert_eq!(report.skipped, 1);
    }

    #[test]
    fn mostly_malformed_corpus_fails() {
        let dir = tempfile::tempdir().unwrap();
        write_lines(
            &dir.path().join("interactions.jsonl"),
            &[
                r#"{"user_id":"u1","item_id":"a","timestamp":1}"#,
                "junk",
                "more junk",
            ],
        );
        let err = load_corpus(dir.path(), CorpusFormat::GenericJsonl).unwrap_err();
        assert!(matches!(
            err,
            Error::MalformedCorpus {
                skipped: 2,
                total: 3,
                ..
            }
        ));
    }

    #[test]
    fn missing_metadata_becomes_stub_with_title_item_id() {
        let dir = tempfile::tempdir().unwrap();
        write_lines(
            &dir.path().join("interactions.jsonl"),
            &[
                r#"{"user_id":"u1","item_id":"mystery","timestamp":1}"#,
                r#"{"user_id":"u2","item_id":"mystery","timestamp":2}"#,
            ],
        );
        let (_, catalog, report) = load_corpus(dir.path(), CorpusFormat::GenericJsonl).unwrap();
        assert_eq!(report.stub_items, 1);
        assert_eq!(catalog["mystery"].title, "mystery");
    }

    #[test]
    fn amazon_fields_map_to_native_names() {
        let dir = tempfile::tempdir().unwrap();
        write_lines(
            &dir.path().join("reviews.jsonl"),
            &[
                r#"{"reviewerID":"r1","asin":"B001","unixReviewTime":99,"reviewText":"great game","overall":5.0}"#,
                r#"{"reviewerID":"r2","asin":"B001","unixReviewTime":100}"#,
            ],
        );
        write_lines(
            &dir.path().join("meta.jsonl"),
            &[
                r#"{"asin":"B001","title":"Tomb Raider","description":["Classic."],"category":["Games"]}"#,
            ],
        );
        let (interactions, catalog, _) =
            load_corpus(dir.path(), CorpusFormat::AmazonJsonl).unwrap();
        assert_eq!(interactions[0].user_id, "r1");
        assert_eq!(interactions[0].item_id, "B001");
        let meta = &catalog["B001"];
        assert_eq!(meta.title, "Tomb Raider");
        assert_eq!(meta.description, "Classic.");
        assert_eq!(
            meta.attributes,
            vec![("category".to_string(), "Games".to_string())]
        );
        assert_eq!(meta.review, "great game");
    }

    #[test]
    fn threshold_one_is_a_no_op() {
        let input = vec![interaction("u1", "a", 1), interaction("u2", "b", 2)];
        let output = core_filter(&input, 1);
        assert_eq!(output.len(), 2);
    }

    #[test]
    fn chain_fixture_prunes_to_empty_at_threshold_two() {
        // u1:{a,b}, u2:{b}. Item a has one interaction, so it goes; then u1
        // is left with one, so u1 goes; then b has one, and nothing remains.
        let input = vec![
            interaction("u1", "a", 1),
            interaction("u1", "b", 2),
            interaction("u2", "b", 3),
        ];
        assert!(core_filter(&input, 2).is_empty());
    }

    #[test]
    fn dense_clique_exactly_at_threshold_survives() {
        let mut input = Vec::new();
        for user in ["u1", "u2", "u3"] {
            for (i, item) in ["a", "b", "c"].iter().enumerate() {
                input.push(interaction(user, item, i as i64));
            }
        }
        assert_eq!(core_filter(&input, 3).len(), 9);
    }

    #[test]
    fn rarest_item_is_designated() {
        let mut input = Vec::new();
        for (i, item) in ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]
            .iter()
            .enumerate()
        {
            for n in 0..=i {
                input.push(interaction(&format!("u{n}"), item, n as i64));
            }
        }
        let cold = designate_cold_items(&input, 0.1).unwrap();
        assert_eq!(cold.into_iter().collect::<Vec<_>>(), vec!["a".to_string()]);
    }

    #[test]
    fn count_ties_break_lexicographically() {
        let mut input = Vec::new();
        // "z" and "b" both appear once; everything else more often.
        input.push(interaction("u1", "z", 1));
        input.push(interaction("u2", "b", 2));
        for item in ["c", "d", "e", "f", "g", "h", "i", "j"] {
            input.push(interaction("u1", item, 3));
            input.push(interaction("u2", item, 4));
        }
        let cold = designate_cold_items(&input, 0.1).unwrap();
        assert_eq!(cold.into_iter().collect::<Vec<_>>(), vec!["b".to_string()]);
    }

    #[test]
    fn fraction_floor_arithmetic() {
        let input = vec![
            interaction("u1", "a", 1),
            interaction("u1", "b", 2),
            interaction("u2", "c", 3),
            interaction("u2", "d", 4),
        ];
        let cold = designate_cold_items(&input, 0.5).unwrap();
        assert_eq!(cold.len(), 2);
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let input = vec![interaction("u1", "a", 1)];
        assert!(designate_cold_items(&input, 0.0).is_err());
        assert!(designate_cold_items(&input, 1.0).is_err());
    }

    fn catalog_for(interactions: &[RawInteraction]) -> BTreeMap<String, ItemMetadata> {
        interactions
            .iter()
            .map(|i| (i.item_id.clone(), ItemMetadata::stub(&i.item_id)))
            .collect()
    }

    #[test]
    fn sample_size_larger_than_population_selects_all() {
        let input = vec![
            interaction("u1", "a", 1),
            interaction("u1", "cold1", 2),
            interaction("u2", "a", 1),
            interaction("u2", "cold2", 2),
            interaction("u3", "a", 1),
            interaction("u3", "cold3", 2),
        ];
        let cold: BTreeSet<String> = ["cold1", "cold2", "cold3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let split = build_split(&input, &catalog_for(&input), &cold, 500, 7, 1).unwrap();
        assert_eq!(split.cold_test_sequences().count(), 3);
    }

    #[test]
    fn same_seed_same_split() {
        let mut input = Vec::new();
        for u in 0..20 {
            input.push(interaction(&format!("u{u}"), "common", 1));
            input.push(interaction(&format!("u{u}"), &format!("cold{}", u % 5), 2));
        }
        let cold: BTreeSet<String> = (0..5).map(|i| format!("cold{i}")).collect();
        let catalog = catalog_for(&input);
        let a = build_split(&input, &catalog, &cold, 7, 42, 1).unwrap();
        let b = build_split(&input, &catalog, &cold, 7, 42, 1).unwrap();
        let ids = |s: &CorpusSplit| {
            s.cold_test_sequences()
                .map(|q| q.user_id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(a.cold_test_sequences().count(), 7);
    }

    #[test]
    fn no_cold_ending_sequences_is_an_error() {
        let input = vec![interaction("u1", "a", 1), interaction("u1", "b", 2)];
        let cold: BTreeSet<String> = ["zzz".to_string()].into_iter().collect();
        let err = build_split(&input, &catalog_for(&input), &cold, 10, 1, 1).unwrap_err();
        assert_eq!(err.to_string(), "no cold-ending sequences");
    }

    #[test]
    fn timestamps_order_sequences_with_stable_ties() {
        let input = vec![
            interaction("u1", "late", 10),
            interaction("u1", "early", 1),
            interaction("u1", "tie-first", 5),
            interaction("u1", "tie-second", 5),
        ];
        let cold: BTreeSet<String> = ["late".to_string()].into_iter().collect();
        let split = build_split(&input, &catalog_for(&input), &cold, 10, 1, 1).unwrap();
        assert_eq!(
            split.sequences[0].items,
            vec!["early", "tie-first", "tie-second", "late"]
        );
    }

    proptest! {
        #[test]
        fn core_filter_is_idempotent_and_shrinking(
            pairs in proptest::collection::vec((0u8..6, 0u8..6), 0..40),
            threshold in 1u32..4,
        ) {
            let input: Vec<RawInteraction> = pairs
                .iter()
                .enumerate()
                .map(|(i, (u, it))| interaction(&format!("u{u}"), &format!("i{it}"), i as i64))
                .collect();
            let once = core_filter(&input, threshold);
            let twice = core_filter(&once, threshold);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.len() <= input.len());
            // Raising the threshold never enlarges the output.
            let stricter = core_filter(&input, threshold + 1);
            prop_assert!(stricter.len() <= once.len());
        }

        #[test]
        fn designation_is_permutation_invariant(
            pairs in proptest::collection::vec((0u8..6, 0u8..8), 1..40),
            rotate in 0usize..40,
        ) {
            let input: Vec<RawInteraction> = pairs
                .iter()
                .enumerate()
                .map(|(i, (u, it))| interaction(&format!("u{u}"), &format!("i{it}"), i as i64))
                .collect();
            let mut rotated = input.clone();
            rotated.rotate_left(rotate % input.len().max(1));
            let a = designate_cold_items(&input, 0.4).unwrap();
            let b = designate_cold_items(&rotated, 0.4).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    // PartialEq for RawInteraction is test-only sugar.
    impl PartialEq for RawInteraction {
        fn eq(&self, other: &Self) -> bool {
            self.user_id == other.user_id
                && self.item_id == other.item_id
                && self.timestamp == other.timestamp
        }
    }
}
