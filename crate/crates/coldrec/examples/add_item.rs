//! Insert a brand-new item into an existing knowledge base and watch it
//! share entities with its neighbors, with no rebuild and no retraining.
//!
//! ```bash
//! cargo run -p coldrec --example add_item
//! ```

use coldrec::corpus::{self, CorpusFormat, ItemMetadata};
use coldrec::{BackendConfig, Gateway, GraphBuilder, KnowledgeBase};

fn main() -> coldrec::Result<()> {
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let (_, catalog, _) = corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    let gateway = Gateway::new(BackendConfig::synthetic())?;
    let mut kb = KnowledgeBase::new(gateway.embed_model_id());
    let mut builder = GraphBuilder::new(&gateway);
    builder.build(&catalog, &mut kb)?;
    let before = kb.stats();

    let new_item = ItemMetadata {
        item_id: "arc-11".to_string(),
        title: "Arcade Comet Storm".to_string(),
        description:
            "Arcade Comet Storm is a fast arcade game about weaving through meteor showers."
                .to_string(),
        attributes: vec![
            ("genre".to_string(), "arcade".to_string()),
            ("feature".to_string(), "boss rush".to_string()),
        ],
        review: String::new(),
    };
    let report = builder.add_item(&new_item, &mut kb)?;
    let after = kb.stats();

    println!(
        "inserted {} new entities, merged {} into existing nodes, {} new relations",
        report.merge.inserted, report.merge.merged, report.merge.inserted
    );
    println!(
        "genre nodes before/after: {} / {} (shared 'arcade' node was reused)",
        before.type_histogram.get("genre").unwrap_or(&0),
        after.type_histogram.get("genre").unwrap_or(&0)
    );

    // The same call again is a no-op: the journal remembers the metadata hash.
    let repeat = builder.add_item(&new_item, &mut kb)?;
    println!("repeat insertion skipped: {}", repeat.skipped);

    // And the new item is immediately retrievable.
    let index = coldrec::TitleIndex::from_kb(&kb);
    let query = coldrec::UserQuery::from_titles(vec![
        (
            "arc-01".to_string(),
            kb.item_title("arc-01").unwrap().to_string(),
        ),
        (
            "arc-02".to_string(),
            kb.item_title("arc-02").unwrap().to_string(),
        ),
    ]);
    let outcome = coldrec::recommend::recommend(
        "example",
        &query,
        Some(&kb),
        &index,
        &coldrec::RetrievalConfig::default(),
        &gateway,
        coldrec::RecMode::Full,
        5,
        17,
        false,
    )?;
    println!("top recommendations after insertion:");
    for entry in &outcome.record.recommendation.entries {
        println!("  {}. {}", entry.rank, entry.raw_title);
    }
    Ok(())
}
