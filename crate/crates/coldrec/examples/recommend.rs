//! Full retrieval-augmented recommendation for one user: anchor the history
//! in the graph, expand the frontier under edge scoring, rank the pool, and
//! generate a parsed, catalog-matched top-k list with evidence.
//!
//! ```bash
//! cargo run -p coldrec --example recommend
//! ```

use coldrec::corpus::{self, CorpusFormat};
use coldrec::retrieval::{self, UserQuery};
use coldrec::{BackendConfig, Gateway, GraphBuilder, KnowledgeBase, RetrievalConfig, TitleIndex};

fn main() -> coldrec::Result<()> {
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let (_, catalog, _) = corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    let gateway = Gateway::new(BackendConfig::synthetic())?;
    let mut kb = KnowledgeBase::new(gateway.embed_model_id());
    GraphBuilder::new(&gateway).build(&catalog, &mut kb)?;

    let history = ["arc-01", "arc-02", "arc-07"];
    let query = UserQuery::from_titles(
        history
            .iter()
            .map(|id| (id.to_string(), kb.item_title(id).unwrap().to_string()))
            .collect(),
    );
    println!("history:");
    for (_, title) in &query.history {
        println!("  - {title}");
    }

    // The raw retrieval stages, for a look inside the trace.
    let config = RetrievalConfig::default();
    let (trace, candidates) = retrieval::retrieve(&kb, &query, &config, &gateway)?;
    println!("\nanchors:");
    for (title, key, similarity) in trace.anchors.iter().take(3) {
        println!("  {title} -> {key} (cosine {similarity:.3})");
    }
    println!(
        "frontier sizes per hop: {:?}",
        trace.frontiers.iter().map(Vec::len).collect::<Vec<_>>()
    );
    println!(
        "scored {} edges, pooled {} items",
        trace.scored_edges.len(),
        trace.pool.len()
    );
    println!(
        "final candidates: {:?}",
        candidates
            .items
            .iter()
            .map(|(id, _)| id)
            .collect::<Vec<_>>()
    );

    // And the one-call pipeline with parsing and hallucination accounting.
    let index = TitleIndex::from_kb(&kb);
    let outcome = coldrec::recommend::recommend(
        "example-user",
        &query,
        Some(&kb),
        &index,
        &config,
        &gateway,
        coldrec::RecMode::Full,
        10,
        17,
        true,
    )?;
    println!("\nranked recommendation:");
    for entry in &outcome.record.recommendation.entries {
        println!(
            "  {}. {} [{} -> {:?}]",
            entry.rank,
            entry.raw_title,
            match entry.match_kind {
                coldrec::recommend::MatchKind::Exact => "exact",
                coldrec::recommend::MatchKind::Normalized => "normalized",
                coldrec::recommend::MatchKind::Fuzzy => "fuzzy",
                coldrec::recommend::MatchKind::OutOfDomain => "out of domain",
            },
            entry.matched_item_id
        );
    }
    println!("out-of-domain entries: {}", outcome.record.ood_count);
    Ok(())
}
