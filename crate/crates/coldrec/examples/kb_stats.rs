//! Entity-type histogram and edge-type matrix of a freshly built graph.
//!
//! ```bash
//! cargo run -p coldrec --example kb_stats
//! ```

use coldrec::corpus::{self, CorpusFormat};
use coldrec::store::KgStats;
use coldrec::{BackendConfig, Gateway, GraphBuilder, KnowledgeBase};

fn main() -> coldrec::Result<()> {
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let (_, catalog, _) = corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    let gateway = Gateway::new(BackendConfig::synthetic())?;
    let mut kb = KnowledgeBase::new(gateway.embed_model_id());
    GraphBuilder::new(&gateway).build(&catalog, &mut kb)?;

    let stats: KgStats = kb.stats();
    println!("entity types ({} nodes):", stats.entity_total());
    for (entity_type, count) in &stats.type_histogram {
        println!(
            "  {:<12} {:>5}  ({:>4.1}%)",
            entity_type,
            count,
            *count as f64 * 100.0 / stats.entity_total() as f64
        );
    }
    println!("\nedge matrix ({} edges):", stats.relation_total());
    for (pair, count) in &stats.edge_type_matrix {
        println!("  {:<26} {:>5}", pair.replace("->", " -> "), count);
    }
    Ok(())
}
