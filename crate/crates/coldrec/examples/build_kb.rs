//! Build a knowledge base from the bundled corpus with the deterministic
//! offline backend, persist it, and reload it.
//!
//! ```bash
//! cargo run -p coldrec --example build_kb
//! ```

use coldrec::corpus::{self, CorpusFormat};
use coldrec::{BackendConfig, Gateway, GraphBuilder, KnowledgeBase};

fn main() -> coldrec::Result<()> {
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let kb_dir =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/kb");

    let (_, catalog, _) = corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    let gateway = Gateway::new(BackendConfig::synthetic())?;

    let mut kb = KnowledgeBase::new(gateway.embed_model_id());
    let report = GraphBuilder::new(&gateway).build(&catalog, &mut kb)?;
    println!(
        "built {} items: +{} entities (merged {}), +{} relations, {} llm calls",
        report.items_ok,
        report.entities_inserted,
        report.entities_merged,
        report.relations_inserted,
        report.llm_calls
    );

    kb.save(&kb_dir)?;
    let reloaded = KnowledgeBase::load(&kb_dir)?;
    reloaded.ensure_embedder(&gateway.embed_model_id())?;
    println!(
        "persisted and reloaded: {} entities / {} relations at {}",
        reloaded.entity_count(),
        reloaded.relation_count(),
        kb_dir.display()
    );

    let meter = gateway.meter();
    println!(
        "meter: {} chat calls, {} prompt + {} completion tokens",
        meter.chat_calls, meter.prompt_tokens, meter.completion_tokens
    );
    Ok(())
}
