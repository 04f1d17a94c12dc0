//! Wire the pipeline to a live OpenAI-compatible endpoint. Runs only when
//! COLDREC_LIVE_BASE_URL is set; the API key is read from the environment
//! variable named in the config (default OPENAI_API_KEY), never from files.
//!
//! ```bash
//! COLDREC_LIVE_BASE_URL=https://api.openai.com \
//!   cargo run -p coldrec --example live_openai
//! ```

use coldrec::corpus::{self, CorpusFormat};
use coldrec::{BackendConfig, BackendKind, Gateway, GraphBuilder, KnowledgeBase};

fn main() -> coldrec::Result<()> {
    let Ok(base_url) = std::env::var("COLDREC_LIVE_BASE_URL") else {
        println!("COLDREC_LIVE_BASE_URL not set; nothing to do.");
        println!("Set it to an OpenAI-compatible endpoint (and export your API key) to run live.");
        return Ok(());
    };
    let mut config = BackendConfig {
        kind: BackendKind::HttpOpenaiCompatible,
        base_url: Some(base_url),
        ..BackendConfig::default()
    };
    if let Ok(model) = std::env::var("COLDREC_LIVE_MODEL") {
        config.model_name = model;
    }
    if let Ok(embed_model) = std::env::var("COLDREC_LIVE_EMBED_MODEL") {
        config.embed_model_name = embed_model;
    }
    let gateway = Gateway::new(config)?;

    // Keep the live bill tiny: profile + extract + recommend for 3 items.
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let (_, catalog, _) = corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    let small: std::collections::BTreeMap<_, _> = catalog.into_iter().take(3).collect();

    let mut kb = KnowledgeBase::new(gateway.embed_model_id());
    let report = GraphBuilder::new(&gateway).build(&small, &mut kb)?;
    println!(
        "live build: {} items ok, {} entities, {} relations",
        report.items_ok,
        kb.entity_count(),
        kb.relation_count()
    );

    let first_id = kb
        .item_ids()
        .next()
        .expect("built at least one item")
        .clone();
    let query = coldrec::UserQuery::from_titles(vec![(
        first_id.clone(),
        kb.item_title(&first_id).unwrap().to_string(),
    )]);
    let index = coldrec::TitleIndex::from_kb(&kb);
    let outcome = coldrec::recommend::recommend(
        "live-demo",
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
    println!("live recommendation:\n{}", outcome.record.raw_response);
    let meter = gateway.meter();
    println!(
        "meter: {} chat calls, {} prompt tokens, {} completion tokens, {} retries",
        meter.chat_calls, meter.prompt_tokens, meter.completion_tokens, meter.retries
    );
    Ok(())
}
