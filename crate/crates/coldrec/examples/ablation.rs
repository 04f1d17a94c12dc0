//! Compare the three pipeline variants on one split: full retrieval,
//! embedding-similarity retrieval (wo_R), and plain generation (wo_GR).
//!
//! ```bash
//! cargo run -p coldrec --example ablation
//! ```

use coldrec::corpus::{self, CorpusFormat};
use coldrec::eval::{self, EvalConfig};
use coldrec::{BackendConfig, Gateway, GraphBuilder, KnowledgeBase, RetrievalConfig};

fn main() -> coldrec::Result<()> {
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let (interactions, catalog, _) = corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    let filtered = corpus::core_filter(&interactions, 2);
    let cold = corpus::designate_cold_items(&filtered, 0.1)?;
    let split = corpus::build_split(&filtered, &catalog, &cold, 500, 17, 2)?;

    let gateway = Gateway::new(BackendConfig::synthetic())?;
    let mut kb = KnowledgeBase::new(gateway.embed_model_id());
    GraphBuilder::new(&gateway).build(&split.catalog, &mut kb)?;

    // A small final candidate set makes the retrieval quality visible: the
    // graph walk has to find the right neighborhood, not list the catalog.
    let retrieval = RetrievalConfig {
        theta_top: 5,
        ..RetrievalConfig::default()
    };
    let config = EvalConfig {
        runs: 1,
        ..EvalConfig::default()
    };
    let table = eval::ablation(&split, &kb, &retrieval, &config, &gateway)?;

    println!(
        "{:<8} {:>10} {:>10} {:>14}",
        "mode", "Recall@10", "NDCG@10", "hallucination"
    );
    for (mode, aggregate) in &table {
        println!(
            "{:<8} {:>9.2}% {:>9.2}% {:>13.2}%",
            mode.as_str(),
            aggregate.recall_at_k * 100.0,
            aggregate.ndcg_at_k * 100.0,
            aggregate.hallucination_rate * 100.0
        );
    }
    Ok(())
}
