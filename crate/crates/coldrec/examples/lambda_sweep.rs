//! Sweep the edge-retention threshold λ and watch the candidate pool shrink
//! as the filter tightens.
//!
//! ```bash
//! cargo run -p coldrec --example lambda_sweep
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

    let config = EvalConfig {
        runs: 1,
        ..EvalConfig::default()
    };
    let table = eval::lambda_sweep(
        &split,
        &kb,
        &RetrievalConfig::default(),
        &config,
        &[0.0, 3.0, 5.0, 7.0, 9.0, 10.0],
        &gateway,
    )?;
    print!("{}", table.to_csv());
    if let Some(best) = table.best() {
        println!("best threshold: {}", best.threshold);
    }
    Ok(())
}
