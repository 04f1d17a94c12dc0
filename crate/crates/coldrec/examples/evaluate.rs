//! Leave-one-out cold-start evaluation over the bundled corpus: Recall@10,
//! NDCG@10 and hallucination rate, averaged over five deterministic runs.
//!
//! ```bash
//! cargo run -p coldrec --example evaluate
//! ```

use coldrec::corpus::{self, CorpusFormat};
use coldrec::eval::{self, EvalConfig};
use coldrec::{BackendConfig, Gateway, GraphBuilder, KnowledgeBase, RetrievalConfig};

fn main() -> coldrec::Result<()> {
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let out =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/eval");

    let (interactions, catalog, _) = corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    let filtered = corpus::core_filter(&interactions, 2);
    let cold = corpus::designate_cold_items(&filtered, 0.1)?;
    let split = corpus::build_split(&filtered, &catalog, &cold, 500, 17, 2)?;

    let gateway = Gateway::new(BackendConfig::synthetic())?;
    let mut kb = KnowledgeBase::new(gateway.embed_model_id());
    GraphBuilder::new(&gateway).build(&split.catalog, &mut kb)?;

    let outcome = eval::run_eval(
        &split,
        Some(&kb),
        &RetrievalConfig::default(),
        &EvalConfig::default(),
        &gateway,
    )?;
    println!("{}", eval::format_report(&outcome.result.aggregate));

    println!("\nper-user (run 0):");
    for row in outcome.result.per_user.iter().filter(|r| r.run == 0) {
        println!(
            "  {:8} target {:8} hit_rank {:?} ndcg {:.3}",
            row.user_id, row.target, row.hit_rank, row.ndcg
        );
    }

    outcome.write_to(&out)?;
    println!(
        "\nresults.json / per_user.jsonl / records.jsonl written to {}",
        out.display()
    );
    Ok(())
}
