//! Load the bundled corpus, core-filter it, designate cold items and write
//! the leave-one-out split.
//!
//! ```bash
//! cargo run -p coldrec --example ingest
//! ```

use coldrec::corpus::{self, CorpusFormat, SplitManifest};

fn main() -> coldrec::Result<()> {
    let corpus_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus30");
    let out =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/example-out/split");

    let (interactions, catalog, report) =
        corpus::load_corpus(&corpus_dir, CorpusFormat::GenericJsonl)?;
    println!(
        "loaded {} interactions over {} items ({} skipped lines, {} stub items)",
        report.interactions, report.items, report.skipped, report.stub_items
    );

    let filtered = corpus::core_filter(&interactions, 2);
    println!(
        "2-core filtering kept {} of {} interactions",
        filtered.len(),
        interactions.len()
    );

    let cold = corpus::designate_cold_items(&filtered, 0.1)?;
    println!("cold items (least frequent 10%): {:?}", cold);

    let split = corpus::build_split(&filtered, &catalog, &cold, 500, 17, 2)?;
    let manifest = SplitManifest::from_split(&split, filtered.len(), 17, 0.1, 500);
    corpus::save_split(&out, &split, &manifest)?;

    println!(
        "{} sequences ({} cold-test) written to {}",
        manifest.users,
        manifest.cold_test_sequences,
        out.display()
    );
    for sequence in split.cold_test_sequences() {
        println!(
            "  {}: {} history items -> target {}",
            sequence.user_id,
            sequence.history().len(),
            sequence.target()
        );
    }
    Ok(())
}
