//! Command-line wiring: ingest, build, add-item, recommend, eval, sweep and
//! stats subcommands over the library pipeline.
//!
//! Config precedence is defaults < config file (--config, JSON) < flags, and
//! every artifact-producing command writes its resolved config next to its
//! outputs so a run can be reproduced from the artifact alone. Mutating
//! commands (build, add-item) hold a lock file beside the KB directory;
//! read-only commands run concurrently against one KB.
//!
//! Exit codes: 0 ok, 1 usage/config, 2 data error, 3 backend error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusFormat, SplitManifest};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig};
use crate::gateway::{BackendConfig, BackendKind, Gateway};
use crate::graph_builder::GraphBuilder;
use crate::recommend::{self, RecMode, TitleIndex};
use crate::retrieval::{RetrievalConfig, UserQuery};
use crate::store::KnowledgeBase;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: CorpusFormat,
    pub threshold: u32,
    pub fraction: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub backend: BackendConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            kb: None,
            out: None,
            format: CorpusFormat::GenericJsonl,
            threshold: 10,
            fraction: 0.1,
            sample_size: 500,
            seed: 17,
            backend: BackendConfig::default(),
            retrieval: RetrievalConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "coldrec",
    version,
    about = "Cold-start recommendation over a dynamically built knowledge graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Stable names; flags override the
/// config file, which overrides defaults.
#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON config file with the RunConfig shape.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Knowledge-base directory.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Corpus directory (raw for ingest, ingested split for build/eval).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Backend kind: synthetic, scripted or http.
    #[arg(long)]
    backend: Option<String>,
    /// Base URL for the http backend.
    #[arg(long)]
    base_url: Option<String>,
    /// Fixture directory for the scripted backend.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Edge scoring threshold λ in [0,10].
    #[arg(long)]
    lambda: Option<f64>,
    /// Candidate pool cap θ_pool.
    #[arg(long = "theta-pool")]
    theta_pool: Option<usize>,
    /// Final candidate count θ_top.
    #[arg(long = "theta-top")]
    theta_top: Option<usize>,
    #[arg(long = "max-hops")]
    max_hops: Option<usize>,
    /// Recommendation list length k.
    #[arg(long)]
    k: Option<usize>,
    /// Independent evaluation runs.
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline variant: full, wo_R or wo_GR.
    #[arg(long)]
    mode: Option<String>,
    /// Persist prompts and retrieval traces.
    #[arg(long, default_value_t = false)]
    audit: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a raw corpus, core-filter it, designate cold items and write
    /// the leave-one-out split.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// Corpus format: generic_jsonl or amazon_jsonl.
        #[arg(long)]
        format: Option<String>,
        /// Core-filter threshold.
        #[arg(long)]
        threshold: Option<u32>,
        /// Cold-item fraction in (0,1).
        #[arg(long)]
        fraction: Option<f64>,
        /// Cold-test sample size.
        #[arg(long = "sample-size")]
        sample_size: Option<usize>,
    },
    /// Build the knowledge base from an ingested split.
    Build {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Insert one item (a JSON metadata file) into an existing KB.
    AddItem {
        #[command(flatten)]
        common: CommonArgs,
        /// Path to an ItemMetadata JSON file.
        #[arg(long = "item-json")]
        item_json: PathBuf,
    },
    /// Recommend top-k items for an ad-hoc user history.
    Recommend {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated item ids, oldest first.
        #[arg(long = "user-history")]
        user_history: String,
    },
    /// Run the cold-start evaluation protocol over a split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// One evaluation per λ threshold; emits a CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated thresholds, each in [0,10].
        #[arg(long)]
        thresholds: Option<String>,
    },
    /// Print entity-type and edge-matrix statistics for a KB.
    Stats {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Entry point for the binary: returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { 1 } else { 0 };
        }
    };
    // Ingest maps every failure to a usage-style exit; the other commands
    // distinguish config (1) / data (2) / backend (3).
    let is_ingest = matches!(cli.command, Command::Ingest { .. });
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            if is_ingest {
                1
            } else {
                err.exit_code()
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            common,
            format,
            threshold,
            fraction,
            sample_size,
        } => {
            let mut config = resolve(&common)?;
            if let Some(format) = format {
                config.format = format.parse()?;
            }
            if let Some(threshold) = threshold {
                config.threshold = threshold;
            }
            if let Some(fraction) = fraction {
                config.fraction = fraction;
            }
            if let Some(sample_size) = sample_size {
                config.sample_size = sample_size;
            }
            cmd_ingest(&config)
        }
        Command::Build { common } => cmd_build(&resolve(&common)?),
        Command::AddItem { common, item_json } => cmd_add_item(&resolve(&common)?, &item_json),
        Command::Recommend {
            common,
            user_history,
        } => {
            let config = resolve(&common)?;
            let audit = config.eval.audit;
            cmd_recommend(&config, &user_history, audit)
        }
        Command::Eval { common } => cmd_eval(&resolve(&common)?),
        Command::Sweep { common, thresholds } => {
            let config = resolve(&common)?;
            let thresholds = match (&thresholds, &config.eval.lambda_sweep) {
                (Some(listed), _) => parse_thresholds(Some(listed))?,
                (None, Some(from_config)) => from_config.clone(),
                (None, None) => parse_thresholds(None)?,
            };
            cmd_sweep(&config, &thresholds)
        }
        Command::Stats { common } => cmd_stats(&resolve(&common)?),
    }
}

fn parse_thresholds(listed: Option<&str>) -> Result<Vec<f64>> {
    let listed = listed.unwrap_or("0,3,5,7,9,10");
    listed
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad threshold: {part}")))
        })
        .collect()
}

/// defaults < config file < flags.
fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<RunConfig>(&data)
                .map_err(|e| Error::Config(format!("bad config file {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(kb) = &common.kb {
        config.kb = Some(kb.clone());
    }
    if let Some(corpus) = &common.corpus {
        config.corpus = Some(corpus.clone());
    }
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    if let Some(backend) = &common.backend {
        config.backend.kind = match backend.as_str() {
            "synthetic" | "hash_synthetic" => BackendKind::HashSynthetic,
            "scripted" => BackendKind::Scripted,
            "http" | "openai" | "http_openai_compatible" => BackendKind::HttpOpenaiCompatible,
            other => return Err(Error::Config(format!("unknown backend: {other}"))),
        };
    }
    if let Some(base_url) = &common.base_url {
        config.backend.base_url = Some(base_url.clone());
    }
    if let Some(fixtures) = &common.fixtures {
        config.backend.fixtures_path = Some(fixtures.clone());
    }
    if let Some(lambda) = common.lambda {
        config.retrieval.lambda = lambda;
    }
    if let Some(theta_pool) = common.theta_pool {
        config.retrieval.theta_pool = theta_pool;
    }
    if let Some(theta_top) = common.theta_top {
        config.retrieval.theta_top = theta_top;
    }
    if let Some(max_hops) = common.max_hops {
        config.retrieval.max_hops = max_hops;
    }
    if let Some(k) = common.k {
        config.eval.k = k;
    }
    if let Some(runs) = common.runs {
        config.eval.runs = runs;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.eval.seed = seed;
    }
    if let Some(mode) = &common.mode {
        config.eval.mode = mode.parse()?;
    }
    config.eval.audit = config.eval.audit || common.audit;
    config.retrieval.validate()?;
    Ok(config)
}

fn echo_config(config: &RunConfig) {
    if let Ok(json) = serde_json::to_string(config) {
        eprintln!("resolved config: {json}");
    }
}

fn write_config(config: &RunConfig, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn required<'a>(option: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    option
        .as_ref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

/// Exclusive lock beside the KB directory; held for the life of the guard.
struct KbLock {
    path: PathBuf,
}

impl KbLock {
    fn acquire(kb: &Path) -> Result<KbLock> {
        let mut name = kb.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".lock");
        let path = kb.with_file_name(name);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(KbLock { path }),
            Err(err) if err.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::LockHeld { path })
            }
            Err(err) => Err(Error::io(&path, err)),
        }
    }
}

impl Drop for KbLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn journal_path(kb: &Path) -> PathBuf {
    let mut name = kb.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".journal.jsonl");
    kb.with_file_name(name)
}

fn load_kb_checked(config: &RunConfig, gateway: &Gateway) -> Result<KnowledgeBase> {
    let kb_path = required(&config.kb, "kb")?;
    let kb = KnowledgeBase::load(kb_path)?;
    kb.ensure_embedder(&gateway.embed_model_id())?;
    Ok(kb)
}

fn cmd_ingest(config: &RunConfig) -> Result<()> {
    echo_config(config);
    let corpus_dir = required(&config.corpus, "corpus")?;
    let out = required(&config.out, "out")?;
    let (interactions, catalog, report) = corpus::load_corpus(corpus_dir, config.format)?;
    let filtered = corpus::core_filter(&interactions, config.threshold);
    if filtered.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let cold = corpus::designate_cold_items(&filtered, config.fraction)?;
    let split = corpus::build_split(
        &filtered,
        &catalog,
        &cold,
        config.sample_size,
        config.seed,
        config.threshold,
    )?;
    let manifest = SplitManifest::from_split(
        &split,
        filtered.len(),
        config.seed,
        config.fraction,
        config.sample_size,
    );
    corpus::save_split(out, &split, &manifest)?;
    write_config(config, &out.join("run_config.json"))?;

    println!(
        "loaded            {:>8} interactions, {} items",
        report.interactions, report.items
    );
    println!(
        "skipped lines     {:>8} (+{} metadata)",
        report.skipped, report.skipped_meta
    );
    println!("stub items        {:>8}", report.stub_items);
    println!(
        "after {:>2}-core     {:>8} interactions",
        config.threshold,
        filtered.len()
    );
    println!("cold items        {:>8}", split.cold_items.len());
    println!(
        "sequences         {:>8} ({} cold-test)",
        manifest.users, manifest.cold_test_sequences
    );
    println!("split written to  {}", out.display());
    Ok(())
}

fn cmd_build(config: &RunConfig) -> Result<()> {
    echo_config(config);
    let split_dir = required(&config.corpus, "corpus")?;
    let kb_path = required(&config.kb, "kb")?;
    let split = corpus::load_split(split_dir)?;
    let gateway = Gateway::new(config.backend.clone())?;
    let _lock = KbLock::acquire(kb_path)?;

    let mut kb = if kb_path.join("manifest.json").exists() {
        let kb = KnowledgeBase::load(kb_path)?;
        kb.ensure_embedder(&gateway.embed_model_id())?;
        kb
    } else {
        // A journal without its KB is stale; honoring it would skip every
        // item and build an empty store.
        let _ = std::fs::remove_file(journal_path(kb_path));
        KnowledgeBase::new(gateway.embed_model_id())
    };
    let mut builder = GraphBuilder::new(&gateway).with_journal(journal_path(kb_path))?;
    let report = builder.build(&split.catalog, &mut kb)?;
    kb.save(kb_path)?;

    let report_path = report_sibling(kb_path, "build_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(&report_path, e))?;
    write_config(config, &report_sibling(kb_path, "run_config.json"))?;

    println!(
        "items {} ok / {} failed / {} skipped (journal)",
        report.items_ok, report.items_failed, report.items_skipped
    );
    println!(
        "entities +{} (merged {}), relations +{} (auto-created endpoints {})",
        report.entities_inserted,
        report.entities_merged,
        report.relations_inserted,
        report.relations_auto_created
    );
    println!("llm calls {}, tokens {}", report.llm_calls, report.tokens);
    let stats = kb.stats();
    println!(
        "kb now holds {} entities / {} relations at {}",
        stats.entity_total(),
        stats.relation_total(),
        kb_path.display()
    );
    if report.failed {
        eprintln!("build marked failed: failure rate above ceiling");
        return Err(Error::Config("build failure ceiling exceeded".to_string()));
    }
    Ok(())
}

fn report_sibling(kb: &Path, suffix: &str) -> PathBuf {
    let mut name = kb.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    kb.with_file_name(name)
}

fn cmd_add_item(config: &RunConfig, item_json: &Path) -> Result<()> {
    echo_config(config);
    let kb_path = required(&config.kb, "kb")?;
    let data = std::fs::read_to_string(item_json).map_err(|e| Error::io(item_json, e))?;
    let metadata: crate::corpus::ItemMetadata = serde_json::from_str(&data)?;
    let gateway = Gateway::new(config.backend.clone())?;
    let _lock = KbLock::acquire(kb_path)?;
    let mut kb = KnowledgeBase::load(kb_path)?;
    kb.ensure_embedder(&gateway.embed_model_id())?;
    let mut builder = GraphBuilder::new(&gateway).with_journal(journal_path(kb_path))?;
    let report = builder.add_item(&metadata, &mut kb)?;
    kb.save(kb_path)?;
    write_config(config, &report_sibling(kb_path, "run_config.json"))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_recommend(config: &RunConfig, user_history: &str, audit: bool) -> Result<()> {
    echo_config(config);
    let gateway = Gateway::new(config.backend.clone())?;
    let kb = load_kb_checked(config, &gateway)?;
    let index = TitleIndex::from_kb(&kb);

    let history: Vec<(String, String)> = user_history
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|id| {
            let title = kb.item_title(id).unwrap_or(id).to_string();
            (id.to_string(), title)
        })
        .collect();
    if history.is_empty() {
        return Err(Error::Config(
            "--user-history needs at least one item id".to_string(),
        ));
    }
    let query = UserQuery::from_titles(history);
    let outcome = recommend::recommend(
        "cli",
        &query,
        Some(&kb),
        &index,
        &config.retrieval,
        &gateway,
        config.eval.mode,
        config.eval.k,
        config.seed,
        audit,
    )?;
    println!("{}", serde_json::to_string_pretty(&outcome.record)?);
    if let Some(failure) = &outcome.record.failure {
        return Err(Error::Backend {
            message: failure.clone(),
            retryable: false,
        });
    }
    if let Some(out) = &config.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let record_path = out.join("recommendation.json");
        std::fs::write(&record_path, serde_json::to_string_pretty(&outcome.record)?)
            .map_err(|e| Error::io(&record_path, e))?;
        if let Some(trace) = &outcome.trace {
            let trace_path = out.join("trace.json");
            std::fs::write(&trace_path, serde_json::to_string_pretty(trace)?)
                .map_err(|e| Error::io(&trace_path, e))?;
        }
        write_config(config, &out.join("run_config.json"))?;
    }
    Ok(())
}

fn cmd_eval(config: &RunConfig) -> Result<()> {
    echo_config(config);
    let split_dir = required(&config.corpus, "corpus")?;
    let out = required(&config.out, "out")?;
    let split = corpus::load_split(split_dir)?;
    let gateway = Gateway::new(config.backend.clone())?;
    let kb = if config.eval.mode == RecMode::WoGr {
        None
    } else {
        Some(load_kb_checked(config, &gateway)?)
    };
    let outcome = eval::run_eval(
        &split,
        kb.as_ref(),
        &config.retrieval,
        &config.eval,
        &gateway,
    )?;
    outcome.write_to(out)?;
    write_config(config, &out.join("run_config.json"))?;
    println!("{}", eval::format_report(&outcome.result.aggregate));
    println!("results written to {}", out.display());
    Ok(())
}

fn cmd_sweep(config: &RunConfig, thresholds: &[f64]) -> Result<()> {
    echo_config(config);
    let split_dir = required(&config.corpus, "corpus")?;
    let out = required(&config.out, "out")?;
    let split = corpus::load_split(split_dir)?;
    let gateway = Gateway::new(config.backend.clone())?;
    let kb = load_kb_checked(config, &gateway)?;
    let table = eval::lambda_sweep(
        &split,
        &kb,
        &config.retrieval,
        &config.eval,
        thresholds,
        &gateway,
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join("sweep.csv");
    std::fs::write(&csv_path, table.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    write_config(config, &out.join("run_config.json"))?;
    print!("{}", table.to_csv());
    if let Some(best) = table.best() {
        println!(
            "best threshold: {} (recall@{} = {:.2}%)",
            best.threshold,
            config.eval.k,
            best.recall_at_k * 100.0
        );
    }
    Ok(())
}

fn cmd_stats(config: &RunConfig) -> Result<()> {
    let kb_path = required(&config.kb, "kb")?;
    let kb = KnowledgeBase::load(kb_path)?;
    let stats = kb.stats();
    let entity_total = stats.entity_total().max(1);
    println!("Entity types ({} total):", stats.entity_total());
    let mut histogram: Vec<_> = stats.type_histogram.iter().collect();
    histogram.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    for (entity_type, count) in histogram {
        println!(
            "  {:<14} {:>8}  ({:.1}%)",
            entity_type,
            count,
            *count as f64 * 100.0 / entity_total as f64
        );
    }
    println!("\nEdge matrix ({} total):", stats.relation_total());
    let mut matrix: Vec<_> = stats.edge_type_matrix.iter().collect();
    matrix.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    for (pair, count) in matrix {
        let pretty = pair.replace("->", " -> ");
        println!("  {:<28} {:>8}", pretty, count);
    }
    Ok(())
}
