//! Offline cold-start evaluation: leave-one-out Recall@k / NDCG@k with
//! multi-run averaging, hallucination accounting, ablation modes, and a
//! λ sweep.
//!
//! Every cold-test sequence is evaluated once per run; the run index only
//! perturbs the seed-dependent parts (candidate shuffle and, on a live
//! backend, sampling). Per-user failures score as misses with an audit
//! flag, since excluding them would inflate the metrics. Printed reports use
//! percent formatting; serialized results keep raw fractions.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSplit;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::recommend::{self, GenerationRecord, RankedRecommendation, RecMode, TitleIndex};
use crate::retrieval::{RetrievalConfig, RetrievalTrace, UserQuery};
use crate::store::KnowledgeBase;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    pub runs: u32,
    pub seed: u64,
    pub mode: RecMode,
    /// Thresholds for the λ sweep; flags may override.
    pub lambda_sweep: Option<Vec<f64>>,
    /// Persist prompts and retrieval traces alongside the records.
    pub audit: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            runs: 5,
            seed: 17,
            mode: RecMode::Full,
            lambda_sweep: None,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerUser {
    pub run: u32,
    pub user_id: String,
    pub target: String,
    pub hit_rank: Option<u32>,
    /// 0 or 1 under single-target leave-one-out.
    pub recall: f64,
    pub ndcg: f64,
    pub ood_count: u32,
    pub entries_count: u32,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeans {
    pub run: u32,
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub hallucination_rate: f64,
    pub mean_pool_size: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: RecMode,
    pub k: usize,
    pub runs: u32,
    pub users: usize,
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub recall_stddev: f64,
    pub ndcg_stddev: f64,
    /// Pooled over all runs: total OOD entries / total entries.
    pub hallucination_rate: f64,
    pub mean_pool_size: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub aggregate: Aggregate,
    pub per_run: Vec<RunMeans>,
    pub per_user: Vec<PerUser>,
}

/// Everything an evaluation run produced; callers persist what they need.
pub struct EvalOutcome {
    pub result: EvalResult,
    pub records: Vec<GenerationRecord>,
    /// (user id, run, trace); populated only in audit mode.
    pub traces: Vec<(String, u32, RetrievalTrace)>,
}

/// Scores one recommendation against the single held-out target: recall is
/// a hit among the first k entries, NDCG is 1/log2(rank+1) at the hit rank.
/// Out-of-domain entries occupy rank positions: they were emitted.
pub fn score_user(
    recommendation: &RankedRecommendation,
    target: &str,
    k: usize,
) -> (f64, f64, Option<u32>) {
    let hit_rank = recommendation
        .entries
        .iter()
        .take(k)
        .find(|e| e.matched_item_id.as_deref() == Some(target))
        .map(|e| e.rank);
    match hit_rank {
        Some(rank) => (1.0, 1.0 / ((rank as f64) + 1.0).log2(), Some(rank)),
        None => (0.0, 0.0, None),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for value in values {
        sum += value;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Population standard deviation; exactly 0.0 when all values are equal,
/// so deterministic backends report a clean zero.
fn stddev(values: &[f64]) -> f64 {
    if values.len() <= 1 || values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Evaluates every cold-test sequence for each of `runs` independent runs.
/// Users within a run are dispatched concurrently up to the gateway's
/// in-flight bound; aggregation is a deterministic reduce in user order.
pub fn run_eval(
    split: &CorpusSplit,
    kb: Option<&KnowledgeBase>,
    retrieval: &RetrievalConfig,
    config: &EvalConfig,
    gateway: &Gateway,
) -> Result<EvalOutcome> {
    if config.mode != RecMode::WoGr && kb.is_none() {
        return Err(Error::Config(format!(
            "mode {} requires a knowledge base",
            config.mode.as_str()
        )));
    }
    let index = TitleIndex::from_catalog(&split.catalog);
    let sequences: Vec<_> = split.cold_test_sequences().collect();
    if sequences.is_empty() {
        return Err(Error::NoColdSequences);
    }

    let queries: Vec<(String, UserQuery, String)> = sequences
        .iter()
        .map(|seq| {
            let history: Vec<(String, String)> = seq
                .history()
                .iter()
                .map(|item_id| {
                    let title = split
                        .catalog
                        .get(item_id)
                        .map(|m| m.title.clone())
                        .unwrap_or_else(|| item_id.clone());
                    (item_id.clone(), title)
                })
                .collect();
            (
                seq.user_id.clone(),
                UserQuery::from_titles(history),
                seq.target().to_string(),
            )
        })
        .collect();

    let mut per_user: Vec<PerUser> = Vec::new();
    let mut per_run: Vec<RunMeans> = Vec::new();
    let mut records: Vec<GenerationRecord> = Vec::new();
    let mut traces: Vec<(String, u32, RetrievalTrace)> = Vec::new();
    let mut total_ood = 0u64;
    let mut total_entries = 0u64;
    let mut failures = 0usize;

    for run in 0..config.runs {
        let run_seed = config.seed.wrapping_add(run as u64);
        let mut run_rows: Vec<PerUser> = Vec::with_capacity(queries.len());
        let mut pool_sizes: Vec<f64> = Vec::with_capacity(queries.len());
        let mut run_ood = 0u64;
        let mut run_entries = 0u64;

        for chunk in queries.chunks(gateway.max_inflight()) {
            let index = &index;
            let outcomes: Vec<Result<recommend::RecommendOutcome>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|(user_id, query, _)| {
                        scope.spawn(move || {
                            recommend::recommend(
                                user_id,
                                query,
                                kb,
                                index,
                                retrieval,
                                gateway,
                                config.mode,
                                config.k,
                                run_seed,
                                config.audit,
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("eval worker panicked"))
                    .collect()
            });

            for ((user_id, _, target), outcome) in chunk.iter().zip(outcomes) {
                let row = match outcome {
                    Ok(outcome) => {
                        let record = outcome.record;
                        let failed = record.parse_failed || record.failure.is_some();
                        let (recall, ndcg, hit_rank) =
                            score_user(&record.recommendation, target, config.k);
                        run_ood += record.ood_count as u64;
                        run_entries += record.entries_count as u64;
                        pool_sizes.push(record.pool_size as f64);
                        if let (true, Some(trace)) = (config.audit, outcome.trace) {
                            traces.push((user_id.clone(), run, trace));
                        }
                        let row = PerUser {
                            run,
                            user_id: user_id.clone(),
                            target: target.clone(),
                            hit_rank,
                            recall,
                            ndcg,
                            ood_count: record.ood_count,
                            entries_count: record.entries_count,
                            failed,
                        };
                        records.push(record);
                        row
                    }
                    // Hard stage errors score as misses and never abort the run.
                    Err(err) => PerUser {
                        run,
                        user_id: user_id.clone(),
                        target: target.clone(),
                        hit_rank: None,
                        recall: 0.0,
                        ndcg: 0.0,
                        ood_count: 0,
                        entries_count: 0,
                        failed: {
                            let _ = err;
                            true
                        },
                    },
                };
                if row.failed {
                    failures += 1;
                }
                run_rows.push(row);
            }
        }

        per_run.push(RunMeans {
            run,
            recall_at_k: mean(run_rows.iter().map(|r| r.recall)),
            ndcg_at_k: mean(run_rows.iter().map(|r| r.ndcg)),
            hallucination_rate: if run_entries == 0 {
                0.0
            } else {
                run_ood as f64 / run_entries as f64
            },
            mean_pool_size: mean(pool_sizes.iter().copied()),
        });
        total_ood += run_ood;
        total_entries += run_entries;
        per_user.extend(run_rows);
    }

    let recall_means: Vec<f64> = per_run.iter().map(|r| r.recall_at_k).collect();
    let ndcg_means: Vec<f64> = per_run.iter().map(|r| r.ndcg_at_k).collect();
    let aggregate = Aggregate {
        mode: config.mode,
        k: config.k,
        runs: config.runs,
        users: queries.len(),
        recall_at_k: mean(recall_means.iter().copied()),
        ndcg_at_k: mean(ndcg_means.iter().copied()),
        recall_stddev: stddev(&recall_means),
        ndcg_stddev: stddev(&ndcg_means),
        hallucination_rate: if total_entries == 0 {
            0.0
        } else {
            total_ood as f64 / total_entries as f64
        },
        mean_pool_size: mean(per_run.iter().map(|r| r.mean_pool_size)),
        failures,
    };
    Ok(EvalOutcome {
        result: EvalResult {
            aggregate,
            per_run,
            per_user,
        },
        records,
        traces,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub hallucination_rate: f64,
    pub mean_pool_size: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// CSV with the stable header used by downstream tooling.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("threshold,recall_at_k,ndcg_at_k,hallucination_rate,mean_pool_size\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                row.threshold,
                row.recall_at_k,
                row.ndcg_at_k,
                row.hallucination_rate,
                row.mean_pool_size
            ));
        }
        out
    }

    /// Best row by recall, ties by NDCG, then the smaller threshold.
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.iter().min_by(|a, b| {
            b.recall_at_k
                .partial_cmp(&a.recall_at_k)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(
                    b.ndcg_at_k
                        .partial_cmp(&a.ndcg_at_k)
                        .unwrap_or(std::cmp::Ordering::Equal),
                )
                .then(
                    a.threshold
                        .partial_cmp(&b.threshold)
                        .unwrap_or(std::cmp::Ordering::Equal),
                )
        })
    }
}

/// One `run_eval` per threshold, everything else held fixed.
pub fn lambda_sweep(
    split: &CorpusSplit,
    kb: &KnowledgeBase,
    retrieval: &RetrievalConfig,
    config: &EvalConfig,
    thresholds: &[f64],
    gateway: &Gateway,
) -> Result<SweepTable> {
    for threshold in thresholds {
        if !(0.0..=10.0).contains(threshold) {
            return Err(Error::BadThreshold(*threshold));
        }
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let swept = RetrievalConfig {
            lambda: threshold,
            ..retrieval.clone()
        };
        let outcome = run_eval(split, Some(kb), &swept, config, gateway)?;
        let aggregate = outcome.result.aggregate;
        rows.push(SweepRow {
            threshold,
            recall_at_k: aggregate.recall_at_k,
            ndcg_at_k: aggregate.ndcg_at_k,
            hallucination_rate: aggregate.hallucination_rate,
            mean_pool_size: aggregate.mean_pool_size,
        });
    }
    Ok(SweepTable { rows })
}

/// Runs the identical protocol in all three modes.
pub fn ablation(
    split: &CorpusSplit,
    kb: &KnowledgeBase,
    retrieval: &RetrievalConfig,
    config: &EvalConfig,
    gateway: &Gateway,
) -> Result<Vec<(RecMode, Aggregate)>> {
    let mut table = Vec::new();
    for mode in [RecMode::Full, RecMode::WoR, RecMode::WoGr] {
        let mode_config = EvalConfig {
            mode,
            ..config.clone()
        };
        let kb_arg = if mode == RecMode::WoGr {
            None
        } else {
            Some(kb)
        };
        let outcome = run_eval(split, kb_arg, retrieval, &mode_config, gateway)?;
        table.push((mode, outcome.result.aggregate));
    }
    Ok(table)
}

/// Recomputes the hallucination rate from persisted generation records;
/// used to audit that reported rates match what was written to disk.
pub fn hallucination_from_records(path: &Path) -> Result<f64> {
    let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ood = 0u64;
    let mut entries = 0u64;
    for line in data.lines().filter(|l| !l.trim().is_empty()) {
        let record: GenerationRecord = serde_json::from_str(line)?;
        ood += record.ood_count as u64;
        entries += record.entries_count as u64;
    }
    Ok(if entries == 0 {
        0.0
    } else {
        ood as f64 / entries as f64
    })
}

impl EvalOutcome {
    /// Writes results.json, per_user.jsonl, records.jsonl and (in audit
    /// mode) a traces/ directory into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let results = serde_json::json!({
            "aggregate": self.result.aggregate,
            "per_run": self.result.per_run,
        });
        let results_path = dir.join("results.json");
        std::fs::write(&results_path, serde_json::to_string_pretty(&results)?)
            .map_err(|e| Error::io(&results_path, e))?;

        let per_user_path = dir.join("per_user.jsonl");
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&per_user_path).map_err(|e| Error::io(&per_user_path, e))?,
        );
        for row in &self.result.per_user {
            writeln!(out, "{}", serde_json::to_string(row)?)
                .map_err(|e| Error::io(&per_user_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&per_user_path, e))?;

        let records_path = dir.join("records.jsonl");
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&records_path).map_err(|e| Error::io(&records_path, e))?,
        );
        for record in &self.records {
            writeln!(out, "{}", serde_json::to_string(record)?)
                .map_err(|e| Error::io(&records_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&records_path, e))?;

        if !self.traces.is_empty() {
            let traces_dir = dir.join("traces");
            std::fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;
            for (user_id, run, trace) in &self.traces {
                let safe: String = user_id
                    .chars()
                    .map(|c| if c.is_alphanumeric() { c } else { '_' })
                    .collect();
                let path = traces_dir.join(format!("{safe}-run{run}.json"));
                std::fs::write(&path, serde_json::to_string_pretty(trace)?)
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Table 2-style console report: percentages, two decimals.
pub fn format_report(aggregate: &Aggregate) -> String {
    format!(
        "mode={} users={} runs={}\n\
         Recall@{:<3} {:>6.2}%  (stddev {:.2})\n\
         NDCG@{:<4} {:>6.2}%  (stddev {:.2})\n\
         Hallucination {:>6.2}%\n\
         Mean pool size {:.1}   failures {}",
        aggregate.mode.as_str(),
        aggregate.users,
        aggregate.runs,
        aggregate.k,
        aggregate.recall_at_k * 100.0,
        aggregate.recall_stddev * 100.0,
        aggregate.k,
        aggregate.ndcg_at_k * 100.0,
        aggregate.ndcg_stddev * 100.0,
        aggregate.hallucination_rate * 100.0,
        aggregate.mean_pool_size,
        aggregate.failures,
    )
}
