//! Retrieval metrics at a cut depth, run/qrels joining, and the ablation and
//! paraphrase harnesses.
//!
//! Conventions follow trec_eval: NDCG uses linear gains unless asked
//! otherwise, mAP divides by the total number of relevant documents for the
//! query (not the number retrieved), and unjudged documents are
//! non-relevant.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Qrels, Query};
use crate::index::InvertedIndex;
use crate::llmgate::{paraphrase_query, ChatBackend, LlmError, LlmSettings};
use crate::pipeline::{run_batch, Backends, BatchOutcome, Mode, PipelineConfig};
use crate::runfile::RunResult;

pub const DEFAULT_CUTOFF: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("run and qrels share no query ids")]
    EmptyIntersection,
    #[error("cut depth must be at least 1")]
    InvalidCutoff,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    #[default]
    Linear,
    /// 2^rel - 1
    Exponential,
}

impl Gain {
    fn of(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

fn relevant_count(judged: &BTreeMap<String, u32>) -> usize {
    judged.values().filter(|&&g| g > 0).count()
}

pub fn ndcg_at_k(ranking: &[&str], judged: &BTreeMap<String, u32>, k: usize, gain: Gain) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.of(judged.get(*d).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut grades: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.of(g) / discount(i + 1))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

pub fn map_at_k(ranking: &[&str], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let r = relevant_count(judged);
    if r == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().take(k).enumerate() {
        if judged.get(*d).copied().unwrap_or(0) > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r as f64
}

pub fn recall_at_k(ranking: &[&str], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let r = relevant_count(judged);
    if r == 0 {
        return 0.0;
    }
    let found = ranking
        .iter()
        .take(k)
        .filter(|d| judged.get(**d).copied().unwrap_or(0) > 0)
        .count();
    found as f64 / r as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub ndcg: f64,
    pub map: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub gain: Gain,
    pub num_queries: usize,
    /// Queries with results but no judgments; not averaged.
    pub skipped_run_only: usize,
    /// Judged queries with no results; averaged as zeros.
    pub missing_from_run: usize,
    pub mean: QueryMetrics,
    pub per_query: BTreeMap<String, QueryMetrics>,
}

impl MetricReport {
    pub fn metric_names(&self) -> [String; 3] {
        [
            format!("ndcg_cut_{}", self.k),
            format!("map_cut_{}", self.k),
            format!("recall_{}", self.k),
        ]
    }

    pub fn to_text(&self, per_query: bool) -> String {
        let [n, m, r] = self.metric_names();
        let mut out = String::new();
        let width = n.len().max(m.len()).max(r.len()).max("queries".len());
        if per_query {
            for (qid, v) in &self.per_query {
                for (name, val) in [(&n, v.ndcg), (&m, v.map), (&r, v.recall)] {
                    let _ = writeln!(out, "{name:<width$}  {qid}  {val:.4}");
                }
            }
        }
        for (name, val) in [(&n, self.mean.ndcg), (&m, self.mean.map), (&r, self.mean.recall)] {
            let _ = writeln!(out, "{name:<width$}  all  {val:.4}");
        }
        let _ = writeln!(out, "{:<width$}  all  {}", "queries", self.num_queries);
        if self.skipped_run_only > 0 {
            let _ = writeln!(out, "{:<width$}  all  {}", "skipped", self.skipped_run_only);
        }
        out
    }
}

/// Arithmetic mean accumulated in fixed point (1e-12 units) so the result
/// does not depend on summation order.
fn stable_mean(values: impl Iterator<Item = f64>) -> f64 {
    const SCALE: f64 = 1e12;
    let mut sum: i128 = 0;
    let mut n: i128 = 0;
    for v in values {
        sum += (v * SCALE).round() as i128;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum as f64 / SCALE / n as f64
    }
}

pub fn evaluate(run: &RunResult, qrels: &Qrels, k: usize, gain: Gain) -> Result<MetricReport, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidCutoff);
    }
    let by_query = run.by_query();
    let shared = qrels.query_ids().filter(|q| by_query.contains_key(q)).count();
    if shared == 0 {
        return Err(EvalError::EmptyIntersection);
    }
    let skipped_run_only = by_query
        .keys()
        .filter(|q| qrels.for_query(q).is_none())
        .count();
    if skipped_run_only > 0 {
        log::warn!("{skipped_run_only} run queries have no judgments and were skipped");
    }
    let mut per_query = BTreeMap::new();
    let mut missing = 0;
    for qid in qrels.query_ids() {
        let judged = qrels.for_query(qid).expect("id came from qrels");
        let ranking: Vec<&str> = match by_query.get(qid) {
            Some(hits) => hits.iter().map(|(d, _)| d.as_str()).collect(),
            None => {
                missing += 1;
                Vec::new()
            }
        };
        per_query.insert(
            qid.to_string(),
            QueryMetrics {
                ndcg: ndcg_at_k(&ranking, judged, k, gain),
                map: map_at_k(&ranking, judged, k),
                recall: recall_at_k(&ranking, judged, k),
            },
        );
    }
    let mean = QueryMetrics {
        ndcg: stable_mean(per_query.values().map(|m| m.ndcg)),
        map: stable_mean(per_query.values().map(|m| m.map)),
        recall: stable_mean(per_query.values().map(|m| m.recall)),
    };
    Ok(MetricReport {
        k,
        gain,
        num_queries: per_query.len(),
        skipped_run_only,
        missing_from_run: missing,
        mean,
        per_query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub label: String,
    pub alpha: u32,
    pub metrics: QueryMetrics,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub k: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let k = self.k;
        let headers = [format!("NDCG@{k}"), format!("mAP@{k}"), format!("Recall@{k}")];
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(["Method".len()])
            .max()
            .unwrap_or(0);
        let mut out = format!(
            "{:<label_w$}  {:>9}  {:>9}  {:>9}\n",
            "Method", headers[0], headers[1], headers[2]
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<label_w$}  {:>9.4}  {:>9.4}  {:>9.4}",
                r.label, r.metrics.ndcg, r.metrics.map, r.metrics.recall
            );
        }
        out
    }
}

/// Runs every mode over the same queries and index and tabulates the means.
/// `base` supplies everything but the mode; an explicit alpha in `base`
/// applies to all modes.
pub fn ablation_report(
    queries: &[Query],
    index: &InvertedIndex,
    qrels: &Qrels,
    base: &PipelineConfig,
    backends: &Backends<'_>,
    k: usize,
    gain: Gain,
) -> Result<(AblationTable, Vec<BatchOutcome>), EvalError> {
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for mode in Mode::ALL {
        let config = PipelineConfig { mode, ..base.clone() };
        let outcome = run_batch(queries, index, &config, backends);
        let report = evaluate(&outcome.run, qrels, k, gain)?;
        rows.push(AblationRow {
            mode,
            label: mode.label().to_string(),
            alpha: config.effective_alpha(),
            metrics: report.mean,
            failures: outcome.failure_count(),
        });
        outcomes.push(outcome);
    }
    Ok((AblationTable { k, rows }, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphrasedQuery {
    #[serde(rename = "_id")]
    pub query_id: String,
    pub text: String,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbOutcome {
    pub queries: Vec<ParaphrasedQuery>,
    /// Query ids that kept their original text, with the reason.
    pub failures: Vec<(String, LlmError)>,
}

impl PerturbOutcome {
    pub fn mean_original_len(&self) -> f64 {
        mean_words(self.queries.iter().map(|q| q.original.as_str()))
    }

    pub fn mean_paraphrase_len(&self) -> f64 {
        mean_words(self.queries.iter().map(|q| q.text.as_str()))
    }
}

fn mean_words<'a>(texts: impl Iterator<Item = &'a str>) -> f64 {
    let (mut words, mut n) = (0usize, 0usize);
    for t in texts {
        words += t.split_whitespace().count();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        words as f64 / n as f64
    }
}

/// Paraphrases each query, in input order. With `strict`, the first failure
/// aborts; otherwise failed queries pass through unchanged.
pub fn perturb_queries(
    queries: &[Query],
    backend: &dyn ChatBackend,
    settings: &LlmSettings,
    strict: bool,
) -> Result<PerturbOutcome, (String, LlmError)> {
    use rayon::prelude::*;
    let replies: Vec<Result<String, LlmError>> = queries
        .par_iter()
        .map(|q| paraphrase_query(&q.text, backend, settings))
        .collect();
    let mut out = PerturbOutcome {
        queries: Vec::with_capacity(queries.len()),
        failures: Vec::new(),
    };
    for (q, reply) in queries.iter().zip(replies) {
        let text = match reply {
            Ok(p) => p,
            Err(e) if strict => return Err((q.query_id.clone(), e)),
            Err(e) => {
                log::warn!("query {}: paraphrase failed, keeping original: {e}", q.query_id);
                out.failures.push((q.query_id.clone(), e));
                q.text.clone()
            }
        };
        out.queries.push(ParaphrasedQuery {
            query_id: q.query_id.clone(),
            text,
            original: q.text.clone(),
        });
    }
    Ok(out)
}
