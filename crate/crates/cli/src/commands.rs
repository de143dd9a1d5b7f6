use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use bmq_core::context::{serialize_definitions, serialize_relations, SerializedContext};
use bmq_core::corpus::{self, DatasetLayout, Query};
use bmq_core::diskcache::sha256_hex;
use bmq_core::evalkit::{self, Gain};
use bmq_core::index::{read_snapshot, write_snapshot, InvertedIndex};
use bmq_core::llmgate::{extract_terms, LlmError};
use bmq_core::ontology::{
    fetch_concept, fetch_neighborhood, link_concept, materialize_snapshot, prune_edges,
    write_records, RelationFilter,
};
use bmq_core::pipeline::{self, BatchOutcome, Mode};
use bmq_core::runfile::RunResult;

use crate::config::Config;
use crate::error::{CliError, EXIT_CONFIG};
use crate::services::{self, Services};

pub struct DataSel<'a> {
    pub dataset: Option<&'a Path>,
    pub queries: Option<&'a Path>,
    pub index: Option<&'a Path>,
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{}: no such file", path.display())))
    }
}

fn load_corpus_index(cfg: &Config, dataset: &Path) -> Result<InvertedIndex, CliError> {
    let path = DatasetLayout::new(dataset).corpus();
    require_file(&path)?;
    let corpus = corpus::load_corpus(&path)?;
    Ok(InvertedIndex::build(&corpus, services::analyzer(cfg)?)?)
}

fn load_index_file(path: &Path) -> Result<InvertedIndex, CliError> {
    require_file(path)?;
    let f = File::open(path)?;
    read_snapshot(BufReader::new(f)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn index_for(cfg: &Config, sel: &DataSel<'_>) -> Result<InvertedIndex, CliError> {
    match (sel.index, sel.dataset) {
        (Some(p), _) => load_index_file(p),
        (None, Some(d)) => load_corpus_index(cfg, d),
        (None, None) => Err(CliError::data("either --index or --dataset is required")),
    }
}

fn queries_for(sel: &DataSel<'_>) -> Result<Vec<Query>, CliError> {
    let path = match (sel.queries, sel.dataset) {
        (Some(q), _) => q.to_path_buf(),
        (None, Some(d)) => DatasetLayout::new(d).queries(),
        (None, None) => return Err(CliError::data("either --queries or --dataset is required")),
    };
    require_file(&path)?;
    Ok(corpus::load_queries(&path)?)
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn index_build(cfg: &Config, dataset: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let index = load_corpus_index(cfg, dataset)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dataset.join("index.bmq"));
    let mut w = BufWriter::new(File::create(&out)?);
    write_snapshot(&index, &mut w)?;
    w.flush()?;
    drop(w);
    println!("{} documents indexed", index.doc_count());
    println!("vocabulary: {} terms", index.vocab_size());
    println!("average document length: {:.3}", index.avg_doc_len());
    println!("sha256 {}  {}", file_sha256(&out)?, out.display());
    Ok(())
}

pub fn index_search(
    cfg: &Config,
    index: Option<&Path>,
    dataset: Option<&Path>,
    query: &str,
    k: usize,
) -> Result<(), CliError> {
    let index = index_for(
        cfg,
        &DataSel {
            dataset,
            queries: None,
            index,
        },
    )?;
    let params = services::pipeline_config(cfg)?.bm25;
    for hit in index.search(query, k, params) {
        println!("{}\t{}\t{:.6}", hit.rank, hit.doc_id, hit.score);
    }
    Ok(())
}

pub fn snapshot(
    cfg: &Config,
    dataset: Option<&Path>,
    queries: Option<&Path>,
    terms_file: Option<&Path>,
    out: &Path,
    refresh: bool,
) -> Result<(), CliError> {
    let onto = services::build_ontology(cfg, refresh)?;
    let terms: Vec<String> = if let Some(p) = terms_file {
        require_file(p)?;
        std::fs::read_to_string(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    } else {
        let qs = queries_for(&DataSel {
            dataset,
            queries,
            index: None,
        })?;
        let llm = services::build_llm(cfg, refresh)?;
        let settings = services::llm_settings(cfg)?;
        let mut terms = Vec::new();
        for q in &qs {
            let x = extract_terms(&q.text, llm.as_ref(), &settings)
                .map_err(|e| CliError::config(format!("query {}: {e}", q.query_id)))?;
            terms.extend(x.terms.terms);
        }
        terms
    };
    let edge_cap: usize = cfg.get("ontology.edge_cap")?;
    let records = materialize_snapshot(onto.as_ref(), terms.iter().map(String::as_str), edge_cap)
        .map_err(|e| CliError::config(e.to_string()))?;
    write_records(&records, out)?;
    println!("{} concepts from {} terms written to {}", records.len(), terms.len(), out.display());
    Ok(())
}

pub fn context_dump(
    cfg: &Config,
    query: Option<&str>,
    terms: Option<&[String]>,
    refresh: bool,
) -> Result<(), CliError> {
    let onto = services::build_ontology(cfg, refresh)?;
    let terms: Vec<String> = match (terms, query) {
        (Some(t), _) => t.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        (None, Some(q)) => {
            let llm = services::build_llm(cfg, refresh)?;
            extract_terms(q, llm.as_ref(), &services::llm_settings(cfg)?)
                .map_err(|e| CliError::config(e.to_string()))?
                .terms
                .terms
        }
        (None, None) => return Err(CliError::data("either --query or --terms is required")),
    };
    let edge_cap: usize = cfg.get("ontology.edge_cap")?;
    let onto_err = |e: bmq_core::ontology::OntologyError| CliError::config(e.to_string());
    let mut seen = std::collections::HashSet::new();
    let (mut concepts, mut graphs) = (Vec::new(), Vec::new());
    for t in &terms {
        let Some(hit) = link_concept(t, onto.as_ref()).map_err(onto_err)? else {
            eprintln!("no concept for `{t}`");
            continue;
        };
        if !seen.insert(hit.cui.clone()) {
            continue;
        }
        concepts.push(fetch_concept(&hit, onto.as_ref()).map_err(onto_err)?);
        let g = fetch_neighborhood(&hit.cui, Some(&hit.name), onto.as_ref(), edge_cap).map_err(onto_err)?;
        graphs.push(prune_edges(&g, &RelationFilter::default()));
    }
    let ctx = SerializedContext {
        definitions_text: serialize_definitions(&concepts),
        relations_text: serialize_relations(&graphs).map_err(|e| CliError::data(e.to_string()))?,
    };
    println!("Definitions:\n{}\n\nRelationships:\n{}", ctx.definitions_text, ctx.relations_text);
    Ok(())
}

#[derive(Serialize)]
struct ExpansionView<'a> {
    query_id: &'a str,
    query: &'a str,
    mode: &'a str,
    alpha: u32,
    terms: &'a [String],
    concepts: Vec<String>,
    definitions: &'a str,
    relations: &'a str,
    expansion: Option<&'a str>,
    composed_text: &'a str,
    fallback: Option<String>,
    pseudo_doc_cache_hit: Option<bool>,
}

fn fallback_text(ex: &pipeline::ExpandedQuery) -> Option<String> {
    ex.fallback.as_ref().map(|f| match f {
        pipeline::Fallback::Failed { stage, error } => format!("{stage:?} failed: {error}"),
        other => format!("{other:?}"),
    })
}

pub fn expand(cfg: &Config, query: &str, json: bool, refresh: bool) -> Result<(), CliError> {
    let pc = services::pipeline_config(cfg)?;
    let svc = services::services_for(cfg, pc.mode, refresh)?;
    let q = Query::new("q", query);
    let ex = pipeline::expand(&q, &pc, &svc.backends());
    let view = ExpansionView {
        query_id: &q.query_id,
        query: &q.text,
        mode: pc.mode.name(),
        alpha: ex.alpha,
        terms: &ex.terms,
        concepts: ex.concepts.iter().map(|c| format!("{} {}", c.cui, c.name)).collect(),
        definitions: &ex.context.definitions_text,
        relations: &ex.context.relations_text,
        expansion: ex.expansion.as_deref(),
        composed_text: &ex.composed_text,
        fallback: fallback_text(&ex),
        pseudo_doc_cache_hit: ex.pseudo_doc.as_ref().map(|p| p.provenance.cache_hit),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&view).expect("view serializes"));
    } else {
        println!("mode: {}  alpha: {}", view.mode, view.alpha);
        println!("terms: [{}]", view.terms.join(", "));
        println!("concepts: {}", view.concepts.join("; "));
        if let Some(f) = &view.fallback {
            println!("fallback: {f}");
        }
        println!("--- definitions\n{}", view.definitions);
        println!("--- relations\n{}", view.relations);
        println!("--- expansion\n{}", view.expansion.unwrap_or(""));
        println!("--- composed\n{}", view.composed_text);
    }
    check_replay(&[&ex])?;
    if let Some((stage, e)) = ex.failure() {
        return Err(CliError::partial(format!("{stage:?} stage failed: {e}")));
    }
    Ok(())
}

/// Exit 2 with a listing if any query needed an LLM reply that was not
/// recorded.
fn check_replay(expansions: &[&pipeline::ExpandedQuery]) -> Result<(), CliError> {
    let misses: Vec<String> = expansions
        .iter()
        .filter_map(|e| match e.failure() {
            Some((_, pipeline::StageError::Llm(LlmError::ReplayMiss { key, kind, .. }))) => {
                Some(format!("  {} {kind} {key}", e.original.query_id))
            }
            _ => None,
        })
        .collect();
    if misses.is_empty() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_CONFIG,
            message: format!(
                "{} queries have no recorded LLM reply (query, prompt, cache key):\n{}",
                misses.len(),
                misses.join("\n")
            ),
        })
    }
}

fn write_run(run: &RunResult, out: &Path) -> Result<String, CliError> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(out)?);
    run.write_trec(&mut w)?;
    w.flush()?;
    drop(w);
    file_sha256(out)
}

fn report_failures(outcome: &BatchOutcome) -> Result<(), CliError> {
    let refs: Vec<&pipeline::ExpandedQuery> = outcome.expansions.iter().collect();
    check_replay(&refs)?;
    let n = outcome.failure_count();
    if n > 0 {
        for ex in outcome.failures() {
            if let Some((stage, e)) = ex.failure() {
                eprintln!("query {}: {stage:?} failed, used the raw query: {e}", ex.original.query_id);
            }
        }
        return Err(CliError::partial(format!("{n} queries fell back to the raw query")));
    }
    Ok(())
}

pub fn run(
    cfg: &Config,
    sel: &DataSel<'_>,
    out: &Path,
    qrels: Option<&Path>,
    json: bool,
    refresh: bool,
) -> Result<(), CliError> {
    let pc = services::pipeline_config(cfg)?;
    let svc: Services = services::services_for(cfg, pc.mode, refresh)?;
    let queries = queries_for(sel)?;
    let qrels = match qrels {
        Some(p) => {
            require_file(p)?;
            Some(corpus::load_qrels(p)?)
        }
        None => None,
    };
    let index = index_for(cfg, sel)?;
    let outcome = pipeline::run_batch(&queries, &index, &pc, &svc.backends());
    let digest = write_run(&outcome.run, out)?;
    println!(
        "{} queries, {} lines written to {}",
        outcome.run.queries.len(),
        outcome.run.line_count(),
        out.display()
    );
    println!("sha256 {digest}  {}", out.display());
    if let Some(qrels) = qrels {
        let report = evalkit::evaluate(&outcome.run, &qrels, evalkit::DEFAULT_CUTOFF, Gain::Linear)?;
        if json {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        } else {
            print!("{}", report.to_text(false));
        }
    }
    report_failures(&outcome)
}

pub fn perturb(
    cfg: &Config,
    dataset: Option<&Path>,
    queries: Option<&Path>,
    out: Option<&Path>,
    strict: bool,
    refresh: bool,
) -> Result<(), CliError> {
    let sel = DataSel {
        dataset,
        queries,
        index: None,
    };
    let qs = queries_for(&sel)?;
    let out: PathBuf = match (out, queries, dataset) {
        (Some(o), _, _) => o.to_path_buf(),
        (None, Some(q), _) => q.with_file_name("queries-p.jsonl"),
        (None, None, Some(d)) => d.join("queries-p.jsonl"),
        (None, None, None) => unreachable!("queries_for already required one of them"),
    };
    let llm = services::build_llm(cfg, refresh)?;
    let settings = services::llm_settings(cfg)?;
    let outcome = evalkit::perturb_queries(&qs, llm.as_ref(), &settings, strict).map_err(|(qid, e)| {
        let code = if matches!(e, LlmError::ReplayMiss { .. }) { EXIT_CONFIG } else { 1 };
        CliError {
            code,
            message: format!("query {qid}: {e}"),
        }
    })?;
    corpus::write_jsonl(&out, &outcome.queries)?;
    println!(
        "{} queries, {} paraphrased, {} kept original; mean length {:.3} -> {:.3} words; written to {}",
        outcome.queries.len(),
        outcome.queries.len() - outcome.failures.len(),
        outcome.failures.len(),
        outcome.mean_original_len(),
        outcome.mean_paraphrase_len(),
        out.display()
    );
    if !outcome.failures.is_empty() {
        return Err(CliError::partial(format!(
            "{} queries could not be paraphrased",
            outcome.failures.len()
        )));
    }
    Ok(())
}

pub fn eval(
    run: &Path,
    qrels: &Path,
    k: usize,
    exp_gain: bool,
    per_query: bool,
    json: bool,
) -> Result<(), CliError> {
    require_file(run)?;
    require_file(qrels)?;
    let run = RunResult::read_trec(File::open(run)?)?;
    let qrels = corpus::load_qrels(qrels)?;
    let gain = if exp_gain { Gain::Exponential } else { Gain::Linear };
    let report = evalkit::evaluate(&run, &qrels, k, gain)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.to_text(per_query));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn ablate(
    cfg: &Config,
    sel: &DataSel<'_>,
    qrels: Option<&Path>,
    k: usize,
    exp_gain: bool,
    json: bool,
    runs_dir: Option<&Path>,
    refresh: bool,
) -> Result<(), CliError> {
    let pc = services::pipeline_config(cfg)?;
    let svc = services::services_for(cfg, Mode::Full, refresh)?;
    let queries = queries_for(sel)?;
    let qrels_path = match (qrels, sel.dataset) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(d)) => DatasetLayout::new(d).qrels("test"),
        (None, None) => return Err(CliError::data("either --qrels or --dataset is required")),
    };
    require_file(&qrels_path)?;
    let qrels = corpus::load_qrels(&qrels_path)?;
    let index = index_for(cfg, sel)?;
    let gain = if exp_gain { Gain::Exponential } else { Gain::Linear };
    let (table, outcomes) =
        evalkit::ablation_report(&queries, &index, &qrels, &pc, &svc.backends(), k, gain)?;
    if let Some(dir) = runs_dir {
        std::fs::create_dir_all(dir)?;
        for o in &outcomes {
            let path = dir.join(format!("{}.trec", o.run.tag));
            let digest = write_run(&o.run, &path)?;
            eprintln!("sha256 {digest}  {}", path.display());
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
    } else {
        print!("{}", table.to_text());
    }
    let all: Vec<&pipeline::ExpandedQuery> = outcomes.iter().flat_map(|o| o.expansions.iter()).collect();
    check_replay(&all)?;
    let failed: usize = table.rows.iter().map(|r| r.failures).sum();
    if failed > 0 {
        return Err(CliError::partial(format!("{failed} query expansions fell back across modes")));
    }
    Ok(())
}
