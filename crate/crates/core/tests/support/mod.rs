//! Independent reference implementations and random fixture generators
//! shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use bmq_core::corpus::{Corpus, Document, Qrels};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> PathBuf {
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    here.ancestors()
        .find(|p| p.join("fixtures").is_dir() && p.join("Cargo.toml").is_file())
        .expect("workspace root with fixtures/")
        .to_path_buf()
}

pub fn fixture(rel: &str) -> PathBuf {
    workspace_root().join("fixtures").join(rel)
}

// ---------------------------------------------------------------- BM25

/// Brute-force BM25: rescans every document for every query term.
pub fn brute_bm25(
    docs: &[(String, Vec<String>)],
    query: &[String],
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let avg = total as f64 / n;
    let mut terms: Vec<(&String, usize)> = Vec::new();
    for t in query {
        match terms.iter_mut().find(|(u, _)| *u == t) {
            Some(e) => e.1 += 1,
            None => terms.push((t, 1)),
        }
    }
    let dfs: Vec<f64> = terms
        .iter()
        .map(|(term, _)| docs.iter().filter(|(_, d)| d.contains(term)).count() as f64)
        .collect();
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut score = 0.0;
        for ((term, qtf), &df) in terms.iter().zip(&dfs) {
            let tf = toks.iter().filter(|x| x == term).count();
            if tf == 0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let tf = tf as f64;
            let len = toks.len() as f64;
            let w = idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / avg));
            score += *qtf as f64 * w;
        }
        if score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// Random corpus over a small vocabulary `w0..w{vocab}`; some documents
/// are empty.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_docs: usize, vocab: usize) -> Vec<(String, Vec<String>)> {
    let n = rng.gen_range(1..=max_docs);
    (0..n)
        .map(|i| {
            let len = if rng.gen_bool(0.03) { 0 } else { rng.gen_range(1..40) };
            let toks = (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect();
            (format!("doc{i:05}"), toks)
        })
        .collect()
}

pub fn as_corpus(docs: &[(String, Vec<String>)]) -> Corpus {
    Corpus::from_documents(
        docs.iter()
            .map(|(id, toks)| Document::new(id.clone(), "", toks.join(" ")))
            .collect(),
    )
    .unwrap()
}

pub fn random_query(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<String> {
    let len = rng.gen_range(1..8);
    // slightly wider than the vocabulary so some terms are absent
    (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab + 3))).collect()
}

// ---------------------------------------------------------------- metrics

/// NDCG@k from the textbook definition, linear gains.
pub fn brute_ndcg(ranking: &[String], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let gain = |d: &String| judged.get(d).copied().unwrap_or(0) as f64;
    let mut dcg = 0.0;
    for i in 1..=k.min(ranking.len()) {
        dcg += gain(&ranking[i - 1]) / ((i + 1) as f64).log2();
    }
    let mut ideal: Vec<String> = judged.keys().cloned().collect();
    ideal.sort_by(|a, b| gain(b).partial_cmp(&gain(a)).unwrap());
    let mut idcg = 0.0;
    for i in 1..=k.min(ideal.len()) {
        idcg += gain(&ideal[i - 1]) / ((i + 1) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn is_rel(judged: &BTreeMap<String, u32>, d: &str) -> bool {
    judged.get(d).is_some_and(|&g| g > 0)
}

/// AP@k with precision recomputed from scratch at every relevant rank.
pub fn brute_ap(ranking: &[String], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let r = judged.keys().filter(|d| is_rel(judged, d)).count();
    if r == 0 {
        return 0.0;
    }
    let top = &ranking[..k.min(ranking.len())];
    let mut total = 0.0;
    for i in 0..top.len() {
        if is_rel(judged, &top[i]) {
            let prefix = &top[..=i];
            let p = prefix.iter().filter(|d| is_rel(judged, d)).count() as f64 / prefix.len() as f64;
            total += p;
        }
    }
    total / r as f64
}

pub fn brute_recall(ranking: &[String], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let rel: Vec<&String> = judged.keys().filter(|d| is_rel(judged, d)).collect();
    if rel.is_empty() {
        return 0.0;
    }
    let top = &ranking[..k.min(ranking.len())];
    rel.iter().filter(|d| top.contains(d)).count() as f64 / rel.len() as f64
}

/// Random judged set and ranking over a shared doc pool. Rankings never
/// repeat a document.
pub fn random_judgments(rng: &mut ChaCha8Rng) -> (Vec<String>, BTreeMap<String, u32>) {
    let pool: Vec<String> = (0..rng.gen_range(1..60)).map(|i| format!("d{i}")).collect();
    let mut judged = BTreeMap::new();
    for d in &pool {
        if rng.gen_bool(0.4) {
            judged.insert(d.clone(), rng.gen_range(0..4));
        }
    }
    let mut ranking = pool.clone();
    ranking.shuffle(rng);
    ranking.truncate(rng.gen_range(0..=pool.len()));
    (ranking, judged)
}

pub fn qrels_from(map: &BTreeMap<String, BTreeMap<String, u32>>) -> Qrels {
    let mut q = Qrels::new();
    for (qid, docs) in map {
        for (d, g) in docs {
            q.insert(qid.clone(), d.clone(), *g);
        }
    }
    q
}

// ---------------------------------------------------------------- ontology

use bmq_core::context::{serialize_definitions, serialize_relations};
use bmq_core::ontology::{
    fetch_concept, fetch_neighborhood, link_concept, prune_edges, RelationFilter, SnapshotStore,
};

pub fn minimed_ontology() -> SnapshotStore {
    SnapshotStore::load(fixture("minimed/ontology.jsonl")).unwrap()
}

/// Definition line for a single concept looked up by exact name.
pub fn render_definitions(store: &SnapshotStore, name: &str) -> String {
    let hit = link_concept(name, store).unwrap().expect("concept in snapshot");
    serialize_definitions(&[fetch_concept(&hit, store).unwrap()])
}

/// Pruned relation block for a single concept looked up by exact name.
pub fn render_relations(store: &SnapshotStore, name: &str) -> String {
    let hit = link_concept(name, store).unwrap().expect("concept in snapshot");
    let graph = fetch_neighborhood(&hit.cui, Some(&hit.name), store, 100).unwrap();
    serialize_relations(&[prune_edges(&graph, &RelationFilter::default())]).unwrap()
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("golden/{name}"))).unwrap()
}

// ---------------------------------------------------------------- graphs

use bmq_core::ontology::{Cui, RelationLabel, SemanticGraph};

/// Labels a backend might return: the whitelist, qualified variants of
/// whitelisted codes, and unrelated codes.
pub const LABEL_POOL: &[&str] = &[
    "CHD",
    "PAR",
    "SY",
    "RO",
    "RO:has_associated_morphology",
    "RO:may_be_diagnosed_by",
    "CHD:isa",
    "PAR:inverse_isa",
    "RB",
    "RN",
    "AQ",
    "QB",
    "SIB",
    "RQ",
];

pub const WHITELIST: &[&str] = &["CHD", "PAR", "SY", "RO", "RO:has_associated_morphology"];

pub fn random_graph(rng: &mut ChaCha8Rng) -> SemanticGraph {
    let center = Cui::new(format!("C{:07}", rng.gen_range(0..1000))).unwrap();
    let mut g = SemanticGraph::new(center.clone(), "center");
    for _ in 0..rng.gen_range(0..30) {
        let mut n = rng.gen_range(1000..1040);
        if n == 1000 {
            n = 1001;
        }
        let to = Cui::new(format!("C{n:07}")).unwrap();
        let label = LABEL_POOL[rng.gen_range(0..LABEL_POOL.len())];
        g.add_edge(to, format!("n{n}"), RelationLabel::parse(label));
    }
    g
}

// ---------------------------------------------------------------- text

const WORDS: &[&str] = &[
    "fever", "insulin", "lymph", "breast", "cancer", "renal", "cardiac", "vitamin", "dose",
    "trial", "chronic", "acute", "of", "the", "and", "gene", "cell", "tumor", "blood", "liver",
];

pub fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------- pipeline fixture

use bmq_core::corpus::{load_corpus, load_queries, Query};
use bmq_core::index::{Analyzer, InvertedIndex};
use bmq_core::llmgate::{MockChat, MockMode, Script};

pub fn minimed_index() -> InvertedIndex {
    InvertedIndex::build(&load_corpus(fixture("minimed/corpus.jsonl")).unwrap(), Analyzer::default()).unwrap()
}

pub fn minimed_queries() -> Vec<Query> {
    load_queries(fixture("minimed/queries.jsonl")).unwrap()
}

pub fn minimed_qrels() -> Qrels {
    bmq_core::corpus::load_qrels(fixture("minimed/qrels/test.tsv")).unwrap()
}

pub fn minimed_llm() -> MockChat {
    let script = Script::load(&fixture("minimed/llm-script.json")).unwrap();
    MockChat::new(MockMode::Canned(script))
}

// ---------------------------------------------------------------- public benchmarks

use bmq_core::corpus::DatasetLayout;
use bmq_core::evalkit::{evaluate, Gain};
use bmq_core::index::Bm25Params;
use bmq_core::runfile::RunResult;

pub const DATA_DIR_ENV: &str = "BMQ_DATA_DIR";

/// Published plain-BM25 NDCG@10 targets: (dataset dir, target, tolerance, required).
pub const BASELINE_TARGETS: &[(&str, f64, f64, bool)] = &[
    ("nfcorpus", 0.325, 0.010, true),
    ("scifact", 0.665, 0.010, true),
    ("trec-covid", 0.656, 0.015, false),
];

#[derive(Debug)]
pub struct BaselineResult {
    pub dataset: &'static str,
    pub target: f64,
    pub tolerance: f64,
    pub linear: f64,
    pub exponential: f64,
}

impl BaselineResult {
    pub fn linear_ok(&self) -> bool {
        (self.linear - self.target).abs() <= self.tolerance
    }
    pub fn exponential_ok(&self) -> bool {
        (self.exponential - self.target).abs() <= self.tolerance
    }
}

/// Plain BM25 NDCG@10 under both gain conventions, or `None` when the
/// dataset is not present locally.
pub fn plain_baseline(root: &std::path::Path, dataset: &'static str, target: f64, tolerance: f64) -> Option<BaselineResult> {
    let layout = DatasetLayout::new(root.join(dataset));
    if !layout.corpus().is_file() {
        return None;
    }
    let corpus = load_corpus(layout.corpus()).unwrap();
    let qrels = bmq_core::corpus::load_qrels(layout.qrels("test")).unwrap();
    let queries: Vec<Query> = load_queries(layout.queries())
        .unwrap()
        .into_iter()
        .filter(|q| qrels.for_query(&q.query_id).is_some())
        .collect();
    let index = InvertedIndex::build(&corpus, Analyzer::default()).unwrap();
    let mut run = RunResult::new("plain_bm25");
    for q in &queries {
        let hits = index.search(&q.text, 1000, Bm25Params::default());
        run.push(q.query_id.clone(), hits.into_iter().map(|h| (h.doc_id, h.score)).collect());
    }
    let linear = evaluate(&run, &qrels, 10, Gain::Linear).unwrap().mean.ndcg;
    let exponential = evaluate(&run, &qrels, 10, Gain::Exponential).unwrap().mean.ndcg;
    Some(BaselineResult {
        dataset,
        target,
        tolerance,
        linear,
        exponential,
    })
}

/// A convention is accepted if it hits every required dataset; the
/// criterion fails when neither does.
pub fn baseline_verdict(results: &[BaselineResult]) -> Result<&'static str, String> {
    let required: Vec<_> = results
        .iter()
        .filter(|r| BASELINE_TARGETS.iter().any(|t| t.0 == r.dataset && t.3))
        .collect();
    if required.is_empty() {
        return Err("no required dataset present".into());
    }
    if required.iter().all(|r| r.linear_ok()) {
        Ok("linear")
    } else if required.iter().all(|r| r.exponential_ok()) {
        Ok("exponential")
    } else {
        Err(required
            .iter()
            .map(|r| format!("{} linear={:.4} exp={:.4} target={}", r.dataset, r.linear, r.exponential, r.target))
            .collect::<Vec<_>>()
            .join("; "))
    }
}

// ---------------------------------------------------------------- invariant checks

/// First violated pruning invariant for `g`, if any.
pub fn pruning_violation(g: &SemanticGraph) -> Option<String> {
    use std::collections::BTreeSet;
    let f = RelationFilter::default();
    let p = prune_edges(g, &f);
    if prune_edges(&p, &f) != p {
        return Some("not idempotent".into());
    }
    let mut it = g.edges.iter();
    if !p.edges.iter().all(|e| it.any(|o| o == e)) {
        return Some("edges are not an ordered subset".into());
    }
    let kept = g
        .edges
        .iter()
        .filter(|e| WHITELIST.contains(&e.label.canonical().as_str()))
        .count();
    if kept != p.edges.len() {
        return Some(format!("kept {} edges, whitelist admits {kept}", p.edges.len()));
    }
    if p.nodes[0].cui != g.center {
        return Some("center moved".into());
    }
    let expected: BTreeSet<_> = p.edges.iter().map(|e| e.to.clone()).chain([g.center.clone()]).collect();
    let got: BTreeSet<_> = p.nodes.iter().map(|n| n.cui.clone()).collect();
    if got != expected {
        return Some("dangling or missing nodes".into());
    }
    if serialize_relations(&[p]).is_err() {
        return Some("pruned graph does not serialize".into());
    }
    None
}

fn token_counts(text: &str) -> std::collections::HashMap<String, usize> {
    let mut m = std::collections::HashMap::new();
    for t in bmq_core::index::tokenize(text) {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Whether tokens(compose(q, p, alpha)) == alpha * tokens(q) + tokens(p).
pub fn composition_violation(q: &str, p: Option<&str>, alpha: u32) -> Option<String> {
    let composed = bmq_core::pipeline::compose_expanded_query(q, p, alpha).ok()?;
    let mut want = std::collections::HashMap::new();
    for (t, c) in token_counts(q) {
        *want.entry(t).or_insert(0) += c * alpha as usize;
    }
    for (t, c) in p.map(token_counts).unwrap_or_default() {
        *want.entry(t).or_insert(0) += c;
    }
    (token_counts(&composed) != want).then(|| format!("multiset mismatch for q={q:?} alpha={alpha}"))
}
