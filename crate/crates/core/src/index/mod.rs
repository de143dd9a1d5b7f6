//! Sparse retrieval engine: tokenizer, inverted index, BM25 scoring and
//! top-k search.
//!
//! Query tokens are scored with their multiplicity: a term that occurs `n`
//! times in the query contributes `n` times its per-term BM25 weight. This is
//! what makes repeating the original query inside an expanded query act as a
//! weight.

mod porter;
mod snapshot;
mod tokenize;

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

pub use porter::stem;
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use tokenize::{tokenize, Analyzer, ENGLISH_STOPWORDS};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("document ordinal {ordinal} out of range (index holds {doc_count} documents)")]
    OrdinalOutOfRange { ordinal: usize, doc_count: usize },
    #[error("index snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid index snapshot: {0}")]
    BadSnapshot(String),
}

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Immutable inverted index. The vocabulary is kept in lexicographic order so
/// that two builds over the same corpus are identical regardless of how the
/// work was split across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    analyzer: Analyzer,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    vocab: Vec<String>,
    postings: Vec<Vec<Posting>>,
    lookup: HashMap<String, usize>,
}

/// Lucene-style IDF, never negative.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, analyzer: Analyzer) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        // Per-document term counts, computed in parallel but collected in
        // document order.
        let per_doc: Vec<(u32, Vec<(String, u32)>)> = corpus
            .documents()
            .par_iter()
            .map(|doc| {
                let tokens = analyzer.analyze(&doc.indexed_text());
                let len = tokens.len() as u32;
                let mut counts: HashMap<String, u32> = HashMap::new();
                for t in tokens {
                    *counts.entry(t).or_insert(0) += 1;
                }
                let mut counts: Vec<(String, u32)> = counts.into_iter().collect();
                counts.sort_unstable_by(|a, b| a.0.cmp(&b.0));
                (len, counts)
            })
            .collect();

        let mut by_term: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(per_doc.len());
        for (ordinal, (len, counts)) in per_doc.into_iter().enumerate() {
            doc_lengths.push(len);
            for (term, tf) in counts {
                by_term.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf,
                });
            }
        }
        let mut terms: Vec<(String, Vec<Posting>)> = by_term.into_iter().collect();
        terms.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let (vocab, postings): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
        let doc_ids = corpus.iter().map(|d| d.doc_id.clone()).collect();
        Ok(Self::from_parts(analyzer, doc_ids, doc_lengths, vocab, postings))
    }

    pub(crate) fn from_parts(
        analyzer: Analyzer,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        vocab: Vec<String>,
        postings: Vec<Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_len = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        let lookup = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            analyzer,
            doc_ids,
            doc_lengths,
            avg_doc_len,
            vocab,
            postings,
            lookup,
        }
    }

    pub fn analyzer(&self) -> Analyzer {
        self.analyzer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, ordinal: usize) -> Option<&str> {
        self.doc_ids.get(ordinal).map(String::as_str)
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.lookup.get(term).map(|&i| self.postings[i].as_slice())
    }

    pub(crate) fn all_postings(&self) -> &[Vec<Posting>] {
        &self.postings
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).map_or(0, <[Posting]>::len)
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        self.analyzer.analyze(text)
    }

    fn term_weight(&self, idf: f64, tf: u32, ordinal: usize, params: Bm25Params) -> f64 {
        let tf = f64::from(tf);
        let len = f64::from(self.doc_lengths[ordinal]);
        idf * (tf * (params.k1 + 1.0))
            / (tf + params.k1 * (1.0 - params.b + params.b * len / self.avg_doc_len))
    }

    /// BM25 score of one document for an already-tokenized query.
    pub fn bm25_score(
        &self,
        query_tokens: &[String],
        ordinal: usize,
        params: Bm25Params,
    ) -> Result<f64, IndexError> {
        if ordinal >= self.doc_count() {
            return Err(IndexError::OrdinalOutOfRange {
                ordinal,
                doc_count: self.doc_count(),
            });
        }
        let mut score = 0.0;
        for (term, qtf) in query_term_counts(query_tokens) {
            let Some(postings) = self.postings(term) else {
                continue;
            };
            let Ok(pos) = postings.binary_search_by_key(&(ordinal as u32), |p| p.doc) else {
                continue;
            };
            let w = self.term_weight(idf(self.doc_count(), postings.len()), postings[pos].tf, ordinal, params);
            score += qtf as f64 * w;
        }
        Ok(score)
    }

    /// Scores every document containing at least one query token and returns
    /// the best `k`, ties broken by ascending doc id.
    pub fn search_tokens(&self, query_tokens: &[String], k: usize, params: Bm25Params) -> Vec<ScoredHit> {
        if k == 0 {
            return Vec::new();
        }
        let mut acc = vec![0.0f64; self.doc_count()];
        let mut touched: Vec<u32> = Vec::new();
        let mut seen = vec![false; self.doc_count()];
        let n = self.doc_count();
        for (term, qtf) in query_term_counts(query_tokens) {
            let Some(postings) = self.postings(term) else {
                continue;
            };
            let term_idf = idf(n, postings.len());
            let qtf = qtf as f64;
            for p in postings {
                let d = p.doc as usize;
                acc[d] += qtf * self.term_weight(term_idf, p.tf, d, params);
                if !seen[d] {
                    seen[d] = true;
                    touched.push(p.doc);
                }
            }
        }
        let mut candidates: Vec<(u32, f64)> = touched
            .into_iter()
            .map(|d| (d, acc[d as usize]))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        };
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, cmp);
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(cmp);
        candidates
            .into_iter()
            .enumerate()
            .map(|(i, (d, score))| ScoredHit {
                doc_id: self.doc_ids[d as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    pub fn search(&self, query_text: &str, k: usize, params: Bm25Params) -> Vec<ScoredHit> {
        self.search_tokens(&self.analyze(query_text), k, params)
    }
}

/// Distinct query terms in first-occurrence order with their counts.
fn query_term_counts(tokens: &[String]) -> Vec<(&str, usize)> {
    let mut order: Vec<(&str, usize)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        match slot.get(t.as_str()) {
            Some(&i) => order[i].1 += 1,
            None => {
                slot.insert(t.as_str(), order.len());
                order.push((t.as_str(), 1));
            }
        }
    }
    order
}

pub fn build_index(corpus: &Corpus, analyzer: Analyzer) -> Result<InvertedIndex, IndexError> {
    InvertedIndex::build(corpus, analyzer)
}
