//! Ranked results per query and the TREC run-file format
//! (`qid Q0 docid rank score tag`).

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunFileError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: document `{doc_id}` appears twice for query `{query_id}`")]
    DuplicateDoc {
        line: usize,
        query_id: String,
        doc_id: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query_id: String,
    /// (doc_id, score), best first.
    pub hits: Vec<(String, f64)>,
}

/// Rankings in a fixed query order, tagged with the configuration name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunResult {
    pub tag: String,
    pub queries: Vec<QueryRanking>,
}

impl RunResult {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: Vec::new(),
        }
    }

    pub fn push(&mut self, query_id: impl Into<String>, hits: Vec<(String, f64)>) {
        self.queries.push(QueryRanking {
            query_id: query_id.into(),
            hits,
        });
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryRanking> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    pub fn by_query(&self) -> BTreeMap<&str, &[(String, f64)]> {
        self.queries
            .iter()
            .map(|q| (q.query_id.as_str(), q.hits.as_slice()))
            .collect()
    }

    pub fn line_count(&self) -> usize {
        self.queries.iter().map(|q| q.hits.len()).sum()
    }

    pub fn write_trec(&self, mut w: impl Write) -> std::io::Result<()> {
        for q in &self.queries {
            for (i, (doc, score)) in q.hits.iter().enumerate() {
                writeln!(w, "{} Q0 {} {} {:.6} {}", q.query_id, doc, i + 1, score, self.tag)?;
            }
        }
        Ok(())
    }

    pub fn to_trec_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_trec(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("run file text is UTF-8")
    }

    /// Parses a run file. Queries keep first-appearance order; within a query
    /// hits are ordered by score descending, then by the file's rank.
    pub fn read_trec(r: impl Read) -> Result<Self, RunFileError> {
        let mut order: Vec<String> = Vec::new();
        let mut rows: BTreeMap<String, Vec<(f64, u64, String)>> = BTreeMap::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        let mut tag = String::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(RunFileError::Malformed {
                    line: lineno,
                    message: format!("expected 6 fields, found {}", f.len()),
                });
            }
            let rank: u64 = f[3].parse().map_err(|_| RunFileError::Malformed {
                line: lineno,
                message: format!("rank `{}` is not an integer", f[3]),
            })?;
            let score: f64 = f[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| RunFileError::Malformed {
                    line: lineno,
                    message: format!("score `{}` is not a finite number", f[4]),
                })?;
            let (qid, doc) = (f[0].to_string(), f[2].to_string());
            if !seen.insert((qid.clone(), doc.clone())) {
                return Err(RunFileError::DuplicateDoc {
                    line: lineno,
                    query_id: qid,
                    doc_id: doc,
                });
            }
            if tag.is_empty() {
                tag = f[5].to_string();
            }
            if !rows.contains_key(&qid) {
                order.push(qid.clone());
            }
            rows.entry(qid).or_default().push((score, rank, doc));
        }
        let mut run = RunResult::new(tag);
        for qid in order {
            let mut hits = rows.remove(&qid).unwrap_or_default();
            hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            run.push(qid, hits.into_iter().map(|(s, _, d)| (d, s)).collect());
        }
        Ok(run)
    }
}
