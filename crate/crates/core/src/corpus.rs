//! BEIR-style dataset ingestion: `corpus.jsonl`, `queries.jsonl` and
//! `qrels/*.tsv`.
//!
//! Raw text is stored exactly as read. Normalization is the tokenizer's job.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed JSON: {message}")]
    MalformedJson {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}: bad qrels header (expected `query-id\\tcorpus-id\\tscore`, got `{found}`)")]
    BadHeader { path: PathBuf, found: String },
    #[error("{path}:{line}: relevance grade `{value}` is not a non-negative integer")]
    NonIntegerGrade {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{path}:{line}: malformed qrels row (expected 3 tab-separated fields)")]
    MalformedRow { path: PathBuf, line: usize },
    #[error("{path}:{line}: duplicate judgment for ({query_id}, {doc_id})")]
    DuplicateJudgment {
        path: PathBuf,
        line: usize,
        query_id: String,
        doc_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "text")]
    pub body: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    /// The text handed to the tokenizer: title, one space, body.
    pub fn indexed_text(&self) -> String {
        let mut s = String::with_capacity(self.title.len() + 1 + self.body.len());
        s.push_str(&self.title);
        s.push(' ');
        s.push_str(&self.body);
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus from in-memory documents, rejecting empty or duplicate ids.
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.doc_id.is_empty() {
                return Err(CorpusError::MissingField {
                    path: PathBuf::from("<memory>"),
                    line: i + 1,
                    field: "_id",
                });
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    path: PathBuf::from("<memory>"),
                    line: i + 1,
                    id: d.doc_id.clone(),
                });
            }
        }
        Ok(Self { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub query_id: String,
    pub text: String,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            text: text.into(),
        }
    }
}

/// Graded relevance judgments. Absent pairs are grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, returning `false` if the pair was already judged.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) -> bool {
        let per_query = self.judgments.entry(query_id.into()).or_default();
        match per_query.entry(doc_id.into()) {
            std::collections::btree_map::Entry::Occupied(_) => false,
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(grade);
                true
            }
        }
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    /// Total number of (query, doc) judgments.
    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments.iter().flat_map(|(q, docs)| {
            docs.iter()
                .map(move |(d, g)| (q.as_str(), d.as_str(), *g))
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a JSON-lines file, calling `f` with (1-based line number, object).
/// Blank lines are skipped.
fn for_each_json_line<F>(path: &Path, mut f: F) -> Result<(), CorpusError>
where
    F: FnMut(usize, serde_json::Map<String, serde_json::Value>) -> Result<(), CorpusError>,
{
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedJson {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        match value {
            serde_json::Value::Object(map) => f(lineno, map)?,
            _ => {
                return Err(CorpusError::MalformedJson {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: "expected a JSON object".into(),
                })
            }
        }
    }
    Ok(())
}

fn string_field(
    map: &serde_json::Map<String, serde_json::Value>,
    field: &'static str,
    path: &Path,
    line: usize,
) -> Result<Option<String>, CorpusError> {
    match map.get(field) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
        // BEIR ids are occasionally numeric.
        Some(serde_json::Value::Number(n)) => Ok(Some(n.to_string())),
        Some(other) => Err(CorpusError::MalformedJson {
            path: path.to_path_buf(),
            line,
            message: format!("field `{field}` must be a string, got {other}"),
        }),
    }
}

fn required(
    map: &serde_json::Map<String, serde_json::Value>,
    field: &'static str,
    path: &Path,
    line: usize,
) -> Result<String, CorpusError> {
    string_field(map, field, path, line)?.ok_or_else(|| CorpusError::MissingField {
        path: path.to_path_buf(),
        line,
        field,
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for_each_json_line(path, |line, map| {
        let doc_id = required(&map, "_id", path, line)?;
        if doc_id.is_empty() {
            return Err(CorpusError::MissingField {
                path: path.to_path_buf(),
                line,
                field: "_id",
            });
        }
        let body = required(&map, "text", path, line)?;
        let title = string_field(&map, "title", path, line)?.unwrap_or_default();
        if !seen.insert(doc_id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: doc_id,
            });
        }
        docs.push(Document { doc_id, title, body });
        Ok(())
    })?;
    Ok(Corpus { docs })
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, CorpusError> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for_each_json_line(path, |line, map| {
        let query_id = required(&map, "_id", path, line)?;
        if query_id.is_empty() {
            return Err(CorpusError::MissingField {
                path: path.to_path_buf(),
                line,
                field: "_id",
            });
        }
        let text = required(&map, "text", path, line)?;
        if !seen.insert(query_id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: query_id,
            });
        }
        queries.push(Query { query_id, text });
        Ok(())
    })?;
    Ok(queries)
}

pub const QRELS_HEADER: &str = "query-id\tcorpus-id\tscore";

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(io_err(path))?,
        None => {
            return Err(CorpusError::BadHeader {
                path: path.to_path_buf(),
                found: String::new(),
            })
        }
    };
    if header.trim_end_matches('\r') != QRELS_HEADER {
        return Err(CorpusError::BadHeader {
            path: path.to_path_buf(),
            found: header,
        });
    }
    let mut qrels = Qrels::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 2;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::MalformedRow {
                path: path.to_path_buf(),
                line: lineno,
            });
        }
        let grade: u32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| CorpusError::NonIntegerGrade {
                path: path.to_path_buf(),
                line: lineno,
                value: fields[2].to_string(),
            })?;
        if !qrels.insert(fields[0], fields[1], grade) {
            return Err(CorpusError::DuplicateJudgment {
                path: path.to_path_buf(),
                line: lineno,
                query_id: fields[0].to_string(),
                doc_id: fields[1].to_string(),
            });
        }
    }
    Ok(qrels)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_jsonl(path.as_ref(), corpus.documents())
}

pub fn write_queries(queries: &[Query], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_jsonl(path.as_ref(), queries)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("plain structs always serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{QRELS_HEADER}").map_err(io_err(path))?;
    for (q, d, g) in qrels.iter() {
        writeln!(w, "{q}\t{d}\t{g}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// A BEIR dataset directory: `corpus.jsonl`, `queries.jsonl`, `qrels/<split>.tsv`.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join("queries.jsonl")
    }

    pub fn qrels(&self, split: &str) -> PathBuf {
        self.root.join("qrels").join(format!("{split}.tsv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_tmp("");
        assert_eq!(load_corpus(f.path()).unwrap().len(), 0);
    }

    #[test]
    fn minimal_record() {
        let f = write_tmp(r#"{"_id":"d1","title":"","text":"aspirin"}"#);
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.documents(), &[Document::new("d1", "", "aspirin")]);
        assert_eq!(c.documents()[0].indexed_text(), " aspirin");
    }

    #[test]
    fn order_preserved_and_extra_fields_ignored() {
        let f = write_tmp(
            "{\"_id\":\"b\",\"title\":\"T\",\"text\":\"x\",\"metadata\":{\"url\":1}}\n{\"_id\":\"a\",\"title\":\"U\",\"text\":\"y\"}\n",
        );
        let c = load_corpus(f.path()).unwrap();
        let ids: Vec<_> = c.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
    }

    #[test]
    fn missing_text_is_an_error() {
        let f = write_tmp("{\"_id\":\"d1\",\"title\":\"t\"}\n");
        match load_corpus(f.path()) {
            Err(CorpusError::MissingField { field: "text", line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_id_is_an_error() {
        let f = write_tmp("{\"text\":\"t\"}\n");
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::MissingField { field: "_id", .. })
        ));
    }

    #[test]
    fn duplicate_id_reports_line() {
        let f = write_tmp("{\"_id\":\"d\",\"text\":\"a\"}\n{\"_id\":\"d\",\"text\":\"b\"}\n");
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_tmp("{\"_id\":\"d\",\"text\":\"a\"}\n{oops\n");
        let err = load_corpus(f.path()).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedJson { line: 2, .. }));
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn single_query() {
        let f = write_tmp("{\"_id\":\"q1\",\"text\":\"BPH\"}\n");
        assert_eq!(load_queries(f.path()).unwrap(), vec![Query::new("q1", "BPH")]);
    }

    #[test]
    fn qrels_row_maps_to_grade() {
        let f = write_tmp("query-id\tcorpus-id\tscore\nq1\td1\t2\n");
        let q = load_qrels(f.path()).unwrap();
        assert_eq!(q.grade("q1", "d1"), 2);
        assert_eq!(q.grade("q1", "zz"), 0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn qrels_header_only() {
        let f = write_tmp("query-id\tcorpus-id\tscore\n");
        assert!(load_qrels(f.path()).unwrap().is_empty());
    }

    #[test]
    fn qrels_negative_grade_rejected() {
        let f = write_tmp("query-id\tcorpus-id\tscore\nq1\td1\t-1\n");
        assert!(matches!(
            load_qrels(f.path()),
            Err(CorpusError::NonIntegerGrade { line: 2, .. })
        ));
    }

    #[test]
    fn qrels_bad_header() {
        let f = write_tmp("qid\tdocid\trel\n");
        assert!(matches!(load_qrels(f.path()), Err(CorpusError::BadHeader { .. })));
    }

    #[test]
    fn qrels_duplicate_rejected() {
        let f = write_tmp("query-id\tcorpus-id\tscore\nq\td\t1\nq\td\t2\n");
        assert!(matches!(
            load_qrels(f.path()),
            Err(CorpusError::DuplicateJudgment { line: 3, .. })
        ));
    }
}
