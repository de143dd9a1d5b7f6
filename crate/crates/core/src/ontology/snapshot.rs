//! Offline ontology store backed by a JSON-lines file, one concept per line:
//!
//! ```json
//! {"cui":"C0029118","name":"Opportunistic Infections","terms":["opportunistic infection"],
//!  "definitions":[{"text":"...","source":"MSH"}],
//!  "relations":[{"to":"C...","to_name":"...","label":"PAR"}]}
//! ```
//!
//! `terms` is optional and lists extra strings that resolve to the concept
//! under exact match. Matching ignores case and surrounding whitespace.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    link_concept, ConceptHit, Cui, OntologyBackend, OntologyError, RawDefinition, RawRelation,
    RelationLabel,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRelation {
    pub to: Cui,
    pub to_name: String,
    pub label: RelationLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub cui: Cui,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<String>,
    #[serde(default)]
    pub definitions: Vec<RawDefinition>,
    #[serde(default)]
    pub relations: Vec<SnapshotRelation>,
}

#[derive(Debug, Clone, Default)]
pub struct SnapshotStore {
    records: Vec<SnapshotRecord>,
    by_cui: HashMap<Cui, usize>,
    by_string: HashMap<String, Vec<usize>>,
    neighbor_names: HashMap<Cui, String>,
}

fn match_key(s: &str) -> String {
    s.trim().to_lowercase()
}

impl SnapshotStore {
    pub fn from_records(records: Vec<SnapshotRecord>) -> Result<Self, OntologyError> {
        let mut store = Self::default();
        for (i, rec) in records.into_iter().enumerate() {
            if store.by_cui.contains_key(&rec.cui) {
                return Err(OntologyError::Snapshot {
                    path: "<memory>".into(),
                    line: i + 1,
                    message: format!("duplicate record for {}", rec.cui),
                });
            }
            store.push(rec);
        }
        Ok(store)
    }

    fn push(&mut self, rec: SnapshotRecord) {
        let idx = self.records.len();
        self.by_cui.insert(rec.cui.clone(), idx);
        let mut keys: Vec<String> = std::iter::once(&rec.name)
            .chain(rec.terms.iter())
            .map(|s| match_key(s))
            .collect();
        keys.dedup();
        for k in keys {
            let slot = self.by_string.entry(k).or_default();
            if !slot.contains(&idx) {
                slot.push(idx);
            }
        }
        for r in &rec.relations {
            self.neighbor_names
                .entry(r.to.clone())
                .or_insert_with(|| r.to_name.clone());
        }
        self.records.push(rec);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| OntologyError::Snapshot {
            path: display.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut store = Self::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| OntologyError::Snapshot {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SnapshotRecord =
                serde_json::from_str(&line).map_err(|e| OntologyError::Snapshot {
                    path: display.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if store.by_cui.contains_key(&rec.cui) {
                return Err(OntologyError::Snapshot {
                    path: display,
                    line: i + 1,
                    message: format!("duplicate record for {}", rec.cui),
                });
            }
            store.push(rec);
        }
        Ok(store)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        write_records(&self.records, path)
    }

    pub fn records(&self) -> &[SnapshotRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, cui: &Cui) -> Option<&SnapshotRecord> {
        self.by_cui.get(cui).map(|&i| &self.records[i])
    }
}

pub fn write_records(records: &[SnapshotRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

impl OntologyBackend for SnapshotStore {
    fn search_exact(&self, term: &str) -> Result<Vec<ConceptHit>, OntologyError> {
        Ok(self
            .by_string
            .get(&match_key(term))
            .map(|idxs| {
                idxs.iter()
                    .map(|&i| ConceptHit {
                        cui: self.records[i].cui.clone(),
                        name: self.records[i].name.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default())
    }

    fn definitions(&self, cui: &Cui) -> Result<Vec<RawDefinition>, OntologyError> {
        Ok(self.get(cui).map(|r| r.definitions.clone()).unwrap_or_default())
    }

    fn relations(&self, cui: &Cui, limit: usize) -> Result<Vec<RawRelation>, OntologyError> {
        Ok(self
            .get(cui)
            .map(|r| {
                r.relations
                    .iter()
                    .take(limit)
                    .map(|x| RawRelation {
                        to: x.to.clone(),
                        to_name: x.to_name.clone(),
                        label: x.label.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default())
    }

    fn concept_name(&self, cui: &Cui) -> Result<Option<String>, OntologyError> {
        Ok(self
            .get(cui)
            .map(|r| r.name.clone())
            .or_else(|| self.neighbor_names.get(cui).cloned()))
    }
}

/// Resolves `terms` against `backend` and captures everything the pipeline
/// later reads for them. Terms that link to the same concept share a record.
pub fn materialize_snapshot<'a>(
    backend: &dyn OntologyBackend,
    terms: impl IntoIterator<Item = &'a str>,
    max_edges: usize,
) -> Result<Vec<SnapshotRecord>, OntologyError> {
    let mut records: Vec<SnapshotRecord> = Vec::new();
    let mut index: HashMap<Cui, usize> = HashMap::new();
    for term in terms {
        let term = term.trim();
        if term.is_empty() {
            continue;
        }
        let Some(hit) = link_concept(term, backend)? else {
            log::info!("no exact match for `{term}`");
            continue;
        };
        if let Some(&i) = index.get(&hit.cui) {
            let rec = &mut records[i];
            if !rec.name.eq_ignore_ascii_case(term) && !rec.terms.iter().any(|t| t == term) {
                rec.terms.push(term.to_string());
            }
            continue;
        }
        let definitions = backend.definitions(&hit.cui)?;
        let relations = backend
            .relations(&hit.cui, max_edges)?
            .into_iter()
            .take(max_edges)
            .map(|r| SnapshotRelation {
                to: r.to,
                to_name: r.to_name,
                label: r.label,
            })
            .collect();
        let terms = if hit.name.eq_ignore_ascii_case(term) {
            Vec::new()
        } else {
            vec![term.to_string()]
        };
        index.insert(hit.cui.clone(), records.len());
        records.push(SnapshotRecord {
            cui: hit.cui,
            name: hit.name,
            terms,
            definitions,
            relations,
        });
    }
    Ok(records)
}
