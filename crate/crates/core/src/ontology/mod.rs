//! UMLS concept linking, definition retrieval and one-hop relation graphs.
//!
//! Everything goes through [`OntologyBackend`], which has three
//! implementations: the live REST client ([`UmlsClient`]), an offline
//! JSON-lines snapshot ([`SnapshotStore`]), and a disk-caching wrapper
//! ([`CachedBackend`]) that can sit in front of either.

mod cache;
mod snapshot;
mod umls;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::CachedBackend;
pub use snapshot::{materialize_snapshot, write_records, SnapshotRecord, SnapshotRelation, SnapshotStore};
pub use umls::{UmlsClient, UmlsConfig, UMLS_API_KEY_ENV, UMLS_DEFAULT_BASE};

/// Default cap on relations kept per concept.
pub const DEFAULT_MAX_EDGES: usize = 50;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("ontology backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("ontology backend rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("invalid CUI `{0}` (expected C followed by 7 digits)")]
    InvalidCui(String),
    #[error("term is empty after trimming")]
    EmptyTerm,
    #[error("snapshot {path}:{line}: {message}")]
    Snapshot {
        path: String,
        line: usize,
        message: String,
    },
    #[error("ontology cache: {0}")]
    Cache(String),
}

impl OntologyError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::BackendUnavailable(_) | Self::RateLimited { .. })
    }
}

/// UMLS Concept Unique Identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cui(String);

impl Cui {
    pub fn new(value: impl Into<String>) -> Result<Self, OntologyError> {
        let value = value.into();
        let b = value.as_bytes();
        if b.len() == 8 && b[0] == b'C' && b[1..].iter().all(u8::is_ascii_digit) {
            Ok(Self(value))
        } else {
            Err(OntologyError::InvalidCui(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Cui {
    type Error = OntologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<Cui> for String {
    fn from(c: Cui) -> String {
        c.0
    }
}

impl FromStr for Cui {
    type Err = OntologyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for Cui {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The four vocabularies definitions are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceVocabulary {
    #[serde(rename = "MSH")]
    Msh,
    #[serde(rename = "SNOMEDCT_US")]
    SnomedCtUs,
    #[serde(rename = "NCI")]
    Nci,
    #[serde(rename = "CSP")]
    Csp,
}

impl SourceVocabulary {
    pub const ALL: [SourceVocabulary; 4] = [Self::Msh, Self::SnomedCtUs, Self::Nci, Self::Csp];

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "MSH" => Some(Self::Msh),
            "SNOMEDCT_US" => Some(Self::SnomedCtUs),
            "NCI" => Some(Self::Nci),
            "CSP" => Some(Self::Csp),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Self::Msh => "MSH",
            Self::SnomedCtUs => "SNOMEDCT_US",
            Self::Nci => "NCI",
            Self::Csp => "CSP",
        }
    }

    /// Human-readable source name used in serialized prompt context.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Msh => "MeSH",
            Self::SnomedCtUs => "SNOMED CT, US Edition",
            Self::Nci => "National Cancer Institute (NCI) Thesaurus",
            Self::Csp => "CRISP Thesaurus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionEntry {
    pub text: String,
    pub source: SourceVocabulary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub cui: Cui,
    pub preferred_name: String,
    pub definitions: Vec<DefinitionEntry>,
}

/// A relation type, optionally refined by a relation attribute
/// (`RO` vs `RO:has_associated_morphology`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RelationLabel {
    pub code: String,
    pub qualifier: Option<String>,
}

impl RelationLabel {
    pub fn new(code: impl Into<String>, qualifier: Option<&str>) -> Self {
        Self {
            code: code.into(),
            qualifier: qualifier.filter(|q| !q.is_empty()).map(str::to_string),
        }
    }

    pub fn bare(code: impl Into<String>) -> Self {
        Self::new(code, None)
    }

    /// Parses `code` or `code:qualifier`.
    pub fn parse(s: &str) -> Self {
        match s.split_once(':') {
            Some((code, q)) => Self::new(code, Some(q)),
            None => Self::bare(s),
        }
    }

    pub fn canonical(&self) -> String {
        match &self.qualifier {
            Some(q) => format!("{}:{}", self.code, q),
            None => self.code.clone(),
        }
    }
}

impl TryFrom<String> for RelationLabel {
    type Error = std::convert::Infallible;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Ok(Self::parse(&s))
    }
}

impl From<RelationLabel> for String {
    fn from(l: RelationLabel) -> String {
        l.canonical()
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub cui: Cui,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: Cui,
    pub to: Cui,
    pub label: RelationLabel,
}

/// A concept and its direct neighbours. `nodes[0]` is always the center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticGraph {
    pub center: Cui,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl SemanticGraph {
    pub fn new(center: Cui, name: impl Into<String>) -> Self {
        Self {
            nodes: vec![GraphNode {
                cui: center.clone(),
                name: name.into(),
            }],
            center,
            edges: Vec::new(),
        }
    }

    pub fn center_name(&self) -> &str {
        &self.nodes[0].name
    }

    pub fn node_name(&self, cui: &Cui) -> Option<&str> {
        self.nodes
            .iter()
            .find(|n| &n.cui == cui)
            .map(|n| n.name.as_str())
    }

    pub fn contains_node(&self, cui: &Cui) -> bool {
        self.nodes.iter().any(|n| &n.cui == cui)
    }

    /// Adds an edge from the center, registering the neighbour if new.
    pub fn add_edge(&mut self, to: Cui, to_name: impl Into<String>, label: RelationLabel) {
        if !self.contains_node(&to) {
            self.nodes.push(GraphNode {
                cui: to.clone(),
                name: to_name.into(),
            });
        }
        self.edges.push(GraphEdge {
            from: self.center.clone(),
            to,
            label,
        });
    }
}

/// Relation whitelist applied before serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationFilter {
    whitelist: BTreeSet<String>,
}

impl Default for RelationFilter {
    fn default() -> Self {
        Self {
            whitelist: ["CHD", "PAR", "SY", "RO", "RO:has_associated_morphology"]
                .into_iter()
                .map(str::to_string)
                .collect(),
        }
    }
}

impl RelationFilter {
    pub fn allows(&self, label: &RelationLabel) -> bool {
        self.whitelist.contains(&label.canonical())
    }

    pub fn labels(&self) -> impl Iterator<Item = RelationLabel> + '_ {
        self.whitelist.iter().map(|s| RelationLabel::parse(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptHit {
    pub cui: Cui,
    pub name: String,
}

/// A definition as returned by a backend, before vocabulary filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDefinition {
    pub text: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRelation {
    pub to: Cui,
    pub to_name: String,
    pub label: RelationLabel,
}

/// Primitive lookups every ontology source provides.
pub trait OntologyBackend: Send + Sync {
    /// Exact-string concept search, results in backend rank order.
    fn search_exact(&self, term: &str) -> Result<Vec<ConceptHit>, OntologyError>;
    /// All definitions attached to a concept, any vocabulary.
    fn definitions(&self, cui: &Cui) -> Result<Vec<RawDefinition>, OntologyError>;
    /// Direct relations of a concept, at most `limit`, in backend order.
    fn relations(&self, cui: &Cui, limit: usize) -> Result<Vec<RawRelation>, OntologyError>;
    /// Preferred name of a concept.
    fn concept_name(&self, cui: &Cui) -> Result<Option<String>, OntologyError>;
}

impl<T: OntologyBackend + ?Sized> OntologyBackend for std::sync::Arc<T> {
    fn search_exact(&self, term: &str) -> Result<Vec<ConceptHit>, OntologyError> {
        (**self).search_exact(term)
    }
    fn definitions(&self, cui: &Cui) -> Result<Vec<RawDefinition>, OntologyError> {
        (**self).definitions(cui)
    }
    fn relations(&self, cui: &Cui, limit: usize) -> Result<Vec<RawRelation>, OntologyError> {
        (**self).relations(cui, limit)
    }
    fn concept_name(&self, cui: &Cui) -> Result<Option<String>, OntologyError> {
        (**self).concept_name(cui)
    }
}

/// Links a free-text term to the top exact-match concept, if any.
pub fn link_concept(
    term: &str,
    backend: &dyn OntologyBackend,
) -> Result<Option<ConceptHit>, OntologyError> {
    let term = term.trim();
    if term.is_empty() {
        return Err(OntologyError::EmptyTerm);
    }
    Ok(backend.search_exact(term)?.into_iter().next())
}

/// Definitions from the four accepted vocabularies, backend order preserved.
pub fn fetch_definitions(
    cui: &Cui,
    backend: &dyn OntologyBackend,
) -> Result<Vec<DefinitionEntry>, OntologyError> {
    Ok(backend
        .definitions(cui)?
        .into_iter()
        .filter_map(|d| {
            SourceVocabulary::from_code(&d.source).map(|source| DefinitionEntry {
                text: d.text,
                source,
            })
        })
        .collect())
}

pub fn fetch_concept(
    hit: &ConceptHit,
    backend: &dyn OntologyBackend,
) -> Result<Concept, OntologyError> {
    Ok(Concept {
        cui: hit.cui.clone(),
        preferred_name: hit.name.clone(),
        definitions: fetch_definitions(&hit.cui, backend)?,
    })
}

/// Unpruned one-hop graph around `cui`, at most `max_edges` edges.
pub fn fetch_neighborhood(
    cui: &Cui,
    center_name: Option<&str>,
    backend: &dyn OntologyBackend,
    max_edges: usize,
) -> Result<SemanticGraph, OntologyError> {
    let name = match center_name {
        Some(n) => n.to_string(),
        None => backend
            .concept_name(cui)?
            .unwrap_or_else(|| cui.to_string()),
    };
    let mut graph = SemanticGraph::new(cui.clone(), name);
    for rel in backend.relations(cui, max_edges)?.into_iter().take(max_edges) {
        graph.add_edge(rel.to, rel.to_name, rel.label);
    }
    Ok(graph)
}

/// Drops non-whitelisted edges and any neighbour left without an edge.
pub fn prune_edges(graph: &SemanticGraph, filter: &RelationFilter) -> SemanticGraph {
    let edges: Vec<GraphEdge> = graph
        .edges
        .iter()
        .filter(|e| filter.allows(&e.label))
        .cloned()
        .collect();
    let nodes = graph
        .nodes
        .iter()
        .filter(|n| n.cui == graph.center || edges.iter().any(|e| e.from == n.cui || e.to == n.cui))
        .cloned()
        .collect();
    SemanticGraph {
        center: graph.center.clone(),
        nodes,
        edges,
    }
}
