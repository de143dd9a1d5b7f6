//! Query expansion and batch retrieval.
//!
//! `expand` runs term extraction, concept linking, context assembly and
//! generation, then composes the expanded query as the original query
//! repeated `alpha` times followed by the expansion text. Any stage that
//! yields nothing, or fails, leaves the query unexpanded.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{serialize_definitions, serialize_relations, ContextError, SerializedContext};
use crate::corpus::Query;
use crate::index::{Bm25Params, InvertedIndex};
use crate::llmgate::{
    extract_terms, generate_pseudo_document, ChatBackend, LlmError, LlmSettings, PseudoDocument,
};
use crate::ontology::{
    fetch_concept, fetch_neighborhood, link_concept, prune_edges, ConceptHit, OntologyBackend,
    OntologyError, RelationFilter, DEFAULT_MAX_EDGES,
};
use crate::runfile::RunResult;

pub const DEFAULT_ALPHA: u32 = 5;
pub const NO_LLM_ALPHA: u32 = 50;
pub const DEFAULT_TOP_K: usize = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PipelineError {
    #[error("alpha must be at least 1")]
    InvalidAlpha,
    #[error("unknown mode `{0}` (expected one of plain_bm25, no_llm, definitions_only, relations_only, full)")]
    UnknownMode(String),
    #[error("mode {0} needs an LLM backend")]
    MissingLlm(Mode),
    #[error("mode {0} needs an ontology backend")]
    MissingOntology(Mode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PlainBm25,
    NoLlm,
    DefinitionsOnly,
    RelationsOnly,
    Full,
}

impl Mode {
    /// Ablation table order.
    pub const ALL: [Mode; 5] = [
        Mode::PlainBm25,
        Mode::NoLlm,
        Mode::DefinitionsOnly,
        Mode::RelationsOnly,
        Mode::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::PlainBm25 => "plain_bm25",
            Mode::NoLlm => "no_llm",
            Mode::DefinitionsOnly => "definitions_only",
            Mode::RelationsOnly => "relations_only",
            Mode::Full => "full",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::PlainBm25 => "BM25 Baseline",
            Mode::NoLlm => "w/o LLM",
            Mode::DefinitionsOnly => "Definitions Only",
            Mode::RelationsOnly => "Relations Only",
            Mode::Full => "Definitions + Relations",
        }
    }

    pub fn default_alpha(self) -> u32 {
        match self {
            Mode::NoLlm => NO_LLM_ALPHA,
            _ => DEFAULT_ALPHA,
        }
    }

    pub fn uses_definitions(self) -> bool {
        matches!(self, Mode::NoLlm | Mode::DefinitionsOnly | Mode::Full)
    }

    pub fn uses_relations(self) -> bool {
        matches!(self, Mode::NoLlm | Mode::RelationsOnly | Mode::Full)
    }

    pub fn needs_backends(self) -> bool {
        self != Mode::PlainBm25
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PipelineError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Explicit alpha; `None` means the mode's default.
    pub alpha: Option<u32>,
    pub cot: bool,
    pub edge_cap: usize,
    pub bm25: Bm25Params,
    pub top_k: usize,
    pub relations: RelationFilter,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_mode(Mode::Full)
    }
}

impl PipelineConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            alpha: None,
            cot: false,
            edge_cap: DEFAULT_MAX_EDGES,
            bm25: Bm25Params::default(),
            top_k: DEFAULT_TOP_K,
            relations: RelationFilter::default(),
        }
    }

    pub fn effective_alpha(&self) -> u32 {
        self.alpha.unwrap_or_else(|| self.mode.default_alpha())
    }
}

#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub llm: Option<&'a dyn ChatBackend>,
    pub ontology: Option<&'a dyn OntologyBackend>,
    pub llm_settings: &'a LlmSettings,
}

impl<'a> Backends<'a> {
    pub fn none(settings: &'a LlmSettings) -> Self {
        Self {
            llm: None,
            ontology: None,
            llm_settings: settings,
        }
    }

    /// Checks that the backends a mode needs are present.
    pub fn check(&self, mode: Mode) -> Result<(), PipelineError> {
        if mode.needs_backends() {
            if self.llm.is_none() {
                return Err(PipelineError::MissingLlm(mode));
            }
            if self.ontology.is_none() {
                return Err(PipelineError::MissingOntology(mode));
            }
        }
        Ok(())
    }
}

/// `alpha` copies of `q` followed by `p`, separated by single spaces. A
/// missing or blank `p` leaves just the copies of `q`.
pub fn compose_expanded_query(q: &str, p: Option<&str>, alpha: u32) -> Result<String, PipelineError> {
    if alpha == 0 {
        return Err(PipelineError::InvalidAlpha);
    }
    let mut parts: Vec<&str> = std::iter::repeat(q).take(alpha as usize).collect();
    if let Some(p) = p.filter(|p| !p.trim().is_empty()) {
        parts.push(p);
    }
    Ok(parts.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extraction,
    Linking,
    Ontology,
    Serialization,
    Generation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageError {
    Llm(LlmError),
    Ontology(String),
    Context(ContextError),
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::Llm(e) => e.fmt(f),
            StageError::Ontology(m) => f.write_str(m),
            StageError::Context(e) => e.fmt(f),
        }
    }
}

impl From<OntologyError> for StageError {
    fn from(e: OntologyError) -> Self {
        StageError::Ontology(e.to_string())
    }
}

/// Why a query went unexpanded.
#[derive(Debug, Clone, PartialEq)]
pub enum Fallback {
    /// The mode does not expand.
    NotExpanded,
    NoTerms,
    NoConcepts,
    EmptyContext,
    Failed { stage: Stage, error: StageError },
}

impl Fallback {
    pub fn is_failure(&self) -> bool {
        matches!(self, Fallback::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedQuery {
    pub original: Query,
    pub alpha: u32,
    /// Text appended after the repeated query.
    pub expansion: Option<String>,
    /// Present when the expansion was generated by the LLM.
    pub pseudo_doc: Option<PseudoDocument>,
    pub composed_text: String,
    pub terms: Vec<String>,
    pub concepts: Vec<ConceptHit>,
    pub context: SerializedContext,
    pub fallback: Option<Fallback>,
    pub degraded_extraction: bool,
}

impl ExpandedQuery {
    fn unexpanded(query: &Query, alpha: u32, fallback: Fallback) -> Self {
        Self {
            original: query.clone(),
            alpha,
            expansion: None,
            pseudo_doc: None,
            composed_text: query.text.clone(),
            terms: Vec::new(),
            concepts: Vec::new(),
            context: SerializedContext::default(),
            fallback: Some(fallback),
            degraded_extraction: false,
        }
    }

    pub fn failure(&self) -> Option<(Stage, &StageError)> {
        match &self.fallback {
            Some(Fallback::Failed { stage, error }) => Some((*stage, error)),
            _ => None,
        }
    }
}

/// Expands one query. Never fails: problems are recorded in `fallback` and
/// the raw query is used instead.
pub fn expand(query: &Query, config: &PipelineConfig, backends: &Backends<'_>) -> ExpandedQuery {
    let alpha = config.effective_alpha().max(1);
    let mode = config.mode;
    let (Some(llm), Some(onto)) = (backends.llm, backends.ontology) else {
        return ExpandedQuery::unexpanded(query, alpha, Fallback::NotExpanded);
    };
    if mode == Mode::PlainBm25 {
        return ExpandedQuery::unexpanded(query, alpha, Fallback::NotExpanded);
    }
    let fail = |out: ExpandedQuery, stage, error| {
        log::warn!("query {}: {:?} stage failed: {}", query.query_id, stage, error);
        ExpandedQuery {
            expansion: None,
            pseudo_doc: None,
            composed_text: query.text.clone(),
            fallback: Some(Fallback::Failed { stage, error }),
            ..out
        }
    };
    let mut out = ExpandedQuery::unexpanded(query, alpha, Fallback::NotExpanded);
    out.fallback = None;

    let extraction = match extract_terms(&query.text, llm, backends.llm_settings) {
        Ok(x) => x,
        Err(e) => return fail(out, Stage::Extraction, StageError::Llm(e)),
    };
    out.degraded_extraction = extraction.degraded;
    out.terms = extraction.terms.terms;
    if out.terms.is_empty() {
        out.fallback = Some(Fallback::NoTerms);
        return out;
    }

    let mut seen = HashSet::new();
    for term in &out.terms {
        match link_concept(term, onto) {
            Ok(Some(hit)) => {
                if seen.insert(hit.cui.clone()) {
                    out.concepts.push(hit);
                }
            }
            Ok(None) | Err(OntologyError::EmptyTerm) => {}
            Err(e) => return fail(out, Stage::Linking, e.into()),
        }
    }
    if out.concepts.is_empty() {
        out.fallback = Some(Fallback::NoConcepts);
        return out;
    }

    let mut concepts = Vec::new();
    let mut graphs = Vec::new();
    for hit in &out.concepts {
        if mode.uses_definitions() {
            match fetch_concept(hit, onto) {
                Ok(c) => concepts.push(c),
                Err(e) => return fail(out, Stage::Ontology, e.into()),
            }
        }
        if mode.uses_relations() {
            match fetch_neighborhood(&hit.cui, Some(&hit.name), onto, config.edge_cap) {
                Ok(g) => graphs.push(prune_edges(&g, &config.relations)),
                Err(e) => return fail(out, Stage::Ontology, e.into()),
            }
        }
    }
    let relations_text = match serialize_relations(&graphs) {
        Ok(t) => t,
        Err(e) => return fail(out, Stage::Serialization, StageError::Context(e)),
    };
    out.context = SerializedContext {
        definitions_text: serialize_definitions(&concepts),
        relations_text,
    };
    if out.context.is_empty() {
        out.fallback = Some(Fallback::EmptyContext);
        return out;
    }

    let expansion = if mode == Mode::NoLlm {
        out.context.combined()
    } else {
        match generate_pseudo_document(&query.text, &out.context, llm, config.cot, backends.llm_settings) {
            Ok(doc) => {
                let text = doc.text.clone();
                out.pseudo_doc = Some(doc);
                text
            }
            Err(e) => return fail(out, Stage::Generation, StageError::Llm(e)),
        }
    };
    out.composed_text = compose_expanded_query(&query.text, Some(&expansion), alpha)
        .expect("alpha is at least 1");
    out.expansion = Some(expansion);
    out
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub run: RunResult,
    pub expansions: Vec<ExpandedQuery>,
}

impl BatchOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &ExpandedQuery> {
        self.expansions.iter().filter(|e| e.failure().is_some())
    }

    pub fn failure_count(&self) -> usize {
        self.failures().count()
    }

    /// Replay misses recorded during the batch, as (query id, error).
    pub fn replay_misses(&self) -> Vec<(&str, &LlmError)> {
        self.expansions
            .iter()
            .filter_map(|e| match e.failure() {
                Some((_, StageError::Llm(err @ LlmError::ReplayMiss { .. }))) => {
                    Some((e.original.query_id.as_str(), err))
                }
                _ => None,
            })
            .collect()
    }
}

/// Expands and searches every query. Queries run in parallel on the current
/// rayon pool; results keep the input order.
pub fn run_batch(
    queries: &[Query],
    index: &InvertedIndex,
    config: &PipelineConfig,
    backends: &Backends<'_>,
) -> BatchOutcome {
    let results: Vec<(ExpandedQuery, Vec<(String, f64)>)> = queries
        .par_iter()
        .map(|q| {
            let ex = expand(q, config, backends);
            let hits = index
                .search(&ex.composed_text, config.top_k, config.bm25)
                .into_iter()
                .map(|h| (h.doc_id, h.score))
                .collect();
            (ex, hits)
        })
        .collect();
    let mut run = RunResult::new(config.mode.name());
    let mut expansions = Vec::with_capacity(results.len());
    for (ex, hits) in results {
        run.push(ex.original.query_id.clone(), hits);
        expansions.push(ex);
    }
    BatchOutcome { run, expansions }
}
