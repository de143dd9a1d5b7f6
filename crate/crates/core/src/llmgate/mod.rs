//! LLM access for term extraction, pseudo-document generation and query
//! paraphrasing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::SerializedContext;
use crate::diskcache::sha256_hex;

mod cache;
mod http;
mod mock;
pub mod prompts;

pub use cache::{cache_key, CacheRecord, CachedChat};
pub use http::{OpenAiChat, OpenAiConfig, LLM_API_BASE_ENV, LLM_API_KEY_ENV, LLM_MODEL_ENV};
pub use mock::{MockChat, MockMode, Script};

pub const GENERATION_MAX_TOKENS: u32 = 512;
pub const EXTRACTION_MAX_TOKENS: u32 = 256;
pub const PARAPHRASE_MAX_TOKENS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("LLM backend rate limited")]
    RateLimited { retry_after: Option<std::time::Duration> },
    #[error("could not parse term list from reply: {0:?}")]
    ParseFailure(String),
    #[error("LLM returned an empty generation")]
    EmptyGeneration,
    #[error("no recorded reply for {kind} prompt on query {query:?} (key {key})")]
    ReplayMiss {
        key: String,
        kind: PromptKind,
        query: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("LLM cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    TermExtraction,
    Generation,
    Paraphrase,
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptKind::TermExtraction => "term_extraction",
            PromptKind::Generation => "generation",
            PromptKind::Paraphrase => "paraphrase",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Which prompt this is and the query it was rendered for. Not sent on
    /// the wire; used by mocks and for diagnostics.
    pub kind: PromptKind,
    pub query: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// System and user text as they are sent, for hashing.
    pub fn rendered_prompt(&self) -> String {
        match &self.system {
            Some(s) => format!("system:\n{s}\nuser:\n{}", self.user),
            None => format!("user:\n{}", self.user),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub cache_hit: bool,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, LlmError> {
        (**self).complete(req)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, LlmError> {
        (**self).complete(req)
    }
}

/// Model id and sampling settings shared by all three prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub model: String,
    pub generation_temperature: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4o".to_string(),
            generation_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSet {
    pub terms: Vec<String>,
}

impl TermSet {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub prompt_hash: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoDocument {
    pub text: String,
    pub provenance: Provenance,
}

/// Result of term extraction, including whether the parser had to give up.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub terms: TermSet,
    pub degraded: bool,
}

/// Finds the last `Terms: [...]` line, or failing that the last bracketed
/// list anywhere, and splits it on commas.
pub fn parse_terms_response(reply: &str) -> Result<TermSet, LlmError> {
    let interior = reply
        .lines()
        .rev()
        .find_map(terms_line_interior)
        .or_else(|| last_bracket_interior(reply))
        .ok_or_else(|| LlmError::ParseFailure(reply.to_string()))?;
    let terms = interior
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    Ok(TermSet { terms })
}

fn terms_line_interior(line: &str) -> Option<&str> {
    let at = line.find("Terms:")?;
    let rest = line[at + "Terms:".len()..].trim_start();
    let rest = rest.strip_prefix('[')?;
    let end = rest.find(']')?;
    Some(&rest[..end])
}

fn last_bracket_interior(text: &str) -> Option<&str> {
    let close = text.rfind(']')?;
    let open = text[..close].rfind('[')?;
    Some(&text[open + 1..close])
}

fn extraction_request(query: &str, user: String, settings: &LlmSettings) -> ChatRequest {
    ChatRequest {
        model: settings.model.clone(),
        system: Some(prompts::EXTRACTION_SYSTEM.to_string()),
        user,
        temperature: 0.0,
        max_tokens: EXTRACTION_MAX_TOKENS,
        kind: PromptKind::TermExtraction,
        query: query.to_string(),
    }
}

pub fn extraction_requests(query: &str, settings: &LlmSettings) -> [ChatRequest; 2] {
    [
        extraction_request(query, prompts::render_extraction_user(query), settings),
        extraction_request(query, prompts::render_extraction_retry(query), settings),
    ]
}

/// Term extraction with one format-enforcing retry. A reply that still does
/// not parse yields an empty set with `degraded` set.
pub fn extract_terms(
    query: &str,
    backend: &dyn ChatBackend,
    settings: &LlmSettings,
) -> Result<Extraction, LlmError> {
    if query.trim().is_empty() {
        return Err(LlmError::InvalidRequest("query text is empty".into()));
    }
    let [first, retry] = extraction_requests(query, settings);
    let reply = backend.complete(&first)?;
    if let Ok(terms) = parse_terms_response(&reply.text) {
        return Ok(Extraction { terms, degraded: false });
    }
    log::debug!("unparseable term reply for {query:?}, retrying");
    let reply = backend.complete(&retry)?;
    match parse_terms_response(&reply.text) {
        Ok(terms) => Ok(Extraction { terms, degraded: false }),
        Err(_) => {
            log::warn!("term extraction for {query:?} failed to parse twice; using no terms");
            Ok(Extraction {
                terms: TermSet::default(),
                degraded: true,
            })
        }
    }
}

pub fn generation_request(
    query: &str,
    context: &SerializedContext,
    cot: bool,
    settings: &LlmSettings,
) -> ChatRequest {
    ChatRequest {
        model: settings.model.clone(),
        system: None,
        user: prompts::render_generation_user(query, context, cot),
        temperature: settings.generation_temperature,
        max_tokens: GENERATION_MAX_TOKENS,
        kind: PromptKind::Generation,
        query: query.to_string(),
    }
}

pub fn generate_pseudo_document(
    query: &str,
    context: &SerializedContext,
    backend: &dyn ChatBackend,
    cot: bool,
    settings: &LlmSettings,
) -> Result<PseudoDocument, LlmError> {
    let req = generation_request(query, context, cot, settings);
    let reply = backend.complete(&req)?;
    if reply.text.trim().is_empty() {
        return Err(LlmError::EmptyGeneration);
    }
    Ok(PseudoDocument {
        text: reply.text,
        provenance: Provenance {
            model: req.model.clone(),
            prompt_hash: sha256_hex(req.rendered_prompt().as_bytes()),
            cache_hit: reply.cache_hit,
        },
    })
}

pub fn paraphrase_request(query: &str, settings: &LlmSettings) -> ChatRequest {
    ChatRequest {
        model: settings.model.clone(),
        system: None,
        user: prompts::render_paraphrase_user(query),
        temperature: 0.0,
        max_tokens: PARAPHRASE_MAX_TOKENS,
        kind: PromptKind::Paraphrase,
        query: query.to_string(),
    }
}

pub fn paraphrase_query(
    query: &str,
    backend: &dyn ChatBackend,
    settings: &LlmSettings,
) -> Result<String, LlmError> {
    if query.trim().is_empty() {
        return Err(LlmError::InvalidRequest("query text is empty".into()));
    }
    let reply = backend.complete(&paraphrase_request(query, settings))?;
    clean_paraphrase(&reply.text).ok_or(LlmError::EmptyGeneration)
}

/// First non-empty line of the reply, minus an echoed "Paraphrased query:"
/// label.
fn clean_paraphrase(reply: &str) -> Option<String> {
    reply
        .lines()
        .map(|l| {
            let l = l.trim();
            l.strip_prefix("Paraphrased query:").unwrap_or(l).trim()
        })
        .find(|l| !l.is_empty())
        .map(str::to_string)
}
