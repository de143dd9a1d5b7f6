//! Deterministic offline chat backends.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompts::{self, IN_CONTEXT_EXAMPLES};
use super::{cache_key, ChatBackend, ChatReply, ChatRequest, LlmError, PromptKind};

/// Scripted replies keyed by query text. Anything not scripted falls back to
/// a synthetic reply (see [`MockMode::Canned`]).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub terms: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub generations: BTreeMap<String, String>,
    #[serde(default)]
    pub paraphrases: BTreeMap<String, String>,
    /// Raw extraction replies, for exercising the parser's failure path.
    #[serde(default)]
    pub raw_term_replies: BTreeMap<String, String>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let bytes = std::fs::read(path)
            .map_err(|e| LlmError::BackendUnavailable(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| LlmError::BackendUnavailable(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockMode {
    /// Every reply is the query text unchanged.
    Identity,
    /// Scripted replies; otherwise term extraction answers from the
    /// in-context examples (else `Terms: []`), generation restates the
    /// grounding context, and paraphrase echoes the query.
    Canned(Script),
    /// Never answers. Meant to sit under a cache so only recorded replies
    /// are served.
    Replay,
}

pub struct MockChat {
    mode: MockMode,
}

impl MockChat {
    pub fn new(mode: MockMode) -> Self {
        Self { mode }
    }

    pub fn mode(&self) -> &MockMode {
        &self.mode
    }
}

impl ChatBackend for MockChat {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, LlmError> {
        req.validate()?;
        let text = match &self.mode {
            MockMode::Identity => req.query.clone(),
            MockMode::Canned(script) => canned_reply(script, req),
            MockMode::Replay => {
                return Err(LlmError::ReplayMiss {
                    key: cache_key(req),
                    kind: req.kind,
                    query: req.query.clone(),
                })
            }
        };
        Ok(ChatReply {
            text,
            cache_hit: false,
        })
    }
}

fn canned_reply(script: &Script, req: &ChatRequest) -> String {
    let q = req.query.as_str();
    match req.kind {
        PromptKind::TermExtraction => {
            if let Some(raw) = script.raw_term_replies.get(q) {
                return raw.clone();
            }
            if let Some(ts) = script.terms.get(q) {
                return format!("Terms: [{}]", ts.join(", "));
            }
            IN_CONTEXT_EXAMPLES
                .iter()
                .find(|(ex, _)| *ex == q)
                .map(|(_, ts)| prompts::render_terms_line(ts))
                .unwrap_or_else(|| "Terms: []".to_string())
        }
        PromptKind::Generation => script
            .generations
            .get(q)
            .cloned()
            .unwrap_or_else(|| restate_context(&req.user, q)),
        PromptKind::Paraphrase => script
            .paraphrases
            .get(q)
            .cloned()
            .unwrap_or_else(|| q.to_string()),
    }
}

/// Synthetic answer built from the prompt's definitions and relationships
/// bodies, so that different context projections yield different text.
fn restate_context(prompt: &str, query: &str) -> String {
    let body = |label: &str, stop: &str| -> String {
        let Some(start) = prompt.find(label) else {
            return String::new();
        };
        let rest = &prompt[start + label.len()..];
        let end = rest.find(stop).unwrap_or(rest.len());
        rest[..end].trim().to_string()
    };
    let defs = body("\n\nDefinitions: ", "\n\nRelationships: ");
    let rels = body("\n\nRelationships: ", &format!("\n\n{}", prompts::COT_SUFFIX));
    let mut parts = vec![query.to_string()];
    parts.extend([defs, rels].into_iter().filter(|s| !s.is_empty()));
    parts.join("\n")
}
