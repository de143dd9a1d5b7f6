//! Client for the UMLS Terminology Services REST API.

use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;

use super::{ConceptHit, Cui, OntologyBackend, OntologyError, RawDefinition, RawRelation, RelationLabel};
use crate::throttle::{Backoff, InFlight};

pub const UMLS_API_KEY_ENV: &str = "UMLS_API_KEY";
pub const UMLS_DEFAULT_BASE: &str = "https://uts-ws.nlm.nih.gov/rest";

#[derive(Debug, Clone)]
pub struct UmlsConfig {
    pub base_url: String,
    pub api_key: String,
    pub version: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub backoff: Backoff,
}

impl UmlsConfig {
    pub fn new(api_key: impl Into<String>) -> Self {
        Self {
            base_url: UMLS_DEFAULT_BASE.to_string(),
            api_key: api_key.into(),
            version: "current".to_string(),
            max_in_flight: 4,
            timeout: Duration::from_secs(30),
            backoff: Backoff::default(),
        }
    }

    /// Reads the key from `UMLS_API_KEY`.
    pub fn from_env() -> Result<Self, OntologyError> {
        match std::env::var(UMLS_API_KEY_ENV) {
            Ok(k) if !k.trim().is_empty() => Ok(Self::new(k.trim())),
            _ => Err(OntologyError::BackendUnavailable(format!(
                "{UMLS_API_KEY_ENV} is not set"
            ))),
        }
    }
}

pub struct UmlsClient {
    config: UmlsConfig,
    agent: ureq::Agent,
    gate: InFlight,
}

#[derive(Deserialize)]
struct SearchEnvelope {
    result: SearchResult,
}

#[derive(Deserialize)]
struct SearchResult {
    #[serde(default)]
    results: Vec<SearchItem>,
}

#[derive(Deserialize)]
struct SearchItem {
    ui: String,
    name: String,
}

#[derive(Deserialize)]
struct ListEnvelope {
    #[serde(default)]
    result: Vec<Value>,
}

impl UmlsClient {
    pub fn new(config: UmlsConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InFlight::new(config.max_in_flight);
        Self { config, agent, gate }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// GET with auth, throttling and backoff. `Ok(None)` means 404.
    fn get(&self, path: &str, params: &[(&str, String)]) -> Result<Option<String>, OntologyError> {
        let url = self.url(path);
        self.config.backoff.run(
            || {
                let _permit = self.gate.acquire();
                let mut req = self.agent.get(&url).query("apiKey", &self.config.api_key);
                for (k, v) in params {
                    req = req.query(*k, v);
                }
                let mut resp = req
                    .call()
                    .map_err(|e| OntologyError::BackendUnavailable(format!("GET {url}: {e}")))?;
                let status = resp.status().as_u16();
                match status {
                    200 => resp
                        .body_mut()
                        .read_to_string()
                        .map(Some)
                        .map_err(|e| OntologyError::BackendUnavailable(format!("GET {url}: {e}"))),
                    404 => Ok(None),
                    429 => {
                        let retry_after = resp
                            .headers()
                            .get("retry-after")
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.trim().parse::<u64>().ok())
                            .map(Duration::from_secs);
                        Err(OntologyError::RateLimited { retry_after })
                    }
                    401 | 403 => Err(OntologyError::BackendUnavailable(format!(
                        "GET {url}: authentication rejected (HTTP {status})"
                    ))),
                    _ => Err(OntologyError::BackendUnavailable(format!(
                        "GET {url}: HTTP {status}"
                    ))),
                }
            },
            |e| match e {
                OntologyError::RateLimited { retry_after } => Some(*retry_after),
                OntologyError::BackendUnavailable(m) if !m.contains("authentication") => Some(None),
                _ => None,
            },
        )
    }

    fn parse<T: for<'de> Deserialize<'de>>(body: &str, what: &str) -> Result<T, OntologyError> {
        serde_json::from_str(body)
            .map_err(|e| OntologyError::BackendUnavailable(format!("unexpected {what} payload: {e}")))
    }
}

/// Last path segment of a `relatedId` URL, if it is a CUI.
fn cui_from_uri(uri: &str) -> Option<Cui> {
    uri.rsplit('/').next().and_then(|s| Cui::new(s).ok())
}

impl OntologyBackend for UmlsClient {
    fn search_exact(&self, term: &str) -> Result<Vec<ConceptHit>, OntologyError> {
        let path = format!("search/{}", self.config.version);
        let params = [
            ("string", term.to_string()),
            ("searchType", "exact".to_string()),
            ("returnIdType", "concept".to_string()),
        ];
        let Some(body) = self.get(&path, &params)? else {
            return Ok(Vec::new());
        };
        let env: SearchEnvelope = Self::parse(&body, "search")?;
        Ok(env
            .result
            .results
            .into_iter()
            .filter_map(|it| Cui::new(it.ui).ok().map(|cui| ConceptHit { cui, name: it.name }))
            .collect())
    }

    fn definitions(&self, cui: &Cui) -> Result<Vec<RawDefinition>, OntologyError> {
        let path = format!("content/{}/CUI/{}/definitions", self.config.version, cui);
        let Some(body) = self.get(&path, &[("pageSize", "100".to_string())])? else {
            return Ok(Vec::new());
        };
        let env: ListEnvelope = Self::parse(&body, "definitions")?;
        Ok(env
            .result
            .iter()
            .filter_map(|v| {
                Some(RawDefinition {
                    text: v.get("value")?.as_str()?.to_string(),
                    source: v.get("rootSource")?.as_str()?.to_string(),
                })
            })
            .collect())
    }

    fn relations(&self, cui: &Cui, limit: usize) -> Result<Vec<RawRelation>, OntologyError> {
        let path = format!("content/{}/CUI/{}/relations", self.config.version, cui);
        let Some(body) = self.get(&path, &[("pageSize", limit.max(1).to_string())])? else {
            return Ok(Vec::new());
        };
        let env: ListEnvelope = Self::parse(&body, "relations")?;
        Ok(env
            .result
            .iter()
            .filter_map(|v| {
                let to = cui_from_uri(v.get("relatedId")?.as_str()?)?;
                let to_name = v.get("relatedIdName")?.as_str()?.to_string();
                let code = v.get("relationLabel")?.as_str()?;
                let qualifier = v.get("additionalRelationLabel").and_then(Value::as_str);
                Some(RawRelation {
                    to,
                    to_name,
                    label: RelationLabel::new(code, qualifier),
                })
            })
            .take(limit)
            .collect())
    }

    fn concept_name(&self, cui: &Cui) -> Result<Option<String>, OntologyError> {
        let path = format!("content/{}/CUI/{}", self.config.version, cui);
        let Some(body) = self.get(&path, &[])? else {
            return Ok(None);
        };
        let v: Value = Self::parse(&body, "concept")?;
        Ok(v
            .pointer("/result/name")
            .and_then(Value::as_str)
            .map(str::to_string))
    }
}
