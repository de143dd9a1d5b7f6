use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatReply, ChatRequest, LlmError};
use crate::diskcache::{sha256_hex, DiskCache};

/// SHA-256 over model, temperature, token budget and the rendered prompt.
pub fn cache_key(req: &ChatRequest) -> String {
    let material = serde_json::to_string(&(
        &req.model,
        req.temperature,
        req.max_tokens,
        req.rendered_prompt(),
    ))
    .expect("tuple of strings and numbers serializes");
    sha256_hex(material.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: ChatRequest,
    pub reply: String,
    pub timestamp: u64,
}

/// Disk-backed reply cache. Existing records are never rewritten unless
/// `refresh` is set.
pub struct CachedChat<B> {
    inner: B,
    store: DiskCache,
    refresh: bool,
}

impl<B: ChatBackend> CachedChat<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>, refresh: bool) -> Self {
        Self {
            inner,
            store: DiskCache::new(dir),
            refresh,
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn lookup(&self, req: &ChatRequest) -> Result<Option<CacheRecord>, LlmError> {
        self.store
            .get(&cache_key(req))
            .map_err(|e| LlmError::Cache(e.to_string()))
    }
}

impl<B: ChatBackend> ChatBackend for CachedChat<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, LlmError> {
        req.validate()?;
        let key = cache_key(req);
        if !self.refresh {
            if let Some(rec) = self.lookup(req)? {
                return Ok(ChatReply {
                    text: rec.reply,
                    cache_hit: true,
                });
            }
        }
        let reply = self.inner.complete(req)?;
        let record = CacheRecord {
            key: key.clone(),
            request: req.clone(),
            reply: reply.text.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        self.store
            .put(&key, &record)
            .map_err(|e| LlmError::Cache(e.to_string()))?;
        Ok(ChatReply {
            text: reply.text,
            cache_hit: false,
        })
    }
}
