use std::path::PathBuf;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{ConceptHit, Cui, OntologyBackend, OntologyError, RawDefinition, RawRelation};
use crate::diskcache::{sha256_hex, DiskCache};

/// Disk cache in front of an ontology backend, keyed by endpoint and
/// normalized request. With `refresh` set, lookups always go to the inner
/// backend and overwrite what was stored.
pub struct CachedBackend<B> {
    inner: B,
    store: DiskCache,
    refresh: bool,
}

#[derive(Serialize, Deserialize)]
struct Entry<T> {
    endpoint: String,
    request: String,
    response: T,
}

impl<B: OntologyBackend> CachedBackend<B> {
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

    fn cached<T, F>(&self, endpoint: &str, request: String, fetch: F) -> Result<T, OntologyError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, OntologyError>,
    {
        let key = sha256_hex(format!("{endpoint}\n{request}").as_bytes());
        if !self.refresh {
            match self.store.get::<Entry<T>>(&key) {
                Ok(Some(e)) => return Ok(e.response),
                Ok(None) => {}
                Err(e) => log::warn!("ignoring unreadable ontology cache entry: {e}"),
            }
        }
        let response = fetch()?;
        let entry = Entry {
            endpoint: endpoint.to_string(),
            request,
            response,
        };
        self.store
            .put(&key, &entry)
            .map_err(|e| OntologyError::Cache(e.to_string()))?;
        Ok(entry.response)
    }
}

impl<B: OntologyBackend> OntologyBackend for CachedBackend<B> {
    fn search_exact(&self, term: &str) -> Result<Vec<ConceptHit>, OntologyError> {
        let term = term.trim();
        self.cached("search_exact", term.to_string(), || self.inner.search_exact(term))
    }

    fn definitions(&self, cui: &Cui) -> Result<Vec<RawDefinition>, OntologyError> {
        self.cached("definitions", cui.to_string(), || self.inner.definitions(cui))
    }

    fn relations(&self, cui: &Cui, limit: usize) -> Result<Vec<RawRelation>, OntologyError> {
        self.cached("relations", format!("{cui}\t{limit}"), || {
            self.inner.relations(cui, limit)
        })
    }

    fn concept_name(&self, cui: &Cui) -> Result<Option<String>, OntologyError> {
        self.cached("concept_name", cui.to_string(), || self.inner.concept_name(cui))
    }
}
