//! Backend construction from the effective configuration.

use std::path::PathBuf;
use std::time::Duration;

use bmq_core::index::{Analyzer, Bm25Params};
use bmq_core::llmgate::{
    CachedChat, ChatBackend, LlmSettings, MockChat, MockMode, OpenAiChat, OpenAiConfig, Script,
};
use bmq_core::ontology::{CachedBackend, OntologyBackend, SnapshotStore, UmlsClient, UmlsConfig};
use bmq_core::pipeline::{Backends, Mode, PipelineConfig};

use crate::config::Config;
use crate::error::CliError;

pub struct Services {
    pub llm: Option<Box<dyn ChatBackend>>,
    pub ontology: Option<Box<dyn OntologyBackend>>,
    pub settings: LlmSettings,
}

impl Services {
    pub fn backends(&self) -> Backends<'_> {
        Backends {
            llm: self.llm.as_deref(),
            ontology: self.ontology.as_deref(),
            llm_settings: &self.settings,
        }
    }
}

pub fn cache_dir(cfg: &Config) -> PathBuf {
    PathBuf::from(cfg.raw("pipeline.cache_dir"))
}

pub fn llm_settings(cfg: &Config) -> Result<LlmSettings, CliError> {
    let temperature: f64 = cfg.get("llm.temperature")?;
    if !(temperature >= 0.0) {
        return Err(CliError::config(format!("llm.temperature must be >= 0, got {temperature}")));
    }
    Ok(LlmSettings {
        model: cfg.raw("llm.model").to_string(),
        generation_temperature: temperature,
    })
}

pub fn build_llm(cfg: &Config, refresh: bool) -> Result<Box<dyn ChatBackend>, CliError> {
    let dir = cache_dir(cfg).join("llm");
    let backend = cfg.raw("llm.backend");
    let wrap = |b: Box<dyn ChatBackend>| -> Box<dyn ChatBackend> {
        Box::new(CachedChat::new(b, dir.clone(), refresh))
    };
    let inner: Box<dyn ChatBackend> = match backend {
        "openai" => {
            let mut c = OpenAiConfig::new(cfg.raw("llm.api_base"), cfg.opt("llm.api_key").map(str::to_string));
            c.max_in_flight = cfg.get("llm.max_in_flight")?;
            Box::new(OpenAiChat::new(c))
        }
        "mock:identity" => Box::new(MockChat::new(MockMode::Identity)),
        "mock:canned" => {
            let script = match cfg.opt("llm.script") {
                Some(p) => Script::load(p.as_ref()).map_err(|e| CliError::config(e.to_string()))?,
                None => Script::default(),
            };
            Box::new(MockChat::new(MockMode::Canned(script)))
        }
        "mock:replay" => Box::new(MockChat::new(MockMode::Replay)),
        other => {
            return Err(CliError::config(format!(
                "unknown LLM backend `{other}` (expected openai, mock:identity, mock:canned or mock:replay)"
            )))
        }
    };
    Ok(wrap(inner))
}

pub fn build_ontology(cfg: &Config, refresh: bool) -> Result<Box<dyn OntologyBackend>, CliError> {
    match cfg.raw("ontology.backend") {
        "snapshot" => {
            let path = cfg
                .opt("ontology.snapshot")
                .ok_or_else(|| CliError::config("ontology.backend is snapshot but no snapshot path is set"))?;
            let store = SnapshotStore::load(path).map_err(|e| CliError::config(e.to_string()))?;
            Ok(Box::new(store))
        }
        "umls" => {
            let key = cfg.opt("ontology.api_key").ok_or_else(|| {
                CliError::config("UMLS backend selected but UMLS_API_KEY is not set")
            })?;
            let mut c = UmlsConfig::new(key);
            c.base_url = cfg.raw("ontology.base_url").to_string();
            c.version = cfg.raw("ontology.version").to_string();
            c.max_in_flight = cfg.get("ontology.max_in_flight")?;
            c.timeout = Duration::from_secs(30);
            let dir = cache_dir(cfg).join("ontology");
            Ok(Box::new(CachedBackend::new(UmlsClient::new(c), dir, refresh)))
        }
        other => Err(CliError::config(format!(
            "unknown ontology backend `{other}` (expected umls or snapshot)"
        ))),
    }
}

/// Builds the backends `mode` needs; none for plain BM25.
pub fn services_for(cfg: &Config, mode: Mode, refresh: bool) -> Result<Services, CliError> {
    let settings = llm_settings(cfg)?;
    if !mode.needs_backends() {
        return Ok(Services {
            llm: None,
            ontology: None,
            settings,
        });
    }
    Ok(Services {
        llm: Some(build_llm(cfg, refresh)?),
        ontology: Some(build_ontology(cfg, refresh)?),
        settings,
    })
}

pub fn analyzer(cfg: &Config) -> Result<Analyzer, CliError> {
    Ok(Analyzer {
        stem: cfg.get("bm25.stem")?,
        stopwords: cfg.get("bm25.stopwords")?,
    })
}

pub fn pipeline_config(cfg: &Config) -> Result<PipelineConfig, CliError> {
    let mode: Mode = cfg
        .raw("pipeline.mode")
        .parse()
        .map_err(|e: bmq_core::pipeline::PipelineError| CliError::config(e.to_string()))?;
    let alpha: Option<u32> = cfg.get_opt("pipeline.alpha")?;
    if alpha == Some(0) {
        return Err(CliError::config("alpha must be at least 1"));
    }
    let mut pc = PipelineConfig::for_mode(mode);
    pc.alpha = alpha;
    pc.cot = cfg.get("pipeline.cot")?;
    pc.edge_cap = cfg.get("ontology.edge_cap")?;
    pc.top_k = cfg.get("pipeline.top_k")?;
    pc.bm25 = Bm25Params {
        k1: cfg.get("bm25.k1")?,
        b: cfg.get("bm25.b")?,
    };
    if pc.top_k == 0 {
        return Err(CliError::config("pipeline.top_k must be at least 1"));
    }
    Ok(pc)
}
