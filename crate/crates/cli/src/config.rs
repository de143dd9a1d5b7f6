//! Effective configuration: built-in defaults, then `bmq.toml` (or JSON),
//! then environment variables, then command-line flags. Every value keeps
//! the layer it came from so `config show` can report it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default,
    File(PathBuf),
    Env(&'static str),
    Flag(&'static str),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => f.write_str("default"),
            Source::File(p) => write!(f, "file {}", p.display()),
            Source::Env(v) => write!(f, "env {v}"),
            Source::Flag(n) => write!(f, "flag --{n}"),
        }
    }
}

/// Known keys with their defaults. An empty default means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("bm25.k1", "0.9"),
    ("bm25.b", "0.4"),
    ("bm25.stem", "false"),
    ("bm25.stopwords", "false"),
    ("llm.backend", "openai"),
    ("llm.model", "gpt-4o"),
    ("llm.api_base", "https://api.openai.com/v1"),
    ("llm.api_key", ""),
    ("llm.temperature", "1.0"),
    ("llm.max_in_flight", "4"),
    ("llm.script", ""),
    ("ontology.backend", "umls"),
    ("ontology.snapshot", ""),
    ("ontology.api_key", ""),
    ("ontology.base_url", bmq_core::ontology::UMLS_DEFAULT_BASE),
    ("ontology.version", "current"),
    ("ontology.edge_cap", "50"),
    ("ontology.max_in_flight", "4"),
    ("pipeline.mode", "full"),
    ("pipeline.alpha", ""),
    ("pipeline.cot", "false"),
    ("pipeline.top_k", "1000"),
    ("pipeline.cache_dir", "cache"),
    ("pipeline.jobs", ""),
];

const SECRET_KEYS: &[&str] = &["llm.api_key", "ontology.api_key"];
const PATH_KEYS: &[&str] = &["llm.script", "ontology.snapshot", "pipeline.cache_dir"];

pub const ENV_KEYS: &[(&str, &str)] = &[
    ("LLM_API_BASE", "llm.api_base"),
    ("LLM_API_KEY", "llm.api_key"),
    ("LLM_MODEL", "llm.model"),
    ("UMLS_API_KEY", "ontology.api_key"),
];

pub const DEFAULT_CONFIG_FILE: &str = "bmq.toml";

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<&'static str, (String, Source)>,
}

fn known_key(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|(k, _)| *k).find(|k| *k == key)
}

impl Config {
    pub fn defaults() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v)| (*k, (v.to_string(), Source::Default)))
                .collect(),
        }
    }

    /// Defaults overlaid with the config file (explicit path, or `bmq.toml`
    /// in the working directory if present) and the environment.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = Self::defaults();
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.is_file()),
        };
        if let Some(p) = path {
            cfg.apply_file(&p)?;
        }
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let tree: serde_json::Value = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        } else {
            let t: toml::Table = text
                .parse()
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t).map_err(|e| CliError::config(e.to_string()))?
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let sections = tree
            .as_object()
            .ok_or_else(|| CliError::config(format!("{}: top level must be a table", path.display())))?;
        for (section, body) in sections {
            let body = body.as_object().ok_or_else(|| {
                CliError::config(format!("{}: [{section}] must be a table", path.display()))
            })?;
            for (name, v) in body {
                let full = format!("{section}.{name}");
                let key = known_key(&full).ok_or_else(|| {
                    CliError::config(format!("{}: unknown setting `{full}`", path.display()))
                })?;
                let mut value = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    other => {
                        return Err(CliError::config(format!(
                            "{}: `{full}` must be a string, number or boolean, got {other}",
                            path.display()
                        )))
                    }
                };
                if PATH_KEYS.contains(&key) && !value.is_empty() && Path::new(&value).is_relative() {
                    value = base.join(&value).to_string_lossy().into_owned();
                }
                self.values.insert(key, (value, Source::File(path.to_path_buf())));
            }
        }
        Ok(())
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, key) in ENV_KEYS {
            if let Some(v) = lookup(var).filter(|v| !v.is_empty()) {
                self.values.insert(key, (v, Source::Env(var)));
            }
        }
    }

    /// Flag override; `flag` is the option name used in messages.
    pub fn set_flag(&mut self, key: &'static str, flag: &'static str, value: Option<String>) {
        debug_assert!(known_key(key).is_some(), "unknown key {key}");
        if let Some(v) = value {
            self.values.insert(key, (v, Source::Flag(flag)));
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(|(v, _)| v.as_str()).unwrap_or("")
    }

    pub fn source(&self, key: &str) -> Option<&Source> {
        self.values.get(key).map(|(_, s)| s)
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| {
            CliError::config(format!(
                "invalid value `{raw}` for {key} (from {}): {e}",
                self.source(key).cloned().unwrap_or(Source::Default)
            ))
        })
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.opt(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    /// `key = value  # source` lines, secrets masked.
    pub fn show(&self) -> String {
        let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (key, (value, source)) in &self.values {
            let shown = if SECRET_KEYS.contains(key) && !value.is_empty() {
                "********".to_string()
            } else if value.is_empty() {
                "(unset)".to_string()
            } else {
                value.clone()
            };
            out.push_str(&format!("{key:<width$} = {shown}  # {source}\n"));
        }
        out
    }
}
