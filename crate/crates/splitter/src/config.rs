//! Configuration: one TOML document with per-tactic sections, plus per-call
//! dotted-path overrides (per-call wins) and environment overrides for
//! backend URLs and auth tokens.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::RateCard;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown override path: {0}")]
    UnknownOverridePath(String),
    #[error("override for {path} has the wrong type: {detail}")]
    BadOverrideValue { path: String, detail: String },
}

/// T2 operates in one or both of these modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressMode {
    /// One-time compression of the system prompt, cached by content hash.
    Static,
    /// Per-call compression of chat history and retrieved documents.
    Dynamic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteTactic {
    pub enabled: bool,
    /// Trivial classifications below this confidence are escalated to the
    /// cloud regardless.
    pub confidence_threshold: f64,
}

impl Default for RouteTactic {
    fn default() -> Self {
        Self { enabled: false, confidence_threshold: 0.6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressTactic {
    pub enabled: bool,
    pub mode: Vec<CompressMode>,
}

impl Default for CompressTactic {
    fn default() -> Self {
        Self { enabled: false, mode: vec![CompressMode::Static, CompressMode::Dynamic] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SemCacheTactic {
    pub enabled: bool,
    /// Cosine similarity a stored entry must reach to serve a hit.
    pub similarity_threshold: f64,
    pub ttl_secs: u64,
}

impl Default for SemCacheTactic {
    fn default() -> Self {
        // 7-day TTL; threshold deliberately high to favor correctness over
        // hit rate.
        Self { enabled: false, similarity_threshold: 0.85, ttl_secs: 7 * 24 * 3600 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DraftTactic {
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffTactic {
    pub enabled: bool,
    /// Lines of context kept on each side of a change site.
    pub window_lines: usize,
    /// Keyword-triggered detection also requires the user text to exceed
    /// this many characters.
    pub length_threshold: usize,
}

impl Default for DiffTactic {
    fn default() -> Self {
        Self { enabled: false, window_lines: 3, length_threshold: 1500 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentTactic {
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchTactic {
    pub enabled: bool,
    pub window_ms: u64,
    pub max_batch: usize,
    /// Stable prefixes at or above this estimated token count are tagged
    /// for vendor-side prompt caching.
    pub prefix_min_tokens: u64,
    pub vendor_prompt_cache_supported: bool,
}

impl Default for BatchTactic {
    fn default() -> Self {
        Self {
            enabled: false,
            window_ms: 250,
            max_batch: 8,
            prefix_min_tokens: 1024,
            vendor_prompt_cache_supported: false,
        }
    }
}

/// Per-tactic enablement and parameters. Every field is addressable by a
/// dotted path (e.g. `t3.similarity_threshold`) in per-call overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TacticConfig {
    pub t1: RouteTactic,
    pub t2: CompressTactic,
    pub t3: SemCacheTactic,
    pub t4: DraftTactic,
    pub t5: DiffTactic,
    pub t6: IntentTactic,
    pub t7: BatchTactic,
}

impl TacticConfig {
    /// All seven tactics disabled; parameters at their defaults.
    pub fn all_disabled() -> Self {
        Self::default()
    }

    /// All seven tactics enabled; parameters at their defaults.
    pub fn all_enabled() -> Self {
        let mut cfg = Self::default();
        cfg.t1.enabled = true;
        cfg.t2.enabled = true;
        cfg.t3.enabled = true;
        cfg.t4.enabled = true;
        cfg.t5.enabled = true;
        cfg.t6.enabled = true;
        cfg.t7.enabled = true;
        cfg
    }

    pub fn t3_ttl(&self) -> Duration {
        Duration::from_secs(self.t3.ttl_secs)
    }

    pub fn t7_window(&self) -> Duration {
        Duration::from_millis(self.t7.window_ms)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.t1.confidence_threshold) {
            return Err(ConfigError::Invalid(
                "t1.confidence_threshold must be in [0, 1]".to_string(),
            ));
        }
        if !(-1.0..=1.0).contains(&self.t3.similarity_threshold) {
            return Err(ConfigError::Invalid(
                "t3.similarity_threshold must be in [-1, 1]".to_string(),
            ));
        }
        if self.t7.max_batch < 1 {
            return Err(ConfigError::Invalid("t7.max_batch must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Apply per-call dotted-path overrides (`"t3.similarity_threshold" -> 0.9`)
    /// on top of this config. Per-call values win; unknown paths are errors.
    pub fn with_overrides(
        &self,
        overrides: &BTreeMap<String, serde_json::Value>,
    ) -> Result<TacticConfig, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self).expect("TacticConfig serializes");
        for (path, override_value) in overrides {
            let segments: Vec<&str> = path.split('.').collect();
            let (leaf, parents) = segments.split_last().expect("split yields at least one");
            let mut cursor = &mut value;
            for segment in parents {
                cursor = cursor
                    .as_object_mut()
                    .and_then(|map| map.get_mut(*segment))
                    .ok_or_else(|| ConfigError::UnknownOverridePath(path.clone()))?;
            }
            let map = cursor
                .as_object_mut()
                .ok_or_else(|| ConfigError::UnknownOverridePath(path.clone()))?;
            if !map.contains_key(*leaf) {
                return Err(ConfigError::UnknownOverridePath(path.clone()));
            }
            map.insert(leaf.to_string(), override_value.clone());
        }
        let merged: TacticConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::BadOverrideValue {
                path: "<merged>".to_string(),
                detail: e.to_string(),
            })?;
        merged.validate()?;
        Ok(merged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LocalRuntime,
    OpenaiCompatible,
    ScriptedMock,
}

/// Canned behavior for a `scripted_mock` backend configured from file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MockBackendConfig {
    pub response: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Default for MockBackendConfig {
    fn default() -> Self {
        Self { response: "mock response".to_string(), input_tokens: 8, output_tokens: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub supports_prompt_cache: bool,
    pub supports_logprobs: bool,
    /// Override for the chat endpoint path.
    pub chat_path: Option<String>,
    /// Override for the embeddings endpoint path.
    pub embeddings_path: Option<String>,
    pub mock: MockBackendConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::LocalRuntime,
            base_url: "http://localhost:11434".to_string(),
            model: "llama3.2:3b".to_string(),
            auth_token: None,
            supports_prompt_cache: false,
            supports_logprobs: false,
            chat_path: None,
            embeddings_path: None,
            mock: MockBackendConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub local: BackendConfig,
    pub cloud: BackendConfig,
    pub embedding: BackendConfig,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        let local = BackendConfig::default();
        let cloud = BackendConfig {
            kind: BackendKind::OpenaiCompatible,
            base_url: "https://api.openai.com".to_string(),
            model: "gpt-4o-mini".to_string(),
            supports_prompt_cache: true,
            supports_logprobs: true,
            ..BackendConfig::default()
        };
        let embedding = BackendConfig {
            model: "nomic-embed-text".to_string(),
            ..BackendConfig::default()
        };
        Self { local, cloud, embedding }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub port: u16,
    /// Telemetry run logs and the cache database live under this directory.
    pub state_dir: PathBuf,
    /// Optional bearer token for the HTTP proxy (off by default on loopback).
    pub auth_token: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { port: 8787, state_dir: PathBuf::from(".splitter"), auth_token: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheStoreConfig {
    /// SQLite file path; `:memory:` keeps the cache process-local.
    pub path: String,
}

impl Default for CacheStoreConfig {
    fn default() -> Self {
        Self { path: ".splitter/cache.db".to_string() }
    }
}

/// Optional overrides for the versioned prompt asset files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptsConfig {
    pub classifier: Option<PathBuf>,
    pub compressor: Option<PathBuf>,
    pub reviewer: Option<PathBuf>,
    pub intent: Option<PathBuf>,
    pub batch: Option<PathBuf>,
    pub hunks: Option<PathBuf>,
}

/// The whole config document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub server: ServerConfig,
    pub backends: BackendsConfig,
    pub cache: CacheStoreConfig,
    pub rates: RateCard,
    pub prompts: PromptsConfig,
    #[serde(flatten)]
    pub tactics: TacticConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config: AppConfig = toml::from_str(&text)?;
        config.apply_env_overrides(|name| std::env::var(name).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tactics.validate()?;
        self.rates.validate().map_err(ConfigError::Invalid)?;
        for (name, backend) in [
            ("local", &self.backends.local),
            ("cloud", &self.backends.cloud),
            ("embedding", &self.backends.embedding),
        ] {
            if backend.model.is_empty() {
                return Err(ConfigError::Invalid(format!("backends.{name}.model must be non-empty")));
            }
            if backend.kind != BackendKind::ScriptedMock && backend.base_url.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "backends.{name}.base_url is required for non-mock backends"
                )));
            }
        }
        Ok(())
    }

    /// Environment variables override backend base URLs and auth tokens.
    pub fn apply_env_overrides<F>(&mut self, get: F)
    where
        F: Fn(&str) -> Option<String>,
    {
        let slots = [
            ("SPLITTER_LOCAL_BASE_URL", "SPLITTER_LOCAL_AUTH_TOKEN"),
            ("SPLITTER_CLOUD_BASE_URL", "SPLITTER_CLOUD_AUTH_TOKEN"),
            ("SPLITTER_EMBED_BASE_URL", "SPLITTER_EMBED_AUTH_TOKEN"),
        ];
        let backends = [
            &mut self.backends.local,
            &mut self.backends.cloud,
            &mut self.backends.embedding,
        ];
        for (backend, (url_var, token_var)) in backends.into_iter().zip(slots) {
            if let Some(url) = get(url_var) {
                backend.base_url = url;
            }
            if let Some(token) = get(token_var) {
                backend.auth_token = Some(token);
            }
        }
    }
}
