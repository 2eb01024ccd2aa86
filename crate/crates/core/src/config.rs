//! Run configuration: file format, defaults, environment overrides and
//! endpoint construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::cache::{CacheError, ReplayCache};
use crate::llm::http::HttpBackend;
use crate::llm::mock::{self, BUILTIN_MOCKS};
use crate::llm::{ChatEndpoint, EndpointMode, Role, SamplingParams};
use crate::memory::DEFAULT_CORE_LIMIT;
use crate::qa::DEFAULT_TOP_K;
use crate::reward::{AdvantageScope, DEFAULT_BETA, DEFAULT_EPSILON, DEFAULT_GAMMA, DEFAULT_GROUP_SIZE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid setting {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub instances: PathBuf,
    /// Default directory for per-role replay caches.
    pub cache_dir: PathBuf,
    /// Group trace files, one per instance.
    pub traces: PathBuf,
    /// Evaluation reports and summaries.
    pub reports: PathBuf,
    /// Exported trainer records.
    pub records: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            instances: "instances.jsonl".into(),
            cache_dir: "cache".into(),
            traces: "out/traces".into(),
            reports: "out/reports".into(),
            records: "out/records.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub top_k: usize,
    pub group_size: usize,
    pub core_limit: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub advantage_scope: AdvantageScope,
    /// Reject episodic inserts without a timestamp instead of stamping them
    /// with the chunk time.
    pub strict_timestamps: bool,
    /// Chunks longer than this (in tokens) abort the rollout.
    pub max_chunk_tokens: Option<usize>,
    /// Instances processed concurrently.
    pub workers: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            top_k: DEFAULT_TOP_K,
            group_size: DEFAULT_GROUP_SIZE,
            core_limit: DEFAULT_CORE_LIMIT,
            max_new_tokens: 1024,
            seed: 0,
            advantage_scope: AdvantageScope::Pooled,
            strict_timestamps: false,
            max_chunk_tokens: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub mode: EndpointMode,
    pub model: String,
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configs or outputs.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Replay cache; defaults to `<cache_dir>/<role>.jsonl`.
    pub cache: Option<PathBuf>,
    /// Built-in mock behaviour, see [`crate::llm::mock::builtin`].
    pub mock: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            mode: EndpointMode::Replay,
            model: String::new(),
            base_url: None,
            api_key_env: None,
            timeout_secs: 120,
            max_retries: 3,
            cache: None,
            mock: None,
            temperature: None,
            top_p: None,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub policy: EndpointConfig,
    pub generator: EndpointConfig,
    pub judge: EndpointConfig,
}

impl Default for Endpoints {
    fn default() -> Self {
        let with_temp = |t| EndpointConfig {
            temperature: Some(t),
            ..Default::default()
        };
        Endpoints {
            policy: with_temp(1.0),
            generator: with_temp(0.0),
            judge: with_temp(0.0),
        }
    }
}

impl Endpoints {
    pub fn get(&self, role: Role) -> &EndpointConfig {
        match role {
            Role::Policy => &self.policy,
            Role::Generator => &self.generator,
            Role::Judge => &self.judge,
        }
    }

    pub fn get_mut(&mut self, role: Role) -> &mut EndpointConfig {
        match role {
            Role::Policy => &mut self.policy,
            Role::Generator => &mut self.generator,
            Role::Judge => &mut self.judge,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub hyper: Hyper,
    pub endpoints: Endpoints,
}

const ROLES: [Role; 3] = [Role::Policy, Role::Generator, Role::Judge];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = Self::from_toml(&text).map_err(|reason| ConfigError::Parse {
            path: path.to_path_buf(),
            reason,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let h = &self.hyper;
        if !(h.beta >= 0.0 && h.beta.is_finite()) {
            return Err(invalid("hyper.beta", "must be a nonnegative number"));
        }
        if !(h.gamma >= 0.0 && h.gamma.is_finite()) {
            return Err(invalid("hyper.gamma", "must be a nonnegative number"));
        }
        if !(h.epsilon >= 0.0 && h.epsilon.is_finite()) {
            return Err(invalid("hyper.epsilon", "must be a nonnegative number"));
        }
        if h.group_size < 2 {
            return Err(invalid("hyper.group_size", "a group needs at least two rollouts"));
        }
        if h.top_k == 0 {
            return Err(invalid("hyper.top_k", "must be at least 1"));
        }
        if h.core_limit == 0 {
            return Err(invalid("hyper.core_limit", "must be at least 1"));
        }
        if h.workers == 0 {
            return Err(invalid("hyper.workers", "must be at least 1"));
        }
        for role in ROLES {
            let ep = self.endpoints.get(role);
            let key = |k: &str| format!("endpoints.{role}.{k}");
            match ep.mode {
                EndpointMode::Live | EndpointMode::Record if ep.base_url.is_none() => {
                    return Err(invalid(&key("base_url"), "required in live and record mode"))
                }
                EndpointMode::Mock => match &ep.mock {
                    Some(name) if BUILTIN_MOCKS.contains(&name.as_str()) => {}
                    Some(name) => {
                        return Err(invalid(
                            &key("mock"),
                            format!("unknown mock {name:?}; expected one of {}", BUILTIN_MOCKS.join(", ")),
                        ))
                    }
                    None => return Err(invalid(&key("mock"), "required in mock mode")),
                },
                _ => {}
            }
        }
        Ok(())
    }

    /// Applies `AGENTMEM_*` overrides: `AGENTMEM_SEED`, `AGENTMEM_GROUP_SIZE`,
    /// `AGENTMEM_CACHE_DIR`, and per role `AGENTMEM_<ROLE>_{MODE,MODEL,BASE_URL,MOCK}`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("AGENTMEM_SEED") {
            self.hyper.seed = v.parse().map_err(|_| invalid("AGENTMEM_SEED", "not an integer"))?;
        }
        if let Some(v) = lookup("AGENTMEM_GROUP_SIZE") {
            self.hyper.group_size = v.parse().map_err(|_| invalid("AGENTMEM_GROUP_SIZE", "not an integer"))?;
        }
        if let Some(v) = lookup("AGENTMEM_CACHE_DIR") {
            self.paths.cache_dir = v.into();
        }
        for role in ROLES {
            let prefix = format!("AGENTMEM_{}", role.as_str().to_uppercase());
            let ep = self.endpoints.get_mut(role);
            if let Some(v) = lookup(&format!("{prefix}_MODE")) {
                ep.mode = v.parse().map_err(|e: String| invalid(&format!("{prefix}_MODE"), e))?;
            }
            if let Some(v) = lookup(&format!("{prefix}_MODEL")) {
                ep.model = v;
            }
            if let Some(v) = lookup(&format!("{prefix}_BASE_URL")) {
                ep.base_url = Some(v);
            }
            if let Some(v) = lookup(&format!("{prefix}_MOCK")) {
                ep.mock = Some(v);
            }
        }
        self.validate()
    }

    pub fn cache_path(&self, role: Role) -> PathBuf {
        self.endpoints
            .get(role)
            .cache
            .clone()
            .unwrap_or_else(|| self.paths.cache_dir.join(format!("{role}.jsonl")))
    }

    pub fn endpoint(&self, role: Role) -> Result<ChatEndpoint, ConfigError> {
        let ep = self.endpoints.get(role);
        let params = SamplingParams {
            temperature: ep.temperature,
            top_p: ep.top_p,
            max_tokens: ep.max_tokens,
            seed: None,
        };
        let http = || {
            let base = ep
                .base_url
                .clone()
                .ok_or_else(|| invalid(&format!("endpoints.{role}.base_url"), "missing"))?;
            let key = ep.api_key_env.as_deref().and_then(|name| std::env::var(name).ok());
            Ok::<_, ConfigError>(Arc::new(HttpBackend::new(
                base,
                key,
                Duration::from_secs(ep.timeout_secs),
                ep.max_retries,
            )))
        };
        let endpoint = match ep.mode {
            EndpointMode::Live => ChatEndpoint::live(role, &ep.model, http()?),
            EndpointMode::Record => {
                let cache = Arc::new(ReplayCache::open(self.cache_path(role))?);
                ChatEndpoint::record(role, &ep.model, http()?, cache)
            }
            EndpointMode::Replay => {
                let cache = Arc::new(ReplayCache::open(self.cache_path(role))?);
                ChatEndpoint::replay(role, &ep.model, cache)
            }
            EndpointMode::Mock => {
                let name = ep.mock.as_deref().unwrap_or("");
                let backend = mock::builtin(name)
                    .ok_or_else(|| invalid(&format!("endpoints.{role}.mock"), format!("unknown mock {name:?}")))?;
                ChatEndpoint::mock(role, &ep.model, Arc::new(backend))
            }
        };
        Ok(endpoint.with_params(params))
    }
}
