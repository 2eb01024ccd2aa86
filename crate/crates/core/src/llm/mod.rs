//! Chat-completion access for the policy, generator and judge roles.
//!
//! Every request is reduced to a stable digest. A [`ChatEndpoint`] runs in one
//! of four modes:
//!
//! - `live`: send to the backend, nothing persisted
//! - `record`: serve from the cache when present, otherwise call the backend
//!   and append the pair to the cache
//! - `replay`: serve from the cache only; a miss is an error and no backend is
//!   ever contacted
//! - `mock`: call an in-process [`ChatBackend`] (scripted responses)

pub mod cache;
pub mod http;
pub mod mock;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheError, CacheRecord, ReplayCache};
pub use http::HttpBackend;
pub use mock::{MockBackend, ScriptTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Policy,
    Generator,
    Judge,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Policy => "policy",
            Role::Generator => "generator",
            Role::Judge => "judge",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointMode {
    Live,
    Record,
    Replay,
    Mock,
}

impl FromStr for EndpointMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(EndpointMode::Live),
            "record" => Ok(EndpointMode::Record),
            "replay" => Ok(EndpointMode::Replay),
            "mock" => Ok(EndpointMode::Mock),
            other => Err(format!("unknown endpoint mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SamplingParams {
    pub fn with_seed(&self, seed: u64) -> Self {
        SamplingParams {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub model: String,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Value>,
    #[serde(default)]
    pub params: SamplingParams,
}

impl ChatRequest {
    /// SHA-256 over the canonical JSON form of the request.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        let mut canonical = String::new();
        write_canonical(&value, &mut canonical);
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Compact JSON with object keys sorted at every level.
pub fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("replay cache has no entry for request {digest}")]
    CacheMiss { digest: String },
    #[error("malformed completion: {0}")]
    InvalidResponse(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("{0}")]
    Misconfigured(String),
    #[error("mock has no script for request {digest}")]
    Unscripted { digest: String },
}

/// Something that turns a chat request into assistant text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

/// A configured handle for one role. Cheap to clone and safe to share across
/// threads.
#[derive(Clone)]
pub struct ChatEndpoint {
    role: Role,
    model: String,
    params: SamplingParams,
    mode: EndpointMode,
    backend: Option<Arc<dyn ChatBackend>>,
    cache: Option<Arc<ReplayCache>>,
    backend_calls: Arc<AtomicUsize>,
}

impl fmt::Debug for ChatEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatEndpoint")
            .field("role", &self.role)
            .field("model", &self.model)
            .field("mode", &self.mode)
            .field("params", &self.params)
            .finish()
    }
}

impl ChatEndpoint {
    pub fn live(role: Role, model: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Self::build(role, model, EndpointMode::Live, Some(backend), None)
    }

    pub fn record(
        role: Role,
        model: impl Into<String>,
        backend: Arc<dyn ChatBackend>,
        cache: Arc<ReplayCache>,
    ) -> Self {
        Self::build(role, model, EndpointMode::Record, Some(backend), Some(cache))
    }

    pub fn replay(role: Role, model: impl Into<String>, cache: Arc<ReplayCache>) -> Self {
        Self::build(role, model, EndpointMode::Replay, None, Some(cache))
    }

    pub fn mock(role: Role, model: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Self::build(role, model, EndpointMode::Mock, Some(backend), None)
    }

    fn build(
        role: Role,
        model: impl Into<String>,
        mode: EndpointMode,
        backend: Option<Arc<dyn ChatBackend>>,
        cache: Option<Arc<ReplayCache>>,
    ) -> Self {
        ChatEndpoint {
            role,
            model: model.into(),
            params: SamplingParams::default(),
            mode,
            backend,
            cache,
            backend_calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_params(mut self, params: SamplingParams) -> Self {
        self.params = params;
        self
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn mode(&self) -> EndpointMode {
        self.mode
    }

    pub fn params(&self) -> &SamplingParams {
        &self.params
    }

    /// Number of requests that reached the backend (network or mock).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn request(
        &self,
        messages: Vec<Message>,
        tools: Option<Value>,
        params: Option<&SamplingParams>,
    ) -> ChatRequest {
        ChatRequest {
            role: self.role,
            model: self.model.clone(),
            messages,
            tools,
            params: params.unwrap_or(&self.params).clone(),
        }
    }

    pub fn chat(&self, messages: Vec<Message>) -> Result<String, EndpointError> {
        self.send(&self.request(messages, None, None))
    }

    pub fn send(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        if request.messages.is_empty() {
            return Err(EndpointError::Misconfigured("chat request has no messages".into()));
        }
        match self.mode {
            EndpointMode::Live | EndpointMode::Mock => self.call_backend(request),
            EndpointMode::Replay => {
                let cache = self.require_cache()?;
                let digest = request.digest();
                cache
                    .get(&digest)
                    .ok_or(EndpointError::CacheMiss { digest })
            }
            EndpointMode::Record => {
                let cache = self.require_cache()?;
                let digest = request.digest();
                if let Some(hit) = cache.get(&digest) {
                    return Ok(hit);
                }
                let response = self.call_backend(request)?;
                cache
                    .insert(request, &response)
                    .map_err(|e| EndpointError::Cache(e.to_string()))?;
                Ok(response)
            }
        }
    }

    fn call_backend(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| EndpointError::Misconfigured(format!("{} endpoint has no backend", self.role)))?;
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        backend.complete(request)
    }

    fn require_cache(&self) -> Result<&ReplayCache, EndpointError> {
        self.cache
            .as_deref()
            .ok_or_else(|| EndpointError::Misconfigured(format!("{} endpoint has no cache", self.role)))
    }
}
