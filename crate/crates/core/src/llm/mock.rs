use std::collections::HashMap;

use super::{ChatBackend, ChatRequest, EndpointError};

/// Responses keyed by request digest.
#[derive(Debug, Clone, Default)]
pub struct ScriptTable {
    responses: HashMap<String, String>,
}

impl ScriptTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request: &ChatRequest, response: impl Into<String>) {
        self.responses.insert(request.digest(), response.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(digest.into(), response.into());
    }

    pub fn get(&self, digest: &str) -> Option<&String> {
        self.responses.get(digest)
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync;

/// In-process backend for offline runs: a digest script table, a closure, or
/// the table with a closure fallback.
pub struct MockBackend {
    table: ScriptTable,
    fallback: Option<Box<Responder>>,
}

impl MockBackend {
    pub fn script(table: ScriptTable) -> Self {
        MockBackend {
            table,
            fallback: None,
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync + 'static,
    {
        MockBackend {
            table: ScriptTable::new(),
            fallback: Some(Box::new(f)),
        }
    }

    pub fn with_fallback<F>(mut self, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync + 'static,
    {
        self.fallback = Some(Box::new(f));
        self
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let digest = request.digest();
        if let Some(hit) = self.table.get(&digest) {
            return Ok(hit.clone());
        }
        match &self.fallback {
            Some(f) => f(request),
            None => Err(EndpointError::Unscripted { digest }),
        }
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_MOCKS: &[&str] = &["silent", "copy-chunk", "echo", "accept", "reject"];

fn system_text(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .find(|m| m.role == "system")
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

fn verdict(valid: bool, request: &ChatRequest) -> String {
    let asks_json = request.messages.iter().any(|m| m.content.contains("\"VALID\""));
    if asks_json {
        format!("```json\n{{\n  \"VALID\": {valid},\n  \"ISSUES\": [],\n  \"EXPLANATION\": \"mock verdict\"\n}}\n```")
    } else if valid {
        "yes".to_string()
    } else {
        "no".to_string()
    }
}

/// Canned backends for smoke runs without a model:
///
/// - `silent`: empty reply (a policy that never calls a tool)
/// - `copy-chunk`: one semantic insert holding the chunk from the memorize prompt
/// - `echo`: returns the system message (an answerer that quotes its memory)
/// - `accept` / `reject`: judge that always says valid/yes or invalid/no
pub fn builtin(name: &str) -> Option<MockBackend> {
    let backend = match name {
        "silent" => MockBackend::from_fn(|_| Ok(String::new())),
        "copy-chunk" => MockBackend::from_fn(|req| {
            let system = system_text(req);
            let chunk = system
                .split_once("<new_chunk>\n")
                .and_then(|(_, rest)| rest.rsplit_once("\n</new_chunk>"))
                .map(|(chunk, _)| chunk.trim())
                .unwrap_or("");
            if chunk.is_empty() {
                return Ok(String::new());
            }
            Ok(crate::toolcall::print_call(&crate::memory::MemoryOp::semantic(chunk)))
        }),
        "echo" => MockBackend::from_fn(|req| Ok(system_text(req).to_string())),
        "accept" => MockBackend::from_fn(|req| Ok(verdict(true, req))),
        "reject" => MockBackend::from_fn(|req| Ok(verdict(false, req))),
        _ => return None,
    };
    Some(backend)
}
