use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, EndpointError};
use crate::toolcall::{CLOSE_TAG, OPEN_TAG};

/// Chat-completions client (`POST {base_url}/chat/completions`).
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration, max_retries: u32) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            max_retries,
            backoff: Duration::from_millis(500),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &Value) -> Result<String, EndpointError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(classify)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(classify)?;
        if !(200..300).contains(&status) {
            return Err(EndpointError::Status { status, body: text });
        }
        parse_completion(&text)
    }
}

fn classify(err: ureq::Error) -> EndpointError {
    match err {
        ureq::Error::Timeout(_) => EndpointError::Timeout { attempts: 1 },
        other => EndpointError::Transport(other.to_string()),
    }
}

fn retryable(err: &EndpointError) -> bool {
    match err {
        EndpointError::Timeout { .. } | EndpointError::Transport(_) => true,
        EndpointError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

/// The JSON body sent for `request`. Streaming is always off.
pub fn request_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages,
        "stream": false,
    });
    let obj = body.as_object_mut().expect("object literal");
    if let Some(tools) = &request.tools {
        obj.insert("tools".into(), tools.clone());
    }
    let p = &request.params;
    if let Some(t) = p.temperature {
        obj.insert("temperature".into(), json!(t));
    }
    if let Some(t) = p.top_p {
        obj.insert("top_p".into(), json!(t));
    }
    if let Some(m) = p.max_tokens {
        obj.insert("max_tokens".into(), json!(m));
    }
    if let Some(s) = p.seed {
        obj.insert("seed".into(), json!(s));
    }
    body
}

/// Extracts the assistant text from a chat-completions response. When the
/// server already split out structured `tool_calls`, they are re-emitted as
/// `<tool_call>` blocks after any text content.
pub fn parse_completion(body: &str) -> Result<String, EndpointError> {
    let invalid = |m: &str| EndpointError::InvalidResponse(m.to_string());
    let value: Value = serde_json::from_str(body).map_err(|e| invalid(&e.to_string()))?;
    let message = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| invalid("missing choices[0].message"))?;
    let mut text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        None | Some(Value::Null) => String::new(),
        Some(_) => return Err(invalid("content is not a string")),
    };
    if let Some(Value::Array(calls)) = message.get("tool_calls") {
        for call in calls {
            let function = call.get("function").ok_or_else(|| invalid("tool call without function"))?;
            let name = function
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| invalid("tool call without name"))?;
            let arguments = match function.get("arguments") {
                Some(Value::String(s)) => serde_json::from_str(s).unwrap_or(Value::String(s.clone())),
                Some(other) => other.clone(),
                None => Value::Object(Default::default()),
            };
            let block = json!({"name": name, "arguments": arguments});
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&format!("{OPEN_TAG}\n{block}\n{CLOSE_TAG}"));
        }
    }
    Ok(text)
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let body = request_body(request);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) if retryable(&e) && attempts <= self.max_retries => {
                    log::warn!("{} request failed (attempt {attempts}): {e}", request.role);
                    std::thread::sleep(self.backoff * attempts);
                }
                Err(EndpointError::Timeout { .. }) => return Err(EndpointError::Timeout { attempts }),
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Message, Role, SamplingParams};

    #[test]
    fn completion_text() {
        let body = r#"{"choices":[{"index":0,"message":{"role":"assistant","content":"Paris"}}]}"#;
        assert_eq!(parse_completion(body).unwrap(), "Paris");
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
        assert!(parse_completion("not json").is_err());
    }

    #[test]
    fn structured_tool_calls_become_blocks() {
        let body = r#"{"choices":[{"message":{"content":null,"tool_calls":[{"type":"function","function":{"name":"memory_insert","arguments":"{\"memory_type\":\"semantic\",\"content\":\"x\"}"}}]}}]}"#;
        let text = parse_completion(body).unwrap();
        let calls = crate::toolcall::parse_calls(&text);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].op, Some(crate::memory::MemoryOp::semantic("x")));
    }

    #[test]
    fn body_carries_params() {
        let req = ChatRequest {
            role: Role::Policy,
            model: "qwen".into(),
            messages: vec![Message::system("s")],
            tools: None,
            params: SamplingParams {
                temperature: Some(0.7),
                seed: Some(3),
                ..Default::default()
            },
        };
        let body = request_body(&req);
        assert_eq!(body["model"], "qwen");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["seed"], 3);
        assert_eq!(body["stream"], false);
        assert!(body.get("top_p").is_none());
    }
}
