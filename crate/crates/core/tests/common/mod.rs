#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use agentmem::config::RunConfig;
use agentmem::dataset::{self, Instance};
use agentmem::llm::mock::{self, MockBackend};
use agentmem::llm::{ChatEndpoint, EndpointError, Role};
use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn toy_instance() -> Instance {
    dataset::load_instances(&fixture("toy_instance.jsonl"), false)
        .unwrap()
        .instances
        .remove(0)
}

pub fn toy_ledger() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("toy_ledger.json")).unwrap()).unwrap()
}

fn new_chunk(system: &str) -> &str {
    system
        .split_once("<new_chunk>\n")
        .and_then(|(_, rest)| rest.rsplit_once("\n</new_chunk>"))
        .map(|(chunk, _)| chunk)
        .unwrap_or("")
}

/// Replies from `toy_policy.json`, picked by rollout seed and by which chunk
/// the prompt carries.
pub fn toy_policy(instance: &Instance) -> ChatEndpoint {
    let script: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("toy_policy.json")).unwrap()).unwrap();
    let responses: Vec<Vec<String>> = serde_json::from_value(script["responses"].clone()).unwrap();
    let chunks: Vec<String> = instance.chunks.iter().map(|c| c.text.clone()).collect();
    let backend = MockBackend::from_fn(move |req| {
        let rollout = req.params.seed.unwrap_or(0) as usize;
        let chunk = new_chunk(&req.messages[0].content);
        let t = chunks
            .iter()
            .position(|c| c == chunk)
            .ok_or_else(|| EndpointError::InvalidResponse("unknown chunk".into()))?;
        Ok(responses[rollout % responses.len()][t].clone())
    });
    ChatEndpoint::mock(Role::Policy, "toy-policy", Arc::new(backend))
}

/// Echoes its system message, so an answer contains whatever was retrieved.
pub fn echo_generator() -> ChatEndpoint {
    ChatEndpoint::mock(Role::Generator, "echo", Arc::new(mock::builtin("echo").unwrap()))
}

/// Rejects any content mentioning "core memory"; accepts everything else.
pub fn rule_judge() -> ChatEndpoint {
    let backend = MockBackend::from_fn(|req| {
        let content = &req.messages.last().unwrap().content;
        let valid = !content.to_lowercase().contains("core memory");
        Ok(format!(
            "```json\n{{\n  \"VALID\": {valid},\n  \"ISSUES\": [],\n  \"EXPLANATION\": \"rule\"\n}}\n```"
        ))
    });
    ChatEndpoint::mock(Role::Judge, "rule-judge", Arc::new(backend))
}

pub fn toy_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.hyper.group_size = 2;
    config.hyper.seed = 0;
    config
}
