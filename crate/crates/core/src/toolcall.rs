//! The tool-call dialect spoken by the policy, and step execution.
//!
//! A response may contain any number of blocks of the form
//!
//! ```text
//! <tool_call>
//! {"name":"memory_insert","arguments":{"memory_type":"semantic","content":"..."}}
//! </tool_call>
//! ```
//!
//! Everything outside the blocks is treated as free-form reasoning and
//! ignored. Each block becomes one [`ParsedCall`]; a block that does not
//! decode keeps its position and carries a [`ParseError`] instead of an op.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::memory::{MemoryOp, MemorySnapshot, MemoryType, OpError};
use crate::timestamp::Timestamp;
use crate::tokenizer::Tokenizer;

pub const OPEN_TAG: &str = "<tool_call>";
pub const CLOSE_TAG: &str = "</tool_call>";

pub const INSERT: &str = "memory_insert";
pub const UPDATE: &str = "memory_update";
pub const DELETE: &str = "memory_delete";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseError {
    #[error("tool_call block is not closed")]
    Unterminated,
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("tool call must be a JSON object with name and arguments")]
    NotAnObject,
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("missing argument {0:?}")]
    MissingArgument(String),
    #[error("unexpected argument {0:?}")]
    UnexpectedArgument(String),
    #[error("invalid value for {field:?}: {reason}")]
    InvalidArgument { field: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCall {
    /// The exact source span, tags included.
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<MemoryOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<ParseError>,
}

impl ParsedCall {
    pub fn parsed(raw: impl Into<String>, op: MemoryOp) -> Self {
        ParsedCall {
            raw: raw.into(),
            op: Some(op),
            parse_error: None,
        }
    }

    pub fn failed(raw: impl Into<String>, error: ParseError) -> Self {
        ParsedCall {
            raw: raw.into(),
            op: None,
            parse_error: Some(error),
        }
    }
}

/// Splits a policy response into its tool-call blocks.
pub fn parse_calls(response: &str) -> Vec<ParsedCall> {
    let mut calls = Vec::new();
    let mut rest = response;
    while let Some(start) = rest.find(OPEN_TAG) {
        let after_open = &rest[start + OPEN_TAG.len()..];
        match after_open.find(CLOSE_TAG) {
            Some(end) => {
                let body = &after_open[..end];
                let raw_len = OPEN_TAG.len() + end + CLOSE_TAG.len();
                let raw = &rest[start..start + raw_len];
                calls.push(match parse_body(body) {
                    Ok(op) => ParsedCall::parsed(raw, op),
                    Err(e) => ParsedCall::failed(raw, e),
                });
                rest = &rest[start + raw_len..];
            }
            None => {
                calls.push(ParsedCall::failed(&rest[start..], ParseError::Unterminated));
                break;
            }
        }
    }
    calls
}

fn parse_body(body: &str) -> Result<MemoryOp, ParseError> {
    let value: Value =
        serde_json::from_str(body.trim()).map_err(|e| ParseError::Json(e.to_string()))?;
    let Value::Object(mut call) = value else {
        return Err(ParseError::NotAnObject);
    };
    let name = match call.remove("name") {
        Some(Value::String(name)) => name,
        Some(_) => {
            return Err(ParseError::InvalidArgument {
                field: "name".into(),
                reason: "expected a string".into(),
            })
        }
        None => return Err(ParseError::NotAnObject),
    };
    let args = match call.remove("arguments") {
        Some(Value::Object(args)) => args,
        // some servers hand back arguments as an encoded JSON string
        Some(Value::String(encoded)) => match serde_json::from_str(&encoded) {
            Ok(Value::Object(args)) => args,
            _ => {
                return Err(ParseError::InvalidArgument {
                    field: "arguments".into(),
                    reason: "expected an object".into(),
                })
            }
        },
        Some(_) => {
            return Err(ParseError::InvalidArgument {
                field: "arguments".into(),
                reason: "expected an object".into(),
            })
        }
        None => return Err(ParseError::MissingArgument("arguments".into())),
    };
    if let Some(key) = call.keys().next() {
        return Err(ParseError::UnexpectedArgument(key.clone()));
    }

    let mut args = Args(args);
    let op = match name.as_str() {
        INSERT => MemoryOp::Insert {
            memory_type: args.memory_type()?,
            content: args.required_string("content")?,
            timestamp: args.timestamp()?,
        },
        UPDATE => {
            let memory_type = args.memory_type()?;
            let id = args.memory_id()?;
            if id.is_none() && memory_type != MemoryType::Core {
                return Err(ParseError::MissingArgument("memory_id".into()));
            }
            MemoryOp::Update {
                memory_type,
                id,
                content: args.required_string("content")?,
                timestamp: args.timestamp()?,
            }
        }
        DELETE => MemoryOp::Delete {
            memory_type: args.memory_type()?,
            id: args
                .memory_id()?
                .ok_or_else(|| ParseError::MissingArgument("memory_id".into()))?,
        },
        other => return Err(ParseError::UnknownFunction(other.to_string())),
    };
    args.finish()?;
    Ok(op)
}

struct Args(Map<String, Value>);

impl Args {
    fn memory_type(&mut self) -> Result<MemoryType, ParseError> {
        let raw = self.required_string("memory_type")?;
        raw.parse().map_err(|_| ParseError::InvalidArgument {
            field: "memory_type".into(),
            reason: format!("{raw:?} is not one of core, semantic, episodic"),
        })
    }

    fn required_string(&mut self, field: &str) -> Result<String, ParseError> {
        match self.0.remove(field) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(ParseError::InvalidArgument {
                field: field.into(),
                reason: "expected a string".into(),
            }),
            None => Err(ParseError::MissingArgument(field.into())),
        }
    }

    fn memory_id(&mut self) -> Result<Option<u64>, ParseError> {
        let invalid = || ParseError::InvalidArgument {
            field: "memory_id".into(),
            reason: "expected a positive integer".into(),
        };
        match self.0.remove("memory_id") {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => n.as_u64().filter(|&id| id > 0).map(Some).ok_or_else(invalid),
            Some(Value::String(s)) => s
                .trim()
                .parse::<u64>()
                .ok()
                .filter(|&id| id > 0)
                .map(Some)
                .ok_or_else(invalid),
            Some(_) => Err(invalid()),
        }
    }

    fn timestamp(&mut self) -> Result<Option<Timestamp>, ParseError> {
        match self.0.remove("timestamp") {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => {
                Timestamp::parse(&s)
                    .map(Some)
                    .map_err(|e| ParseError::InvalidArgument {
                        field: "timestamp".into(),
                        reason: e.to_string(),
                    })
            }
            Some(_) => Err(ParseError::InvalidArgument {
                field: "timestamp".into(),
                reason: "expected a string".into(),
            }),
        }
    }

    fn finish(self) -> Result<(), ParseError> {
        match self.0.into_iter().next() {
            Some((key, _)) => Err(ParseError::UnexpectedArgument(key)),
            None => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct CanonicalCall<'a> {
    name: &'a str,
    arguments: CanonicalArgs<'a>,
}

#[derive(Serialize)]
struct CanonicalArgs<'a> {
    memory_type: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    memory_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    content: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<String>,
}

/// Canonical rendering of one op as a tool-call block.
pub fn print_call(op: &MemoryOp) -> String {
    let (memory_id, timestamp) = match op {
        MemoryOp::Insert { timestamp, .. } => (None, *timestamp),
        MemoryOp::Update { id, timestamp, .. } => (*id, *timestamp),
        MemoryOp::Delete { id, .. } => (Some(*id), None),
    };
    let call = CanonicalCall {
        name: op.name(),
        arguments: CanonicalArgs {
            memory_type: op.memory_type().as_str(),
            memory_id,
            content: op.content(),
            timestamp: timestamp.map(|t| t.canonical()),
        },
    };
    let body = serde_json::to_string(&call).expect("canonical call serializes");
    format!("{OPEN_TAG}\n{body}\n{CLOSE_TAG}")
}

/// JSON-schema tool definitions for the three write functions, in the
/// chat-completions `tools` shape.
pub fn tool_definitions() -> Value {
    let memory_type = |allowed: &[&str]| {
        serde_json::json!({"type": "string", "enum": allowed})
    };
    serde_json::json!([
        {
            "type": "function",
            "function": {
                "name": INSERT,
                "description": "Add a new entry to semantic or episodic memory.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "memory_type": memory_type(&["semantic", "episodic"]),
                        "content": {"type": "string"},
                        "timestamp": {"type": "string", "description": "YYYY-MM-DD HH:MM, episodic only"}
                    },
                    "required": ["memory_type", "content"]
                }
            }
        },
        {
            "type": "function",
            "function": {
                "name": UPDATE,
                "description": "Rewrite the core memory, or replace the text of an existing semantic or episodic entry.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "memory_type": memory_type(&["core", "semantic", "episodic"]),
                        "memory_id": {"type": "integer", "description": "omit for core"},
                        "content": {"type": "string"},
                        "timestamp": {"type": "string", "description": "YYYY-MM-DD HH:MM, episodic only"}
                    },
                    "required": ["memory_type", "content"]
                }
            }
        },
        {
            "type": "function",
            "function": {
                "name": DELETE,
                "description": "Remove an entry from semantic or episodic memory.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "memory_type": memory_type(&["semantic", "episodic"]),
                        "memory_id": {"type": "integer"}
                    },
                    "required": ["memory_type", "memory_id"]
                }
            }
        }
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CallOutcome {
    ParseFailed,
    Rejected { error: OpError },
    Applied {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        truncated: bool,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        timestamp_repaired: bool,
    },
}

impl CallOutcome {
    pub fn succeeded(&self) -> bool {
        matches!(self, CallOutcome::Applied { .. })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOptions {
    /// Disables filling a missing episodic timestamp from the chunk.
    pub strict_timestamps: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepExecReport {
    pub calls: Vec<ParsedCall>,
    pub outcomes: Vec<CallOutcome>,
    pub snapshot_after: MemorySnapshot,
}

impl StepExecReport {
    /// K_t, the number of calls in the step.
    pub fn call_count(&self) -> usize {
        self.calls.len()
    }

    /// Per-call success indicators.
    pub fn exec_flags(&self) -> Vec<u8> {
        self.outcomes.iter().map(|o| o.succeeded() as u8).collect()
    }

    /// The op actually applied for each call, after timestamp repair.
    pub fn effective_ops(&self, chunk_timestamp: Option<Timestamp>) -> Vec<Option<MemoryOp>> {
        self.calls
            .iter()
            .zip(&self.outcomes)
            .map(|(call, outcome)| match (outcome, &call.op) {
                (CallOutcome::Applied { timestamp_repaired, .. }, Some(op)) => {
                    Some(if *timestamp_repaired {
                        repair(op, chunk_timestamp)
                    } else {
                        op.clone()
                    })
                }
                _ => None,
            })
            .collect()
    }
}

fn needs_repair(op: &MemoryOp) -> bool {
    matches!(
        op,
        MemoryOp::Insert {
            memory_type: MemoryType::Episodic,
            timestamp: None,
            ..
        }
    )
}

fn repair(op: &MemoryOp, chunk_timestamp: Option<Timestamp>) -> MemoryOp {
    match (op, chunk_timestamp) {
        (
            MemoryOp::Insert {
                memory_type,
                content,
                timestamp: None,
            },
            Some(ts),
        ) => MemoryOp::Insert {
            memory_type: *memory_type,
            content: content.clone(),
            timestamp: Some(ts),
        },
        _ => op.clone(),
    }
}

/// Applies the op-bearing calls in order. A call that fails leaves the
/// memory as it was; later calls run against the latest successful state.
pub fn execute_step(
    snapshot: &MemorySnapshot,
    calls: Vec<ParsedCall>,
    chunk_timestamp: Option<Timestamp>,
    options: ExecOptions,
    tok: &dyn Tokenizer,
) -> StepExecReport {
    let mut current = snapshot.clone();
    let mut outcomes = Vec::with_capacity(calls.len());
    for call in &calls {
        let Some(op) = &call.op else {
            outcomes.push(CallOutcome::ParseFailed);
            continue;
        };
        let repaired = !options.strict_timestamps && chunk_timestamp.is_some() && needs_repair(op);
        let effective = if repaired { repair(op, chunk_timestamp) } else { op.clone() };
        match current.apply_op(&effective, tok) {
            Ok(applied) => {
                outcomes.push(CallOutcome::Applied {
                    id: applied.id,
                    truncated: applied.truncated,
                    timestamp_repaired: repaired,
                });
                current = applied.snapshot;
            }
            Err(error) => outcomes.push(CallOutcome::Rejected { error }),
        }
    }
    StepExecReport {
        calls,
        outcomes,
        snapshot_after: current,
    }
}
