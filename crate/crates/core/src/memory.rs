//! Three-tier memory state and the transition function that applies write
//! operations to it.
//!
//! A [`MemorySnapshot`] is an immutable value: [`MemorySnapshot::apply_op`]
//! returns a new snapshot and never touches its receiver, so a rollout's
//! memory lineage can be replayed and compared step by step.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timestamp::Timestamp;
use crate::tokenizer::{Tokenizer, WhitespaceTokenizer};

pub const DEFAULT_CORE_LIMIT: usize = 512;
pub const SNAPSHOT_FORMAT: &str = "agentmem-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Placeholder rendered for an empty memory block.
pub const EMPTY_BLOCK: &str = "(empty)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryType {
    Core,
    Semantic,
    Episodic,
}

impl MemoryType {
    pub fn as_str(&self) -> &'static str {
        match self {
            MemoryType::Core => "core",
            MemoryType::Semantic => "semantic",
            MemoryType::Episodic => "episodic",
        }
    }

    pub fn pool(&self) -> Option<PoolKind> {
        match self {
            MemoryType::Core => None,
            MemoryType::Semantic => Some(PoolKind::Semantic),
            MemoryType::Episodic => Some(PoolKind::Episodic),
        }
    }
}

impl fmt::Display for MemoryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MemoryType {
    type Err = OpError;

    /// Only the three bare names are accepted; `semantic_memory` and friends
    /// are rejected.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "core" => Ok(MemoryType::Core),
            "semantic" => Ok(MemoryType::Semantic),
            "episodic" => Ok(MemoryType::Episodic),
            other => Err(OpError::InvalidType(format!("unknown memory_type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Semantic,
    Episodic,
}

impl PoolKind {
    pub fn memory_type(&self) -> MemoryType {
        match self {
            PoolKind::Semantic => MemoryType::Semantic,
            PoolKind::Episodic => MemoryType::Episodic,
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.memory_type().as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: u64,
    pub kind: PoolKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Timestamp>,
    pub token_count: usize,
}

impl MemoryEntry {
    /// `[id] text`, with episodic entries carrying their timestamp.
    pub fn render(&self) -> String {
        match &self.timestamp {
            Some(ts) => format!("[{}] ({}) {}", self.id, ts, self.text),
            None => format!("[{}] {}", self.id, self.text),
        }
    }
}

/// A single structured write action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum MemoryOp {
    Insert {
        memory_type: MemoryType,
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timestamp: Option<Timestamp>,
    },
    Update {
        memory_type: MemoryType,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timestamp: Option<Timestamp>,
    },
    Delete {
        memory_type: MemoryType,
        id: u64,
    },
}

impl MemoryOp {
    pub fn memory_type(&self) -> MemoryType {
        match self {
            MemoryOp::Insert { memory_type, .. }
            | MemoryOp::Update { memory_type, .. }
            | MemoryOp::Delete { memory_type, .. } => *memory_type,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MemoryOp::Insert { .. } => "memory_insert",
            MemoryOp::Update { .. } => "memory_update",
            MemoryOp::Delete { .. } => "memory_delete",
        }
    }

    /// Text written by the op, if any.
    pub fn content(&self) -> Option<&str> {
        match self {
            MemoryOp::Insert { content, .. } | MemoryOp::Update { content, .. } => Some(content),
            MemoryOp::Delete { .. } => None,
        }
    }

    pub fn semantic(content: impl Into<String>) -> Self {
        MemoryOp::Insert {
            memory_type: MemoryType::Semantic,
            content: content.into(),
            timestamp: None,
        }
    }

    pub fn episodic(content: impl Into<String>, timestamp: Timestamp) -> Self {
        MemoryOp::Insert {
            memory_type: MemoryType::Episodic,
            content: content.into(),
            timestamp: Some(timestamp),
        }
    }

    pub fn core(content: impl Into<String>) -> Self {
        MemoryOp::Update {
            memory_type: MemoryType::Core,
            id: None,
            content: content.into(),
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum OpError {
    #[error("no {pool} entry with id {id}")]
    UnknownId { pool: PoolKind, id: u64 },
    #[error("id {id} belongs to the {actual} pool, not {requested}")]
    WrongPool {
        id: u64,
        requested: PoolKind,
        actual: PoolKind,
    },
    #[error("invalid memory type: {0}")]
    InvalidType(String),
    #[error("episodic entries require a timestamp")]
    MissingTimestamp,
    #[error("semantic entries do not take a timestamp")]
    UnexpectedTimestamp,
    #[error("core memory supports update only")]
    CoreInsertOrDelete,
    #[error("entry content is empty")]
    EmptyContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("core_limit must be positive")]
    ZeroCoreLimit,
    #[error("unsupported snapshot format {format:?} version {version}")]
    SchemaVersionMismatch { format: String, version: u64 },
    #[error("corrupt snapshot payload: {0}")]
    CorruptPayload(String),
}

/// Outcome of a successful [`MemorySnapshot::apply_op`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub snapshot: MemorySnapshot,
    /// Id of the inserted, updated or deleted entry (`None` for core).
    pub id: Option<u64>,
    /// Set when a core update was cut down to the core budget.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorySnapshot {
    core: String,
    core_tokens: usize,
    semantic: BTreeMap<u64, MemoryEntry>,
    episodic: BTreeMap<u64, MemoryEntry>,
    next_id: u64,
    core_limit: usize,
}

impl Default for MemorySnapshot {
    fn default() -> Self {
        MemorySnapshot::new(DEFAULT_CORE_LIMIT).expect("default core limit is positive")
    }
}

impl MemorySnapshot {
    /// An empty memory with the given core budget.
    pub fn new(core_limit: usize) -> Result<Self, SnapshotError> {
        if core_limit == 0 {
            return Err(SnapshotError::ZeroCoreLimit);
        }
        Ok(MemorySnapshot {
            core: String::new(),
            core_tokens: 0,
            semantic: BTreeMap::new(),
            episodic: BTreeMap::new(),
            next_id: 1,
            core_limit,
        })
    }

    pub fn core(&self) -> &str {
        &self.core
    }

    pub fn core_tokens(&self) -> usize {
        self.core_tokens
    }

    pub fn core_limit(&self) -> usize {
        self.core_limit
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn pool(&self, kind: PoolKind) -> &BTreeMap<u64, MemoryEntry> {
        match kind {
            PoolKind::Semantic => &self.semantic,
            PoolKind::Episodic => &self.episodic,
        }
    }

    pub fn semantic(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.semantic.values()
    }

    pub fn episodic(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.episodic.values()
    }

    pub fn get(&self, id: u64) -> Option<&MemoryEntry> {
        self.semantic.get(&id).or_else(|| self.episodic.get(&id))
    }

    pub fn is_empty(&self) -> bool {
        self.core.is_empty() && self.semantic.is_empty() && self.episodic.is_empty()
    }

    /// Core tokens plus the token counts of every pooled entry.
    pub fn total_tokens(&self) -> usize {
        self.core_tokens
            + self.semantic.values().map(|e| e.token_count).sum::<usize>()
            + self.episodic.values().map(|e| e.token_count).sum::<usize>()
    }

    /// Applies `op` under the default tokenizer.
    pub fn apply(&self, op: &MemoryOp) -> Result<Applied, OpError> {
        self.apply_op(op, &WhitespaceTokenizer)
    }

    pub fn apply_op(&self, op: &MemoryOp, tok: &dyn Tokenizer) -> Result<Applied, OpError> {
        match op {
            MemoryOp::Insert {
                memory_type,
                content,
                timestamp,
            } => {
                let pool = memory_type.pool().ok_or(OpError::CoreInsertOrDelete)?;
                check_content(content)?;
                let timestamp = check_timestamp(pool, *timestamp, None)?;
                let id = self.next_id;
                let mut next = self.clone();
                next.next_id += 1;
                next.pool_mut(pool).insert(
                    id,
                    MemoryEntry {
                        id,
                        kind: pool,
                        text: content.clone(),
                        timestamp,
                        token_count: tok.count(content),
                    },
                );
                Ok(Applied {
                    snapshot: next,
                    id: Some(id),
                    truncated: false,
                })
            }
            MemoryOp::Update {
                memory_type: MemoryType::Core,
                id,
                content,
                timestamp,
            } => {
                if id.is_some() {
                    return Err(OpError::InvalidType("core update takes no id".into()));
                }
                if timestamp.is_some() {
                    return Err(OpError::UnexpectedTimestamp);
                }
                let kept = tok.truncate(content, self.core_limit);
                let truncated = kept.len() < content.len() && !content[kept.len()..].trim().is_empty();
                let kept = if truncated { kept.trim_end() } else { content.as_str() };
                let mut next = self.clone();
                next.core = kept.to_string();
                next.core_tokens = tok.count(kept);
                Ok(Applied {
                    snapshot: next,
                    id: None,
                    truncated,
                })
            }
            MemoryOp::Update {
                memory_type,
                id,
                content,
                timestamp,
            } => {
                let pool = memory_type.pool().expect("core handled above");
                let id = id.ok_or_else(|| OpError::InvalidType(format!("{pool} update requires an id")))?;
                check_content(content)?;
                let existing = self.locate(pool, id)?;
                let timestamp = check_timestamp(pool, *timestamp, existing.timestamp)?;
                let mut next = self.clone();
                let entry = next.pool_mut(pool).get_mut(&id).expect("located above");
                entry.text = content.clone();
                entry.timestamp = timestamp;
                entry.token_count = tok.count(content);
                Ok(Applied {
                    snapshot: next,
                    id: Some(id),
                    truncated: false,
                })
            }
            MemoryOp::Delete { memory_type, id } => {
                let pool = memory_type.pool().ok_or(OpError::CoreInsertOrDelete)?;
                self.locate(pool, *id)?;
                let mut next = self.clone();
                next.pool_mut(pool).remove(id);
                Ok(Applied {
                    snapshot: next,
                    id: Some(*id),
                    truncated: false,
                })
            }
        }
    }

    fn locate(&self, pool: PoolKind, id: u64) -> Result<&MemoryEntry, OpError> {
        if let Some(entry) = self.pool(pool).get(&id) {
            return Ok(entry);
        }
        let other = match pool {
            PoolKind::Semantic => PoolKind::Episodic,
            PoolKind::Episodic => PoolKind::Semantic,
        };
        if self.pool(other).contains_key(&id) {
            Err(OpError::WrongPool {
                id,
                requested: pool,
                actual: other,
            })
        } else {
            Err(OpError::UnknownId { pool, id })
        }
    }

    fn pool_mut(&mut self, kind: PoolKind) -> &mut BTreeMap<u64, MemoryEntry> {
        match kind {
            PoolKind::Semantic => &mut self.semantic,
            PoolKind::Episodic => &mut self.episodic,
        }
    }

    /// Episodic entries in chronological order, ties broken by id.
    pub fn episodic_chronological(&self) -> Vec<&MemoryEntry> {
        let mut entries: Vec<&MemoryEntry> = self.episodic.values().collect();
        entries.sort_by_key(|e| (e.timestamp, e.id));
        entries
    }

    pub fn render(&self) -> RenderedMemory {
        RenderedMemory {
            core: if self.core.trim().is_empty() {
                EMPTY_BLOCK.to_string()
            } else {
                self.core.clone()
            },
            episodic: render_entries(self.episodic_chronological()),
            semantic: render_entries(self.semantic.values()),
        }
    }

    fn to_doc(&self) -> SnapshotDoc {
        SnapshotDoc {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION as u64,
            core_limit: self.core_limit,
            next_id: self.next_id,
            core: self.core.clone(),
            core_tokens: self.core_tokens,
            semantic: self.semantic.values().cloned().map(StoredEntry::from).collect(),
            episodic: self.episodic.values().cloned().map(StoredEntry::from).collect(),
        }
    }

    /// Versioned, pretty-printed document with a stable field order.
    pub fn encode(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.to_doc()).expect("snapshot document serializes");
        out.push('\n');
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SnapshotError> {
        Self::decode_with(bytes, &WhitespaceTokenizer)
    }

    /// Decodes and validates a document produced by [`MemorySnapshot::encode`].
    /// Token counts are rechecked under `tok`.
    pub fn decode_with(bytes: &[u8], tok: &dyn Tokenizer) -> Result<Self, SnapshotError> {
        let corrupt = |m: String| SnapshotError::CorruptPayload(m);
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or_default();
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if format != SNAPSHOT_FORMAT || version != SNAPSHOT_VERSION as u64 {
            return Err(SnapshotError::SchemaVersionMismatch {
                format: format.to_string(),
                version,
            });
        }
        let doc: SnapshotDoc = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        if doc.core_limit == 0 {
            return Err(corrupt("core_limit is zero".into()));
        }
        if doc.next_id == 0 {
            return Err(corrupt("next_id is zero".into()));
        }
        let core_tokens = tok.count(&doc.core);
        if core_tokens != doc.core_tokens {
            return Err(corrupt("core token count mismatch".into()));
        }
        if core_tokens > doc.core_limit {
            return Err(corrupt("core exceeds core_limit".into()));
        }
        let mut snapshot = MemorySnapshot::new(doc.core_limit)?;
        snapshot.core = doc.core;
        snapshot.core_tokens = core_tokens;
        snapshot.next_id = doc.next_id;
        for (kind, stored) in doc
            .semantic
            .into_iter()
            .map(|e| (PoolKind::Semantic, e))
            .chain(doc.episodic.into_iter().map(|e| (PoolKind::Episodic, e)))
        {
            let entry = stored.into_entry(kind);
            if entry.id == 0 || entry.id >= snapshot.next_id {
                return Err(corrupt(format!("entry id {} outside [1, next_id)", entry.id)));
            }
            if snapshot.get(entry.id).is_some() {
                return Err(corrupt(format!("duplicate entry id {}", entry.id)));
            }
            if entry.text.trim().is_empty() {
                return Err(corrupt(format!("entry {} has empty text", entry.id)));
            }
            match (kind, entry.timestamp.is_some()) {
                (PoolKind::Episodic, false) => {
                    return Err(corrupt(format!("episodic entry {} lacks a timestamp", entry.id)))
                }
                (PoolKind::Semantic, true) => {
                    return Err(corrupt(format!("semantic entry {} has a timestamp", entry.id)))
                }
                _ => {}
            }
            if entry.token_count != tok.count(&entry.text) {
                return Err(corrupt(format!("entry {} token count mismatch", entry.id)));
            }
            snapshot.pool_mut(kind).insert(entry.id, entry);
        }
        Ok(snapshot)
    }
}

impl Serialize for MemorySnapshot {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MemorySnapshot {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        let bytes = serde_json::to_vec(&value).map_err(serde::de::Error::custom)?;
        MemorySnapshot::decode(&bytes).map_err(serde::de::Error::custom)
    }
}

fn check_content(content: &str) -> Result<(), OpError> {
    if content.trim().is_empty() {
        Err(OpError::EmptyContent)
    } else {
        Ok(())
    }
}

fn check_timestamp(
    pool: PoolKind,
    given: Option<Timestamp>,
    existing: Option<Timestamp>,
) -> Result<Option<Timestamp>, OpError> {
    match pool {
        PoolKind::Semantic if given.is_some() => Err(OpError::UnexpectedTimestamp),
        PoolKind::Semantic => Ok(None),
        PoolKind::Episodic => given.or(existing).map(Some).ok_or(OpError::MissingTimestamp),
    }
}

/// One line per entry, or the empty placeholder.
pub fn render_entries<'a>(entries: impl IntoIterator<Item = &'a MemoryEntry>) -> String {
    let lines: Vec<String> = entries.into_iter().map(MemoryEntry::render).collect();
    if lines.is_empty() {
        EMPTY_BLOCK.to_string()
    } else {
        lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedMemory {
    pub core: String,
    pub episodic: String,
    pub semantic: String,
}

impl RenderedMemory {
    /// The three blocks as one labeled section, used in the memorize prompt.
    pub fn to_text(&self) -> String {
        format!(
            "<core_memory>\n{}\n</core_memory>\n\n<episodic_memory>\n{}\n</episodic_memory>\n\n<semantic_memory>\n{}\n</semantic_memory>",
            self.core, self.episodic, self.semantic
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotDoc {
    format: String,
    version: u64,
    core_limit: usize,
    next_id: u64,
    core: String,
    core_tokens: usize,
    semantic: Vec<StoredEntry>,
    episodic: Vec<StoredEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredEntry {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<Timestamp>,
    text: String,
    token_count: usize,
}

impl From<MemoryEntry> for StoredEntry {
    fn from(e: MemoryEntry) -> Self {
        StoredEntry {
            id: e.id,
            timestamp: e.timestamp,
            text: e.text,
            token_count: e.token_count,
        }
    }
}

impl StoredEntry {
    fn into_entry(self, kind: PoolKind) -> MemoryEntry {
        MemoryEntry {
            id: self.id,
            kind,
            text: self.text,
            timestamp: self.timestamp,
            token_count: self.token_count,
        }
    }
}
