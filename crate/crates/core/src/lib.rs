//! Runtime and evaluation harness for agents that learn to manage a
//! core/semantic/episodic memory through reinforcement learning.
//!
//! The pipeline: a policy reads a chunk and emits tool calls
//! ([`toolcall`]); the calls update a [`memory::MemorySnapshot`]; after the
//! last chunk the memory is scored by retrieval-augmented QA ([`qa`]); the
//! per-step rewards and group advantages ([`reward`]) are assembled by
//! [`rollout`] into trainer-ready records.

pub mod config;
pub mod dataset;
pub mod llm;
pub mod memory;
pub mod metrics;
pub mod prompts;
pub mod qa;
pub mod retrieval;
pub mod reward;
pub mod rollout;
pub mod timestamp;
pub mod tokenizer;
pub mod toolcall;

pub use memory::{MemoryEntry, MemoryOp, MemorySnapshot, MemoryType, OpError, PoolKind};
pub use timestamp::Timestamp;
pub use tokenizer::{Tokenizer, WhitespaceTokenizer};
