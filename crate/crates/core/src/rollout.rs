//! The memorization loop, group assembly, trace files and trainer export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Hyper, RunConfig};
use crate::dataset::Instance;
use crate::llm::{ChatEndpoint, EndpointError, Message};
use crate::memory::{MemorySnapshot, SnapshotError};
use crate::prompts;
use crate::qa::{self, Correctness, QaError};
use crate::reward::{self, ContentScore, GroupAdvantage, RewardBreakdown, RewardError};
use crate::timestamp::Timestamp;
use crate::tokenizer::Tokenizer;
use crate::toolcall::{self, ExecOptions, StepExecReport};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("chunk {t} has {tokens} tokens, over the limit of {limit}")]
    ChunkTooLarge { t: usize, tokens: usize, limit: usize },
    #[error("policy call for chunk {t}: {source}")]
    Policy {
        t: usize,
        #[source]
        source: EndpointError,
    },
    #[error("content judge for chunk {t}: {source}")]
    Judge {
        t: usize,
        #[source]
        source: EndpointError,
    },
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("rollout {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<RolloutError>,
    },
}

/// The memorize request for one chunk: a single system message holding the
/// rendered memory followed by the instruction.
pub fn build_memorize_prompt(snapshot: &MemorySnapshot, chunk_text: &str, max_new_tokens: usize) -> Vec<Message> {
    vec![Message::system(prompts::memorize_system(
        &snapshot.render(),
        chunk_text,
        max_new_tokens,
    ))]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_timestamp: Option<Timestamp>,
    pub prompt_digest: String,
    pub prompt: String,
    pub raw_response: String,
    pub report: StepExecReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub instance_id: String,
    pub rollout_index: usize,
    pub seed: u64,
    pub steps: Vec<TraceStep>,
    pub final_snapshot: MemorySnapshot,
    pub correctness: Correctness,
    pub content: Vec<ContentScore>,
    pub rewards: RewardBreakdown,
}

fn exec_options(hyper: &Hyper) -> ExecOptions {
    ExecOptions {
        strict_timestamps: hyper.strict_timestamps,
    }
}

/// Seed of the `index`-th rollout of a group.
pub fn rollout_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Endpoints a rollout talks to.
#[derive(Debug, Clone, Copy)]
pub struct Endpoints<'a> {
    pub policy: &'a ChatEndpoint,
    pub generator: &'a ChatEndpoint,
    pub judge: &'a ChatEndpoint,
}

/// Runs the policy over every chunk, then scores the final memory.
pub fn run_rollout(
    instance: &Instance,
    endpoints: Endpoints<'_>,
    hyper: &Hyper,
    rollout_index: usize,
    tok: &dyn Tokenizer,
) -> Result<Trace, RolloutError> {
    if let Some(limit) = hyper.max_chunk_tokens {
        for (t, chunk) in instance.chunks.iter().enumerate() {
            let tokens = tok.count(&chunk.text);
            if tokens > limit {
                return Err(RolloutError::ChunkTooLarge { t, tokens, limit });
            }
        }
    }
    let seed = rollout_seed(hyper.seed, rollout_index);
    let params = endpoints.policy.params().with_seed(seed);
    let tools = toolcall::tool_definitions();
    let mut snapshot = MemorySnapshot::new(hyper.core_limit)?;
    let mut steps = Vec::with_capacity(instance.chunks.len());
    for (t, chunk) in instance.chunks.iter().enumerate() {
        let messages = build_memorize_prompt(&snapshot, &chunk.text, hyper.max_new_tokens);
        let prompt = messages[0].content.clone();
        let request = endpoints.policy.request(messages, Some(tools.clone()), Some(&params));
        let raw_response = endpoints
            .policy
            .send(&request)
            .map_err(|source| RolloutError::Policy { t, source })?;
        let calls = toolcall::parse_calls(&raw_response);
        let report = toolcall::execute_step(&snapshot, calls, chunk.timestamp, exec_options(hyper), tok);
        snapshot = report.snapshot_after.clone();
        steps.push(TraceStep {
            t,
            chunk_timestamp: chunk.timestamp,
            prompt_digest: request.digest(),
            prompt,
            raw_response,
            report,
        });
    }
    let (correctness, content, rewards) = score_steps(instance, &steps, &snapshot, endpoints, hyper, tok)?;
    Ok(Trace {
        instance_id: instance.id.clone(),
        rollout_index,
        seed,
        steps,
        final_snapshot: snapshot,
        correctness,
        content,
        rewards,
    })
}

/// All rewards of a finished rollout. Depends only on the step reports, the
/// final memory and the (cached) generator and judge.
fn score_steps(
    instance: &Instance,
    steps: &[TraceStep],
    final_snapshot: &MemorySnapshot,
    endpoints: Endpoints<'_>,
    hyper: &Hyper,
    tok: &dyn Tokenizer,
) -> Result<(Correctness, Vec<ContentScore>, RewardBreakdown), RolloutError> {
    let correctness = qa::correctness_reward(
        instance,
        final_snapshot,
        endpoints.generator,
        Some(endpoints.judge),
        hyper.top_k,
    )?;
    let content = steps
        .iter()
        .map(|s| {
            reward::content_reward(&s.report, s.chunk_timestamp, endpoints.judge)
                .map_err(|source| RolloutError::Judge { t: s.t, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let r2 = steps.iter().map(|s| reward::tool_format_reward(&s.report)).collect();
    let r4 = content.iter().map(|c| c.r4).collect();
    let rewards = RewardBreakdown::assemble(
        correctness.r1,
        r2,
        r4,
        final_snapshot.total_tokens(),
        instance.input_tokens(tok),
        hyper.beta,
        hyper.gamma,
    )?;
    Ok((correctness, content, rewards))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub instance_id: String,
    pub dataset_tag: String,
    pub traces: Vec<Trace>,
    pub advantage: GroupAdvantage,
    pub config: RunConfig,
}

impl GroupResult {
    /// Per-trace, per-step advantages.
    pub fn advantages(&self) -> &[Vec<f64>] {
        &self.advantage.advantages
    }
}

/// Runs `config.hyper.group_size` rollouts concurrently and standardizes
/// their step rewards. Any failed rollout fails the group.
pub fn run_group(
    instance: &Instance,
    endpoints: Endpoints<'_>,
    config: &RunConfig,
    tok: &dyn Tokenizer,
) -> Result<GroupResult, RolloutError> {
    let g = config.hyper.group_size;
    if g < 2 {
        return Err(RewardError::TooFewRollouts(g).into());
    }
    let traces = (0..g)
        .into_par_iter()
        .map(|i| {
            run_rollout(instance, endpoints, &config.hyper, i, tok).map_err(|e| RolloutError::Member {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rewards: Vec<Vec<f64>> = traces.iter().map(|t| t.rewards.r_combined.clone()).collect();
    let advantage = reward::group_advantages(&rewards, config.hyper.epsilon, config.hyper.advantage_scope)?;
    Ok(GroupResult {
        instance_id: instance.id.clone(),
        dataset_tag: instance.dataset_tag.clone(),
        traces,
        advantage,
        config: config.clone(),
    })
}

// ---------------------------------------------------------------------------
// trace files

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
// One value per line read or written; never stored.
#[allow(clippy::large_enum_variant)]
enum TraceLine {
    Group {
        schema_version: u32,
        instance_id: String,
        dataset_tag: String,
        config: RunConfig,
        advantage: GroupAdvantage,
    },
    Trace(Box<Trace>),
}

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// A header line followed by one line per trace.
pub fn write_group(mut sink: impl Write, group: &GroupResult) -> std::io::Result<()> {
    let header = TraceLine::Group {
        schema_version: TRACE_SCHEMA_VERSION,
        instance_id: group.instance_id.clone(),
        dataset_tag: group.dataset_tag.clone(),
        config: group.config.clone(),
        advantage: group.advantage.clone(),
    };
    serde_json::to_writer(&mut sink, &header)?;
    sink.write_all(b"\n")?;
    for trace in &group.traces {
        serde_json::to_writer(&mut sink, &TraceLine::Trace(Box::new(trace.clone())))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn save_group(path: &Path, group: &GroupResult) -> std::io::Result<()> {
    write_group(BufWriter::new(File::create(path)?), group)
}

pub fn read_group(source: impl BufRead) -> Result<GroupResult, TraceFileError> {
    let mut header = None;
    let mut traces = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |reason: String| TraceFileError::Format { line: idx + 1, reason };
        match serde_json::from_str::<TraceLine>(&line).map_err(|e| fmt(e.to_string()))? {
            TraceLine::Group {
                schema_version,
                instance_id,
                dataset_tag,
                config,
                advantage,
            } => {
                if idx != 0 || header.is_some() {
                    return Err(fmt("group header must be the first line".into()));
                }
                if schema_version != TRACE_SCHEMA_VERSION {
                    return Err(fmt(format!("unsupported schema_version {schema_version}")));
                }
                header = Some((instance_id, dataset_tag, config, advantage));
            }
            TraceLine::Trace(trace) => {
                if header.is_none() {
                    return Err(fmt("trace before group header".into()));
                }
                traces.push(*trace);
            }
        }
    }
    let (instance_id, dataset_tag, config, advantage) = header.ok_or(TraceFileError::Format {
        line: 0,
        reason: "empty trace file".into(),
    })?;
    if advantage.advantages.len() != traces.len()
        || advantage.advantages.iter().zip(&traces).any(|(a, t)| a.len() != t.steps.len())
    {
        return Err(TraceFileError::Format {
            line: 0,
            reason: "advantage shape does not match traces".into(),
        });
    }
    Ok(GroupResult {
        instance_id,
        dataset_tag,
        traces,
        advantage,
        config,
    })
}

pub fn load_group(path: &Path) -> Result<GroupResult, TraceFileError> {
    read_group(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// replay checks

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayMismatch {
    #[error("rollout {rollout}, step {t}: re-executed report differs")]
    Step { rollout: usize, t: usize },
    #[error("rollout {rollout}: final snapshot differs from the replayed memory")]
    FinalSnapshot { rollout: usize },
    #[error("rollout {rollout}: recomputed rewards differ")]
    Rewards { rollout: usize },
    #[error("recomputed advantages differ")]
    Advantages,
}

/// Re-executes the stored responses from an empty memory and compares every
/// step report and the final snapshot.
pub fn replay_trace(trace: &Trace, hyper: &Hyper, tok: &dyn Tokenizer) -> Result<(), ReplayMismatch> {
    let rollout = trace.rollout_index;
    let mut snapshot = MemorySnapshot::new(hyper.core_limit).map_err(|_| ReplayMismatch::FinalSnapshot { rollout })?;
    for step in &trace.steps {
        let calls = toolcall::parse_calls(&step.raw_response);
        let report = toolcall::execute_step(&snapshot, calls, step.chunk_timestamp, exec_options(hyper), tok);
        if report != step.report {
            return Err(ReplayMismatch::Step { rollout, t: step.t });
        }
        snapshot = report.snapshot_after;
    }
    if snapshot != trace.final_snapshot {
        return Err(ReplayMismatch::FinalSnapshot { rollout });
    }
    Ok(())
}

/// Recomputes a stored trace's rewards through the given (normally replay)
/// generator and judge.
pub fn recompute_rewards(
    trace: &Trace,
    instance: &Instance,
    generator: &ChatEndpoint,
    judge: &ChatEndpoint,
    hyper: &Hyper,
    tok: &dyn Tokenizer,
) -> Result<RewardBreakdown, RolloutError> {
    let endpoints = Endpoints {
        policy: judge,
        generator,
        judge,
    };
    let (_, _, rewards) = score_steps(instance, &trace.steps, &trace.final_snapshot, endpoints, hyper, tok)?;
    Ok(rewards)
}

#[derive(Debug, Default)]
pub struct ReplayReport {
    pub traces_checked: usize,
    pub rewards_checked: usize,
    pub mismatches: Vec<ReplayMismatch>,
}

/// Checks every trace of a group; with an instance and endpoints, also
/// recomputes rewards and advantages.
pub fn replay_check(
    group: &GroupResult,
    rescore: Option<(&Instance, &ChatEndpoint, &ChatEndpoint)>,
    tok: &dyn Tokenizer,
) -> Result<ReplayReport, RolloutError> {
    let hyper = &group.config.hyper;
    let mut report = ReplayReport::default();
    for trace in &group.traces {
        report.traces_checked += 1;
        if let Err(m) = replay_trace(trace, hyper, tok) {
            report.mismatches.push(m);
        }
        if let Some((instance, generator, judge)) = rescore {
            report.rewards_checked += 1;
            if recompute_rewards(trace, instance, generator, judge, hyper, tok)? != trace.rewards {
                report.mismatches.push(ReplayMismatch::Rewards {
                    rollout: trace.rollout_index,
                });
            }
        }
    }
    let rewards: Vec<Vec<f64>> = group.traces.iter().map(|t| t.rewards.r_combined.clone()).collect();
    if reward::group_advantages(&rewards, hyper.epsilon, hyper.advantage_scope)? != group.advantage {
        report.mismatches.push(ReplayMismatch::Advantages);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// trainer export

/// One training example: a single step of a single rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRecord {
    pub schema_version: u32,
    pub instance_id: String,
    pub rollout_index: usize,
    pub t: usize,
    pub prompt: String,
    pub response: String,
    #[serde(rename = "A_t")]
    pub a_t: f64,
    pub r1: f64,
    pub r2_t: f64,
    pub r3: f64,
    pub r4_t: f64,
    pub r_t: f64,
    /// Set when the group had no reward spread and all advantages are zero.
    pub degenerate: bool,
    pub config: Hyper,
}

pub fn export_rows(group: &GroupResult) -> Vec<ExportRecord> {
    let mut rows = Vec::new();
    for (trace, advantages) in group.traces.iter().zip(&group.advantage.advantages) {
        let r = &trace.rewards;
        for (step, &a_t) in trace.steps.iter().zip(advantages) {
            rows.push(ExportRecord {
                schema_version: RECORD_SCHEMA_VERSION,
                instance_id: group.instance_id.clone(),
                rollout_index: trace.rollout_index,
                t: step.t,
                prompt: step.prompt.clone(),
                response: step.raw_response.clone(),
                a_t,
                r1: r.r1,
                r2_t: r.r2[step.t],
                r3: r.r3,
                r4_t: r.r4[step.t],
                r_t: r.r_combined[step.t],
                degenerate: group.advantage.degenerate,
                config: group.config.hyper.clone(),
            });
        }
    }
    rows
}

/// Writes one line per (trace, step) and returns the count.
pub fn export_records(group: &GroupResult, mut sink: impl Write) -> std::io::Result<usize> {
    let rows = export_rows(group);
    for row in &rows {
        serde_json::to_writer(&mut sink, row)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(rows.len())
}

/// Reads exported records, rejecting other schema versions.
pub fn read_records(source: impl BufRead) -> Result<Vec<ExportRecord>, TraceFileError> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |reason: String| TraceFileError::Format { line: idx + 1, reason };
        let record: ExportRecord = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        if record.schema_version != RECORD_SCHEMA_VERSION {
            return Err(fmt(format!("unsupported schema_version {}", record.schema_version)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Record count and advantage sum, for cross-checking an export.
pub fn records_checksum(records: &[ExportRecord]) -> (usize, f64) {
    (records.len(), records.iter().map(|r| r.a_t).sum())
}
