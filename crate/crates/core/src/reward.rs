//! Per-step and per-rollout rewards and group-relative advantages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{ChatEndpoint, EndpointError, Message};
use crate::memory::MemoryOp;
use crate::prompts;
use crate::timestamp::Timestamp;
use crate::toolcall::StepExecReport;

pub const DEFAULT_BETA: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_GROUP_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("compression reward needs a nonzero input length")]
    ZeroInputLength,
    #[error("a group needs at least two rollouts, got {0}")]
    TooFewRollouts(usize),
    #[error("group has no step rewards")]
    NoRewards,
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Share of the step's calls that parsed and executed. Zero when the step
/// made no calls.
pub fn tool_format_reward(report: &StepExecReport) -> f64 {
    let flags = report.exec_flags();
    fraction(flags.iter().filter(|&&s| s == 1).count(), report.call_count())
}

/// `1 - l_m / l_c`, unclamped.
pub fn compression_reward(memory_tokens: usize, input_tokens: usize) -> Result<f64, RewardError> {
    if input_tokens == 0 {
        return Err(RewardError::ZeroInputLength);
    }
    Ok(1.0 - memory_tokens as f64 / input_tokens as f64)
}

/// Reads the VALID field of a judge reply. Looks in the first fenced block
/// first, then anywhere in the reply.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    if let Some(block) = fenced_block(reply) {
        if let Ok(value) = serde_json::from_str::<Value>(block) {
            if let Some(v) = value.get("VALID").and_then(verdict_value) {
                return Some(v);
            }
        }
    }
    if let Ok(value) = serde_json::from_str::<Value>(reply.trim()) {
        if let Some(v) = value.get("VALID").and_then(verdict_value) {
            return Some(v);
        }
    }
    scan_valid_field(reply)
}

fn verdict_value(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn fenced_block(reply: &str) -> Option<&str> {
    let start = reply.find("```")?;
    let after = &reply[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// Finds `"VALID"` followed by a colon and a true/false literal.
fn scan_valid_field(reply: &str) -> Option<bool> {
    let mut rest = reply;
    while let Some(pos) = rest.find("\"VALID\"") {
        let tail = rest[pos + 7..].trim_start();
        if let Some(value) = tail.strip_prefix(':') {
            let value = value.trim_start().trim_start_matches('"');
            if value.get(..4).is_some_and(|v| v.eq_ignore_ascii_case("true")) {
                return Some(true);
            }
            if value.get(..5).is_some_and(|v| v.eq_ignore_ascii_case("false")) {
                return Some(false);
            }
        }
        rest = &rest[pos + 7..];
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentScore {
    pub r4: f64,
    /// One verdict per call, 0 for calls that failed.
    pub verdicts: Vec<u8>,
    /// Judge replies whose VALID field could not be read.
    pub warnings: usize,
}

/// Asks the judge whether each executed op's content suits its memory type.
/// Deletes carry no content and count as valid without a judge call.
pub fn content_reward(
    report: &StepExecReport,
    chunk_timestamp: Option<Timestamp>,
    judge: &ChatEndpoint,
) -> Result<ContentScore, EndpointError> {
    let ops = report.effective_ops(chunk_timestamp);
    let judged: Vec<(u8, bool)> = ops
        .par_iter()
        .map(|op| -> Result<(u8, bool), EndpointError> {
            let Some(op) = op else { return Ok((0, false)) };
            let content = match op {
                MemoryOp::Delete { .. } => return Ok((1, false)),
                MemoryOp::Insert { content, .. } | MemoryOp::Update { content, .. } => content,
            };
            let reply = judge.chat(vec![
                Message::system(prompts::content_judge_prompt(op.memory_type())),
                Message::user(content.clone()),
            ])?;
            Ok(match parse_verdict(&reply) {
                Some(valid) => (valid as u8, false),
                None => {
                    log::warn!("unparseable content verdict: {reply:?}");
                    (0, true)
                }
            })
        })
        .collect::<Result<_, _>>()?;
    let verdicts: Vec<u8> = judged.iter().map(|(v, _)| *v).collect();
    let hits = verdicts.iter().filter(|&&v| v == 1).count();
    Ok(ContentScore {
        r4: fraction(hits, report.call_count()),
        warnings: judged.iter().filter(|(_, w)| *w).count(),
        verdicts,
    })
}

/// `r1 + r2 + beta * r3 + gamma * r4`.
pub fn combine(r1: f64, r2: f64, r3: f64, r4: f64, beta: f64, gamma: f64) -> f64 {
    r1 + r2 + beta * r3 + gamma * r4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: Vec<f64>,
    pub r3: f64,
    pub r4: Vec<f64>,
    pub r_combined: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub l_m: usize,
    pub l_c: usize,
}

impl RewardBreakdown {
    pub fn assemble(
        r1: f64,
        r2: Vec<f64>,
        r4: Vec<f64>,
        l_m: usize,
        l_c: usize,
        beta: f64,
        gamma: f64,
    ) -> Result<Self, RewardError> {
        assert_eq!(r2.len(), r4.len(), "per-step reward lists differ in length");
        let r3 = compression_reward(l_m, l_c)?;
        let r_combined = r2
            .iter()
            .zip(&r4)
            .map(|(&a, &b)| combine(r1, a, r3, b, beta, gamma))
            .collect();
        Ok(RewardBreakdown {
            r1,
            r2,
            r3,
            r4,
            r_combined,
            beta,
            gamma,
            l_m,
            l_c,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageScope {
    /// One mean and deviation over every step of every rollout.
    #[default]
    Pooled,
    /// Separate statistics for each step index.
    PerStep,
}

impl std::str::FromStr for AdvantageScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(AdvantageScope::Pooled),
            "per_step" => Ok(AdvantageScope::PerStep),
            other => Err(format!("unknown advantage scope {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mu: f64,
    pub sigma: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantage {
    pub scope: AdvantageScope,
    /// Rewards flattened rollout-major.
    pub group_rewards: Vec<f64>,
    /// Pooled statistics (reported in both scopes).
    pub mu: f64,
    pub sigma: f64,
    pub epsilon: f64,
    /// Per step index, only in the per-step scope.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step_stats: Vec<GroupStats>,
    /// True when any standardization group had zero spread.
    pub degenerate: bool,
    /// Same shape as the input.
    pub advantages: Vec<Vec<f64>>,
}

/// Mean and population deviation, plus standardized values. Values are
/// centered on the first element before averaging so that adding a constant
/// to every input (when the sums stay exact) leaves the output bit-identical.
fn standardize(values: &[f64], epsilon: f64) -> (GroupStats, Vec<f64>) {
    let pivot = values[0];
    let n = values.len() as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - pivot).collect();
    let offset = centered.iter().sum::<f64>() / n;
    let deviations: Vec<f64> = centered.iter().map(|c| c - offset).collect();
    let sigma = (deviations.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let degenerate = values.iter().all(|v| *v == pivot);
    let stats = GroupStats {
        mu: pivot + offset,
        sigma: if degenerate { 0.0 } else { sigma },
        degenerate,
    };
    let advantages = if degenerate {
        vec![0.0; values.len()]
    } else {
        deviations.iter().map(|d| d / (sigma + epsilon)).collect()
    };
    (stats, advantages)
}

/// Standardizes the step rewards of one group of rollouts.
pub fn group_advantages(
    step_rewards: &[Vec<f64>],
    epsilon: f64,
    scope: AdvantageScope,
) -> Result<GroupAdvantage, RewardError> {
    if step_rewards.len() < 2 {
        return Err(RewardError::TooFewRollouts(step_rewards.len()));
    }
    let flat: Vec<f64> = step_rewards.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(RewardError::NoRewards);
    }
    let (pooled, pooled_adv) = standardize(&flat, epsilon);
    let (advantages, step_stats, degenerate) = match scope {
        AdvantageScope::Pooled => {
            let mut it = pooled_adv.into_iter();
            let shaped = step_rewards
                .iter()
                .map(|r| it.by_ref().take(r.len()).collect())
                .collect();
            (shaped, Vec::new(), pooled.degenerate)
        }
        AdvantageScope::PerStep => {
            let steps = step_rewards.iter().map(Vec::len).max().unwrap_or(0);
            let mut shaped: Vec<Vec<f64>> = step_rewards.iter().map(|r| vec![0.0; r.len()]).collect();
            let mut stats = Vec::with_capacity(steps);
            for t in 0..steps {
                let members: Vec<usize> = (0..step_rewards.len()).filter(|&g| t < step_rewards[g].len()).collect();
                let values: Vec<f64> = members.iter().map(|&g| step_rewards[g][t]).collect();
                let (s, adv) = standardize(&values, epsilon);
                for (&g, a) in members.iter().zip(adv) {
                    shaped[g][t] = a;
                }
                stats.push(s);
            }
            let degenerate = stats.iter().any(|s| s.degenerate);
            (shaped, stats, degenerate)
        }
    };
    if degenerate {
        log::warn!("degenerate advantage group ({scope:?}): zero reward spread");
    }
    Ok(GroupAdvantage {
        scope,
        group_rewards: flat,
        mu: pooled.mu,
        sigma: pooled.sigma,
        epsilon,
        step_stats,
        degenerate,
        advantages,
    })
}
