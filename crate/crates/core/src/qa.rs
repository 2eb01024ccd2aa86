//! Frozen evaluation of a final memory: BM25 retrieval from each pool, answer
//! generation from the retrieved support, and per-question scoring that
//! averages into the correctness reward r1.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Instance, Question};
use crate::llm::{ChatEndpoint, EndpointError, Message};
use crate::memory::{render_entries, MemoryEntry, MemorySnapshot, PoolKind, EMPTY_BLOCK};
use crate::metrics::{self, Gold, MetricKind, ScoreError};
use crate::prompts;
use crate::retrieval::{Hit, Index};

pub const DEFAULT_TOP_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub entry: MemoryEntry,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub question: String,
    pub k: usize,
    pub semantic_hits: Vec<ScoredEntry>,
    pub episodic_hits: Vec<ScoredEntry>,
}

impl SupportSet {
    pub fn semantic_ids(&self) -> Vec<u64> {
        self.semantic_hits.iter().map(|h| h.entry.id).collect()
    }

    pub fn episodic_ids(&self) -> Vec<u64> {
        self.episodic_hits.iter().map(|h| h.entry.id).collect()
    }
}

fn top_k(snapshot: &MemorySnapshot, pool: PoolKind, question: &str, k: usize) -> Vec<ScoredEntry> {
    let entries = snapshot.pool(pool);
    let index = Index::build(entries.values());
    index
        .search(question, k)
        .into_iter()
        .map(|Hit { id, score }| ScoredEntry {
            entry: entries[&id].clone(),
            score,
        })
        .collect()
}

/// Independent top-k from the semantic and episodic pools. Core memory is
/// never retrieved; it goes into the prompt whole.
pub fn retrieve_support(snapshot: &MemorySnapshot, question: &str, k: usize) -> SupportSet {
    assert!(k >= 1, "retrieval depth must be at least 1");
    SupportSet {
        question: question.to_string(),
        k,
        semantic_hits: top_k(snapshot, PoolKind::Semantic, question, k),
        episodic_hits: top_k(snapshot, PoolKind::Episodic, question, k),
    }
}

/// The generator conversation for one question.
pub fn answer_messages(question: &str, support: &SupportSet, core: &str) -> Vec<Message> {
    let core = if core.trim().is_empty() { EMPTY_BLOCK } else { core };
    let system = prompts::answer_system(
        core,
        &render_entries(support.episodic_hits.iter().map(|h| &h.entry)),
        &render_entries(support.semantic_hits.iter().map(|h| &h.entry)),
    );
    vec![Message::system(system), Message::user(question)]
}

pub fn generate_answer(
    question: &str,
    support: &SupportSet,
    core: &str,
    generator: &ChatEndpoint,
) -> Result<String, EndpointError> {
    generator.chat(answer_messages(question, support, core))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub question: String,
    pub semantic_ids: Vec<u64>,
    pub episodic_ids: Vec<u64>,
    pub prediction: String,
    pub gold: Gold,
    pub score: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_unparseable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correctness {
    pub r1: f64,
    pub metric: MetricKind,
    pub results: Vec<QuestionResult>,
    pub judge_warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QaError {
    #[error("instance has no questions")]
    NoQuestions,
    #[error("question {question_id}: {source}")]
    Endpoint {
        question_id: String,
        #[source]
        source: EndpointError,
    },
    #[error("question {question_id}: {source}")]
    Score {
        question_id: String,
        #[source]
        source: ScoreError,
    },
}

fn evaluate_question(
    question: &Question,
    metric: MetricKind,
    snapshot: &MemorySnapshot,
    generator: &ChatEndpoint,
    judge: Option<&ChatEndpoint>,
    k: usize,
) -> Result<QuestionResult, QaError> {
    let support = retrieve_support(snapshot, &question.text, k);
    let prediction = generate_answer(&question.text, &support, snapshot.core(), generator).map_err(|source| {
        QaError::Endpoint {
            question_id: question.id.clone(),
            source,
        }
    })?;
    let scored = metrics::score(&prediction, &question.gold, metric, &question.text, judge).map_err(|source| match source {
        ScoreError::Endpoint(source) => QaError::Endpoint {
            question_id: question.id.clone(),
            source,
        },
        source => QaError::Score {
            question_id: question.id.clone(),
            source,
        },
    })?;
    Ok(QuestionResult {
        question_id: question.id.clone(),
        question: question.text.clone(),
        semantic_ids: support.semantic_ids(),
        episodic_ids: support.episodic_ids(),
        prediction,
        gold: question.gold.clone(),
        score: scored.score,
        judge_unparseable: scored.unparseable,
    })
}

/// Mean per-question score over the instance. Any endpoint failure fails the
/// whole evaluation; partial results are dropped.
pub fn correctness_reward(
    instance: &Instance,
    snapshot: &MemorySnapshot,
    generator: &ChatEndpoint,
    judge: Option<&ChatEndpoint>,
    k: usize,
) -> Result<Correctness, QaError> {
    if instance.questions.is_empty() {
        return Err(QaError::NoQuestions);
    }
    let results: Vec<QuestionResult> = instance
        .questions
        .par_iter()
        .map(|q| evaluate_question(q, instance.metric, snapshot, generator, judge, k))
        .collect::<Result<_, _>>()?;
    let r1 = results.iter().map(|r| r.score).sum::<f64>() / results.len() as f64;
    let judge_warnings = results.iter().filter(|r| r.judge_unparseable).count();
    Ok(Correctness {
        r1,
        metric: instance.metric,
        results,
        judge_warnings,
    })
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Question {
        instance_id: &'a str,
        #[serde(flatten)]
        result: &'a QuestionResult,
    },
    Summary {
        instance_id: &'a str,
        metric: MetricKind,
        questions: usize,
        r1: f64,
        judge_warnings: usize,
    },
}

/// One line per question followed by a summary line.
pub fn write_report(mut sink: impl Write, instance_id: &str, c: &Correctness) -> std::io::Result<()> {
    for result in &c.results {
        serde_json::to_writer(&mut sink, &ReportLine::Question { instance_id, result })?;
        sink.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut sink,
        &ReportLine::Summary {
            instance_id,
            metric: c.metric,
            questions: c.results.len(),
            r1: c.r1,
            judge_warnings: c.judge_warnings,
        },
    )?;
    sink.write_all(b"\n")
}
