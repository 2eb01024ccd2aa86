//! Answer scoring: substring exact match, exact match, keyword hit rate and
//! an LLM yes/no judge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatEndpoint, EndpointError, Message};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    SubEM,
    EM,
    KeywordHit,
    LLMJudge,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::SubEM => "SubEM",
            MetricKind::EM => "EM",
            MetricKind::KeywordHit => "KeywordHit",
            MetricKind::LLMJudge => "LLMJudge",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SubEM" | "subem" => Ok(MetricKind::SubEM),
            "EM" | "em" => Ok(MetricKind::EM),
            "KeywordHit" | "keyword_hit" => Ok(MetricKind::KeywordHit),
            "LLMJudge" | "llm_judge" => Ok(MetricKind::LLMJudge),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

/// Reference answer: a string, or a keyword list for summaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Answer(String),
    Keywords(Vec<String>),
}

impl Gold {
    pub fn display(&self) -> String {
        match self {
            Gold::Answer(a) => a.clone(),
            Gold::Keywords(k) => k.join(", "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("{metric} needs a keyword list")]
    NeedsKeywords { metric: &'static str },
    #[error("{metric} needs a string answer")]
    NeedsAnswer { metric: &'static str },
    #[error("LLM judge metric needs a judge endpoint")]
    NoJudge,
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
}

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c))
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}' | '\u{00BF}' | '\u{00A1}'
    )
}

pub fn substring_match(pred: &str, gold: &str) -> f64 {
    let gold = normalize(gold);
    if gold.is_empty() {
        return 0.0;
    }
    (normalize(pred).contains(&gold)) as u8 as f64
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    (normalize(pred) == normalize(gold)) as u8 as f64
}

/// Fraction of keywords appearing as normalized substrings of `pred`.
pub fn keyword_hit(pred: &str, keywords: &[String]) -> f64 {
    if keywords.is_empty() {
        return 0.0;
    }
    let pred = normalize(pred);
    let hits = keywords
        .iter()
        .map(|k| normalize(k))
        .filter(|k| !k.is_empty() && pred.contains(k.as_str()))
        .count();
    hits as f64 / keywords.len() as f64
}

/// Reads a yes/no verdict from the first word of a judge reply.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let first = reply
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match first.as_str() {
        "yes" | "correct" | "true" => Some(true),
        "no" | "incorrect" | "false" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub score: f64,
    /// Set when the judge reply could not be parsed (scored 0).
    pub unparseable: bool,
}

/// Scores one prediction. `question` is only used by the judge metric.
pub fn score(
    pred: &str,
    gold: &Gold,
    metric: MetricKind,
    question: &str,
    judge: Option<&ChatEndpoint>,
) -> Result<Scored, ScoreError> {
    let plain = |score| Ok(Scored { score, unparseable: false });
    match (metric, gold) {
        (MetricKind::SubEM, Gold::Answer(a)) => plain(substring_match(pred, a)),
        (MetricKind::EM, Gold::Answer(a)) => plain(exact_match(pred, a)),
        (MetricKind::KeywordHit, Gold::Keywords(k)) => plain(keyword_hit(pred, k)),
        (MetricKind::KeywordHit, Gold::Answer(_)) => Err(ScoreError::NeedsKeywords { metric: "KeywordHit" }),
        (MetricKind::LLMJudge, gold) => {
            let judge = judge.ok_or(ScoreError::NoJudge)?;
            let reply = judge.chat(vec![Message::user(prompts::answer_judge_prompt(
                question,
                &gold.display(),
                pred,
            ))])?;
            match parse_yes_no(&reply) {
                Some(v) => plain(v as u8 as f64),
                None => {
                    log::warn!("unparseable judge verdict: {reply:?}");
                    Ok(Scored { score: 0.0, unparseable: true })
                }
            }
        }
        (m, Gold::Keywords(_)) => Err(ScoreError::NeedsAnswer { metric: m.as_str() }),
    }
}
