//! Instances, their on-disk schema, chunk framing, sampling and statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatEndpoint, EndpointError, Message};
use crate::metrics::{Gold, MetricKind};
use crate::prompts;
use crate::timestamp::Timestamp;
use crate::tokenizer::Tokenizer;

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    AR,
    TTL,
    LRU,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chunk {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold: Gold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub dataset_tag: String,
    pub category: Category,
    pub chunks: Vec<Chunk>,
    pub questions: Vec<Question>,
    pub metric: MetricKind,
}

impl Instance {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("instance id is empty".into());
        }
        if self.chunks.is_empty() {
            return Err("instance has no chunks".into());
        }
        if self.questions.is_empty() {
            return Err("instance has no questions".into());
        }
        if let Some(i) = self.chunks.iter().position(|c| c.text.trim().is_empty()) {
            return Err(format!("chunk {i} is empty"));
        }
        let mut ids = HashSet::new();
        for q in &self.questions {
            if !ids.insert(q.id.as_str()) {
                return Err(format!("duplicate question id {:?}", q.id));
            }
            match (&q.gold, self.metric) {
                (Gold::Keywords(k), MetricKind::KeywordHit) if k.is_empty() => {
                    return Err(format!("question {:?} has an empty keyword list", q.id))
                }
                (Gold::Keywords(_), MetricKind::KeywordHit) => {}
                (Gold::Answer(_), MetricKind::KeywordHit) => {
                    return Err(format!("question {:?}: KeywordHit needs a keyword list", q.id))
                }
                (Gold::Keywords(_), m) if m != MetricKind::LLMJudge => {
                    return Err(format!("question {:?}: {} needs a string answer", q.id, m.as_str()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Total chunk length under `tok`.
    pub fn input_tokens(&self, tok: &dyn Tokenizer) -> usize {
        self.chunks.iter().map(|c| tok.count(&c.text)).sum()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    schema_version: u32,
    #[serde(flatten)]
    instance: InstanceFields,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFields {
    id: String,
    dataset_tag: String,
    category: Category,
    chunks: Vec<Chunk>,
    questions: Vec<Question>,
    metric: MetricKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct SchemaError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{family} chunk is missing {field}")]
    MissingField { family: &'static str, field: &'static str },
    #[error("invalid timestamp: {0}")]
    Timestamp(String),
}

/// Decodes one line of an instance file.
pub fn parse_instance_line(line: &str) -> Result<Instance, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == INSTANCE_SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(format!("unsupported schema_version {v}")),
        None => return Err("missing schema_version".into()),
    }
    let parsed: InstanceLine = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let f = parsed.instance;
    let instance = Instance {
        id: f.id,
        dataset_tag: f.dataset_tag,
        category: f.category,
        chunks: f.chunks,
        questions: f.questions,
        metric: f.metric,
    };
    instance.validate()?;
    Ok(instance)
}

pub fn instance_line(instance: &Instance) -> String {
    let line = InstanceLine {
        schema_version: INSTANCE_SCHEMA_VERSION,
        instance: InstanceFields {
            id: instance.id.clone(),
            dataset_tag: instance.dataset_tag.clone(),
            category: instance.category,
            chunks: instance.chunks.clone(),
            questions: instance.questions.clone(),
            metric: instance.metric,
        },
    };
    serde_json::to_string(&line).expect("instance serializes")
}

#[derive(Debug, Default)]
pub struct Loaded {
    pub instances: Vec<Instance>,
    /// Lines skipped in lenient mode.
    pub skipped: Vec<SchemaError>,
}

/// Reads a line-delimited instance file. In strict mode the first bad line
/// is fatal; in lenient mode it is recorded and skipped.
pub fn load_instances(path: &Path, lenient: bool) -> Result<Loaded, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut loaded = Loaded::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_instance_line(&line) {
            Ok(inst) => loaded.instances.push(inst),
            Err(reason) => {
                let err = SchemaError { line: idx + 1, reason };
                if !lenient {
                    return Err(err.into());
                }
                log::warn!("skipping {}:{}", path.display(), err);
                loaded.skipped.push(err);
            }
        }
    }
    Ok(loaded)
}

pub fn save_instances(path: &Path, instances: &[Instance]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    for inst in instances {
        writeln!(out, "{}", instance_line(inst)).map_err(io)?;
    }
    out.flush().map_err(io)
}

// ---------------------------------------------------------------------------
// raw corpora and chunk framing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DocQa,
    Perlt,
    Dialogue,
    Ttl,
    Booksum,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::DocQa => "doc_qa",
            Family::Perlt => "perlt",
            Family::Dialogue => "dialogue",
            Family::Ttl => "ttl",
            Family::Booksum => "booksum",
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Family::DocQa | Family::Perlt | Family::Dialogue => Category::AR,
            Family::Ttl => Category::TTL,
            Family::Booksum => Category::LRU,
        }
    }

    pub fn default_metric(&self) -> MetricKind {
        match self {
            Family::DocQa | Family::Perlt => MetricKind::SubEM,
            Family::Dialogue => MetricKind::LLMJudge,
            Family::Ttl => MetricKind::EM,
            Family::Booksum => MetricKind::KeywordHit,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "doc_qa" => Ok(Family::DocQa),
            "perlt" => Ok(Family::Perlt),
            "dialogue" => Ok(Family::Dialogue),
            "ttl" => Ok(Family::Ttl),
            "booksum" => Ok(Family::Booksum),
            other => Err(format!("unknown family {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub sample: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalEvent {
    /// Free-form time of the event, e.g. a year.
    pub when: String,
    pub summary: String,
    pub content: String,
}

/// One chunk of a raw corpus item. Which fields are required depends on the
/// family.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChunk {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<PersonalEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turns: Option<Vec<Turn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples: Option<Vec<Example>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawQuestion {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    pub chunks: Vec<RawChunk>,
    pub questions: Vec<RawQuestion>,
}

fn default_timestamp() -> Timestamp {
    Timestamp::ymd_hm(2024, 1, 1, 0, 0).expect("valid date")
}

fn nonempty<'a, T>(
    value: &'a Option<Vec<T>>,
    family: Family,
    field: &'static str,
) -> Result<&'a [T], DatasetError> {
    match value {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(DatasetError::MissingField {
            family: family.as_str(),
            field,
        }),
    }
}

fn required_text<'a>(value: &'a Option<String>, family: Family, field: &'static str) -> Result<&'a str, DatasetError> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(DatasetError::MissingField {
            family: family.as_str(),
            field,
        }),
    }
}

fn chunk_timestamp(raw: &RawChunk, family: Family, required: bool) -> Result<Timestamp, DatasetError> {
    match &raw.timestamp {
        Some(t) => Timestamp::parse(t).map_err(|e| DatasetError::Timestamp(e.to_string())),
        None if required => Err(DatasetError::MissingField {
            family: family.as_str(),
            field: "timestamp",
        }),
        None => Ok(default_timestamp()),
    }
}

fn push_turns(out: &mut String, turns: &[Turn]) {
    for turn in turns {
        let _ = write!(out, "\n<{}>: {}", turn.speaker, turn.text);
    }
}

/// Wraps a raw chunk in its family's dialogue frame.
pub fn format_chunk(raw: &RawChunk, family: Family) -> Result<Chunk, DatasetError> {
    let (text, ts) = match family {
        Family::DocQa => {
            let docs = nonempty(&raw.documents, family, "documents")?;
            let ts = chunk_timestamp(raw, family, false)?;
            let text = format!(
                "Dialogue between User and Assistant on {ts}:\n<User>: I have some interesting updates for you:\n{}\n<Assistant>: Understood. I'll keep these facts for future reference.",
                docs.join("\n")
            );
            (text, ts)
        }
        Family::Ttl => {
            let examples = nonempty(&raw.examples, family, "examples")?;
            let ts = chunk_timestamp(raw, family, false)?;
            let mut text = format!(
                "Dialogue between User and Assistant on {ts}\n<User>: The following are classification examples with their corresponding labels:"
            );
            for ex in examples {
                let _ = write!(text, "\nSample: {}; Label: {}", ex.sample, ex.label);
            }
            text.push_str("\n<Assistant>: Great! I've added this to my knowledge base.");
            (text, ts)
        }
        Family::Booksum => {
            let passage = required_text(&raw.passage, family, "passage")?;
            let ts = chunk_timestamp(raw, family, true)?;
            let date = ts.date_string();
            let text = format!(
                "Event happened on {date} The user is reading a book\n<User>: {passage}\n<System>: Please remember what the user reads on {date}, save the details within the book, and retain a summary of the book the user has read so far."
            );
            (text, ts)
        }
        Family::Dialogue => {
            let turns = nonempty(&raw.turns, family, "turns")?;
            let ts = chunk_timestamp(raw, family, true)?;
            let mut text = format!("Dialogue at timestamp {}", ts.dialogue_string());
            push_turns(&mut text, turns);
            (text, ts)
        }
        Family::Perlt => {
            let user = required_text(&raw.user, family, "user")?;
            let turns = nonempty(&raw.turns, family, "turns")?;
            let ts = chunk_timestamp(raw, family, true)?;
            let mut text = String::new();
            if let Some(event) = &raw.event {
                let _ = write!(
                    text,
                    "The following is the event happened about the user {user} on {}:\nSummary: {}\nContent: {}\n\n",
                    event.when, event.summary, event.content
                );
            }
            let _ = write!(
                text,
                "The following are the dialogues.\n\nDialogue happened at {}",
                ts.seconds_string()
            );
            push_turns(&mut text, turns);
            (text, ts)
        }
    };
    Ok(Chunk {
        text,
        timestamp: Some(ts),
    })
}

/// Builds a validated instance from a raw corpus item.
pub fn ingest_item(item: &RawItem, family: Family) -> Result<Instance, DatasetError> {
    let schema = |reason: String| DatasetError::Schema(SchemaError { line: 0, reason });
    let metric = item.metric.unwrap_or(family.default_metric());
    let chunks = item
        .chunks
        .iter()
        .map(|c| format_chunk(c, family))
        .collect::<Result<Vec<_>, _>>()?;
    let questions = item
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let gold = match (&q.answer, &q.keywords) {
                (Some(a), None) => Gold::Answer(a.clone()),
                (None, Some(k)) => Gold::Keywords(k.clone()),
                _ => return Err(schema(format!("question {i} needs exactly one of answer/keywords"))),
            };
            Ok(Question {
                id: q.id.clone().unwrap_or_else(|| format!("q{i}")),
                text: q.question.clone(),
                gold,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let instance = Instance {
        id: item.id.clone(),
        dataset_tag: item.dataset_tag.clone().unwrap_or_else(|| family.as_str().to_string()),
        category: family.category(),
        chunks,
        questions,
        metric,
    };
    instance.validate().map_err(schema)?;
    Ok(instance)
}

/// Splits long text into pieces of roughly `target_tokens` whitespace tokens,
/// keeping paragraphs together where they fit.
pub fn segment_text(text: &str, target_tokens: usize) -> Vec<String> {
    let target = target_tokens.max(1);
    let mut pieces = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut current_len = 0;
    let flush = |current: &mut Vec<&str>, current_len: &mut usize, pieces: &mut Vec<String>| {
        if !current.is_empty() {
            pieces.push(current.join("\n\n"));
            current.clear();
            *current_len = 0;
        }
    };
    for para in text.split("\n\n").map(str::trim).filter(|p| !p.is_empty()) {
        let len = para.split_whitespace().count();
        if len > target {
            flush(&mut current, &mut current_len, &mut pieces);
            let words: Vec<&str> = para.split_whitespace().collect();
            for part in words.chunks(target) {
                pieces.push(part.join(" "));
            }
            continue;
        }
        if current_len + len > target {
            flush(&mut current, &mut current_len, &mut pieces);
        }
        current.push(para);
        current_len += len;
    }
    flush(&mut current, &mut current_len, &mut pieces);
    pieces
}

// ---------------------------------------------------------------------------
// sampling and statistics

/// Per tag, keeps `min(cap, available)` instances chosen uniformly without
/// replacement. Tags without a cap fall back to `default_cap`, or are kept
/// whole. Output preserves input order.
pub fn stratified_sample(
    instances: &[Instance],
    caps: &BTreeMap<String, usize>,
    default_cap: Option<usize>,
    seed: u64,
) -> Vec<Instance> {
    let mut by_tag: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_tag.entry(inst.dataset_tag.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (tag, members) in by_tag {
        match caps.get(tag).copied().or(default_cap) {
            Some(cap) if cap < members.len() => {
                keep.extend(index::sample(&mut rng, members.len(), cap).into_iter().map(|j| members[j]));
            }
            _ => keep.extend(members),
        }
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| instances[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub dataset: String,
    pub category: Option<Category>,
    pub metric: Option<MetricKind>,
    pub instances: usize,
    pub chunks_per_instance: f64,
    pub tokens_per_chunk: f64,
    pub questions_per_instance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub rows: Vec<StatsRow>,
    pub total: Option<StatsRow>,
}

#[derive(Default)]
struct Tally {
    instances: usize,
    chunks: usize,
    tokens: usize,
    questions: usize,
}

impl Tally {
    fn add(&mut self, inst: &Instance, tok: &dyn Tokenizer) {
        self.instances += 1;
        self.chunks += inst.chunks.len();
        self.tokens += inst.input_tokens(tok);
        self.questions += inst.questions.len();
    }

    fn row(&self, dataset: String, category: Option<Category>, metric: Option<MetricKind>) -> StatsRow {
        let per = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        StatsRow {
            dataset,
            category,
            metric,
            instances: self.instances,
            chunks_per_instance: per(self.chunks, self.instances),
            tokens_per_chunk: per(self.tokens, self.chunks),
            questions_per_instance: per(self.questions, self.instances),
        }
    }
}

/// Per-tag averages in first-appearance order, plus a totals row.
pub fn dataset_stats(instances: &[Instance], tok: &dyn Tokenizer) -> DatasetStats {
    let mut order: Vec<(String, Category, MetricKind)> = Vec::new();
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    let mut total = Tally::default();
    for inst in instances {
        if !tallies.contains_key(&inst.dataset_tag) {
            order.push((inst.dataset_tag.clone(), inst.category, inst.metric));
        }
        tallies.entry(inst.dataset_tag.clone()).or_default().add(inst, tok);
        total.add(inst, tok);
    }
    if instances.is_empty() {
        return DatasetStats {
            rows: Vec::new(),
            total: None,
        };
    }
    DatasetStats {
        rows: order
            .into_iter()
            .map(|(tag, cat, metric)| tallies[&tag].row(tag.clone(), Some(cat), Some(metric)))
            .collect(),
        total: Some(total.row("Total".into(), None, None)),
    }
}

fn metric_label(m: MetricKind) -> &'static str {
    match m {
        MetricKind::SubEM => "SubEM",
        MetricKind::EM => "EM",
        MetricKind::KeywordHit => "KW Hit",
        MetricKind::LLMJudge => "LLM-J",
    }
}

fn category_label(c: Category) -> &'static str {
    match c {
        Category::AR => "AR",
        Category::TTL => "TTL",
        Category::LRU => "LRU",
    }
}

impl DatasetStats {
    /// Aligned text table with the columns Dataset, Cat., Metric, Ins.,
    /// Ch/Ins, Tok/Ch, Q/Ins.
    pub fn render_table(&self) -> String {
        let header = ["Dataset", "Cat.", "Metric", "Ins.", "Ch/Ins", "Tok/Ch", "Q/Ins"];
        let mut rows: Vec<[String; 7]> = Vec::new();
        for r in self.rows.iter().chain(self.total.iter()) {
            rows.push([
                r.dataset.clone(),
                r.category.map(category_label).unwrap_or("-").to_string(),
                r.metric.map(metric_label).unwrap_or("-").to_string(),
                r.instances.to_string(),
                format!("{:.1}", r.chunks_per_instance),
                format!("{:.1}", r.tokens_per_chunk),
                format!("{:.1}", r.questions_per_instance),
            ]);
        }
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i < 3 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = String::new();
        out.push_str(&line(&header.map(String::from)));
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        let body = rows.len() - usize::from(self.total.is_some());
        for (i, row) in rows.iter().enumerate() {
            if i == body {
                out.push_str(&rule);
                out.push('\n');
            }
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// keyword extraction

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeywordError {
    #[error("judge returned no keywords")]
    EmptyKeywordList,
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
}

/// Comma-split, trimmed, empties dropped, first spelling kept among
/// case-insensitive duplicates.
pub fn split_keywords(response: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    response
        .split(',')
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .filter(|k| seen.insert(k.to_lowercase()))
        .map(str::to_string)
        .collect()
}

pub fn extract_gold_keywords(summary: &str, judge: &ChatEndpoint) -> Result<Vec<String>, KeywordError> {
    let reply = judge.chat(vec![Message::user(prompts::keyword_prompt(summary))])?;
    let keywords = split_keywords(&reply);
    if keywords.is_empty() {
        return Err(KeywordError::EmptyKeywordList);
    }
    Ok(keywords)
}

// ---------------------------------------------------------------------------
// synthetic fixtures

pub mod synthetic {
    //! Small generated corpora for every family, for tests and smoke runs.

    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const WORDS: &[&str] = &[
        "river", "castle", "lantern", "orchard", "harbor", "meadow", "violin", "glacier", "market",
        "compass", "thunder", "saffron", "pebble", "canyon", "ember", "falcon", "quartz", "willow",
        "beacon", "tundra", "marble", "cobalt", "juniper", "harvest",
    ];

    fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
        (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    }

    fn stamp(rng: &mut ChaCha8Rng) -> String {
        format!(
            "2023-{:02}-{:02} {:02}:{:02}",
            rng.gen_range(1..=12),
            rng.gen_range(1..=28),
            rng.gen_range(0..24),
            rng.gen_range(0..60)
        )
    }

    /// `count` raw items of `family`, each with `chunks` chunks and
    /// `questions` questions.
    pub fn raw_items(family: Family, count: usize, chunks: usize, questions: usize, seed: u64) -> Vec<RawItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let chunks = (0..chunks.max(1))
                    .map(|_| {
                        let mut c = RawChunk::default();
                        match family {
                            Family::DocQa => c.documents = Some(vec![words(&mut rng, 12), words(&mut rng, 9)]),
                            Family::Ttl => {
                                c.examples = Some(
                                    (0..3)
                                        .map(|_| Example {
                                            sample: words(&mut rng, 6),
                                            label: rng.gen_range(0..5).to_string(),
                                        })
                                        .collect(),
                                )
                            }
                            Family::Booksum => {
                                c.passage = Some(words(&mut rng, 40));
                                c.timestamp = Some(stamp(&mut rng));
                            }
                            Family::Dialogue | Family::Perlt => {
                                c.turns = Some(vec![
                                    Turn { speaker: "User".into(), text: words(&mut rng, 8) },
                                    Turn { speaker: "Assistant".into(), text: words(&mut rng, 10) },
                                ]);
                                c.timestamp = Some(stamp(&mut rng));
                                if family == Family::Perlt {
                                    c.user = Some("Xiong Fei".into());
                                    c.event = Some(PersonalEvent {
                                        when: "2017".into(),
                                        summary: words(&mut rng, 3),
                                        content: words(&mut rng, 15),
                                    });
                                }
                            }
                        }
                        c
                    })
                    .collect();
                let questions = (0..questions.max(1))
                    .map(|q| {
                        let keywords = family == Family::Booksum;
                        RawQuestion {
                            id: Some(format!("q{q}")),
                            question: format!("What about the {}?", words(&mut rng, 1)),
                            answer: (!keywords).then(|| words(&mut rng, 1)),
                            keywords: keywords.then(|| vec![words(&mut rng, 1), words(&mut rng, 2)]),
                        }
                    })
                    .collect();
                RawItem {
                    id: format!("{}-{i}", family.as_str()),
                    dataset_tag: None,
                    metric: None,
                    chunks,
                    questions,
                }
            })
            .collect()
    }

    pub fn instances(family: Family, count: usize, chunks: usize, questions: usize, seed: u64) -> Vec<Instance> {
        raw_items(family, count, chunks, questions, seed)
            .iter()
            .map(|item| ingest_item(item, family).expect("synthetic items are well formed"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespaceTokenizer;

    fn ttl_chunk(pairs: &[(&str, &str)]) -> RawChunk {
        RawChunk {
            examples: Some(
                pairs
                    .iter()
                    .map(|(s, l)| Example {
                        sample: s.to_string(),
                        label: l.to_string(),
                    })
                    .collect(),
            ),
            ..Default::default()
        }
    }

    #[test]
    fn ttl_frame() {
        let c = format_chunk(&ttl_chunk(&[("what is a gecko", "3")]), Family::Ttl).unwrap();
        assert_eq!(
            c.text,
            "Dialogue between User and Assistant on 2024-01-01 00:00\n<User>: The following are classification examples with their corresponding labels:\nSample: what is a gecko; Label: 3\n<Assistant>: Great! I've added this to my knowledge base."
        );
        assert!(c.text.contains("Sample:") && c.text.contains("Label:"));
    }

    #[test]
    fn booksum_frame() {
        let raw = RawChunk {
            passage: Some("It was a dark and stormy night.".into()),
            timestamp: Some("2024-01-01".into()),
            ..Default::default()
        };
        let c = format_chunk(&raw, Family::Booksum).unwrap();
        assert!(c.text.contains("Please remember what the user reads"));
        assert!(c.text.starts_with("Event happened on 2024-01-01 The user is reading a book\n<User>: It was"));
        let no_date = RawChunk {
            passage: Some("x".into()),
            ..Default::default()
        };
        assert!(matches!(
            format_chunk(&no_date, Family::Booksum),
            Err(DatasetError::MissingField { field: "timestamp", .. })
        ));
    }

    #[test]
    fn doc_qa_frame() {
        let raw = RawChunk {
            documents: Some(vec!["Doc one.".into(), "Doc two.".into()]),
            ..Default::default()
        };
        assert_eq!(
            format_chunk(&raw, Family::DocQa).unwrap().text,
            "Dialogue between User and Assistant on 2024-01-01 00:00:\n<User>: I have some interesting updates for you:\nDoc one.\nDoc two.\n<Assistant>: Understood. I'll keep these facts for future reference."
        );
        let empty = RawChunk {
            documents: Some(vec![]),
            ..Default::default()
        };
        assert!(matches!(
            format_chunk(&empty, Family::DocQa),
            Err(DatasetError::MissingField { field: "documents", .. })
        ));
    }

    #[test]
    fn dialogue_and_perlt_frames() {
        let turns = vec![
            Turn { speaker: "User".into(), text: "I'm looking to buy a house".into() },
            Turn { speaker: "Assistant".into(), text: "Mortgage insurance can help".into() },
        ];
        let lme = RawChunk {
            turns: Some(turns.clone()),
            timestamp: Some("2023/05/25 (Thu) 17:08".into()),
            ..Default::default()
        };
        let c = format_chunk(&lme, Family::Dialogue).unwrap();
        assert_eq!(
            c.text,
            "Dialogue at timestamp 2023/05/25 (Thu) 17:08\n<User>: I'm looking to buy a house\n<Assistant>: Mortgage insurance can help"
        );
        assert_eq!(c.timestamp, Timestamp::ymd_hm(2023, 5, 25, 17, 8));

        let perlt = RawChunk {
            user: Some("Xiong Fei".into()),
            event: Some(PersonalEvent {
                when: "2017".into(),
                summary: "Sister is threatened".into(),
                content: "In 2017, a dispute.".into(),
            }),
            turns: Some(turns),
            timestamp: Some("2022-05-12 08:30:00".into()),
            ..Default::default()
        };
        let text = format_chunk(&perlt, Family::Perlt).unwrap().text;
        assert!(text.starts_with(
            "The following is the event happened about the user Xiong Fei on 2017:\nSummary: Sister is threatened\nContent: In 2017, a dispute.\n\nThe following are the dialogues.\n\nDialogue happened at 2022-05-12 08:30:00\n<User>:"
        ));
    }

    #[test]
    fn keyword_splitting() {
        assert_eq!(split_keywords("Elizabeth Bennet, Pemberley, letter"), ["Elizabeth Bennet", "Pemberley", "letter"]);
        assert_eq!(split_keywords("a, b,"), ["a", "b"]);
        assert_eq!(split_keywords("Letter, letter"), ["Letter"]);
        assert!(split_keywords(" , ,").is_empty());
    }

    #[test]
    fn keyword_string_gold_is_schema_error() {
        let mut inst = synthetic::instances(Family::Booksum, 1, 2, 1, 3).remove(0);
        inst.questions[0].gold = Gold::Answer("x".into());
        let err = parse_instance_line(&instance_line(&inst)).unwrap_err();
        assert!(err.contains("keyword list"), "{err}");
    }

    #[test]
    fn load_strict_and_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.jsonl");
        let insts = synthetic::instances(Family::Ttl, 3, 2, 2, 1);
        save_instances(&path, &insts).unwrap();
        let loaded = load_instances(&path, false).unwrap();
        assert_eq!(loaded.instances, insts);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.insert_str(0, "{\"schema_version\":1}\n");
        std::fs::write(&path, text).unwrap();
        match load_instances(&path, false) {
            Err(DatasetError::Schema(SchemaError { line: 1, .. })) => {}
            other => panic!("expected schema error, got {other:?}"),
        }
        let lenient = load_instances(&path, true).unwrap();
        assert_eq!(lenient.instances.len(), 3);
        assert_eq!(lenient.skipped[0].line, 1);
    }

    #[test]
    fn sampling() {
        let mut insts = synthetic::instances(Family::DocQa, 264, 1, 1, 5);
        for i in &mut insts {
            i.dataset_tag = "squad".into();
        }
        insts.extend(synthetic::instances(Family::Ttl, 7, 1, 1, 6));
        let caps = BTreeMap::from([("squad".to_string(), 100), ("ttl".to_string(), 50)]);
        let a = stratified_sample(&insts, &caps, None, 42);
        assert_eq!(a.iter().filter(|i| i.dataset_tag == "squad").count(), 100);
        assert_eq!(a.iter().filter(|i| i.dataset_tag == "ttl").count(), 7);
        assert_eq!(a, stratified_sample(&insts, &caps, None, 42));
        assert_ne!(a, stratified_sample(&insts, &caps, None, 43));
        // intra-tag order preserved
        let pos: Vec<usize> = a
            .iter()
            .map(|s| insts.iter().position(|i| i.id == s.id && i.dataset_tag == s.dataset_tag).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn stats_shape() {
        let mut inst = synthetic::instances(Family::Ttl, 1, 10, 100, 2).remove(0);
        for c in &mut inst.chunks {
            c.text = vec!["tok"; 400].join(" ");
        }
        inst.dataset_tag = "trec_c".into();
        let stats = dataset_stats(&[inst], &WhitespaceTokenizer);
        let row = &stats.rows[0];
        assert_eq!(
            (row.instances, row.chunks_per_instance, row.tokens_per_chunk, row.questions_per_instance),
            (1, 10.0, 400.0, 100.0)
        );
        assert!(dataset_stats(&[], &WhitespaceTokenizer).rows.is_empty());
        let table = stats.render_table();
        assert!(table.contains("trec_c"));
        assert!(table.contains("Total"));
    }

    #[test]
    fn segmenter_respects_target() {
        let text = "a b c\n\nd e\n\nf g h i j k l";
        assert_eq!(segment_text(text, 5), ["a b c\n\nd e", "f g h i j", "k l"]);
        assert!(segment_text("", 5).is_empty());
    }
}
