//! Okapi BM25 over memory entries.
//!
//! Terms are lowercase runs of alphanumeric characters. Scoring uses
//! k1 = 1.2, b = 0.75 and the non-negative idf
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`. Every entry is a candidate, so a
//! search returns `min(k, N)` hits even when some score zero; ties go to the
//! lower id.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::memory::MemoryEntry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn idf(&self, docs: usize, df: usize) -> f64 {
        let n = docs as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn term_weight(&self, tf: usize, doc_len: usize, avg_len: f64) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * (doc_len as f64 / avg_len);
        tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

/// Orders hits by descending score, then ascending id.
pub fn rank(hits: &mut [Hit]) {
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
}

#[derive(Debug, Clone)]
struct Posting {
    doc: usize,
    tf: usize,
}

/// Immutable inverted index.
#[derive(Debug, Clone)]
pub struct Index {
    params: Bm25Params,
    ids: Vec<u64>,
    lengths: Vec<usize>,
    avg_len: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl Index {
    pub fn build<'a>(entries: impl IntoIterator<Item = &'a MemoryEntry>) -> Self {
        Self::build_with(entries.into_iter().map(|e| (e.id, e.text.as_str())), Bm25Params::default())
    }

    pub fn build_with<'a>(docs: impl IntoIterator<Item = (u64, &'a str)>, params: Bm25Params) -> Self {
        let mut ids = Vec::new();
        let mut lengths = Vec::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (doc, (id, text)) in docs.into_iter().enumerate() {
            let terms = tokenize(text);
            ids.push(id);
            lengths.push(terms.len());
            let mut counts: HashMap<String, usize> = HashMap::new();
            for term in terms {
                *counts.entry(term).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc, tf });
            }
        }
        let total: usize = lengths.iter().sum();
        let avg_len = if ids.is_empty() { 0.0 } else { total as f64 / ids.len() as f64 };
        Index {
            params,
            ids,
            lengths,
            avg_len,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Scores of every document, in insertion order.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.ids.len()];
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.params.idf(self.ids.len(), list.len());
            for p in list {
                scores[p.doc] += idf * self.params.term_weight(p.tf, self.lengths[p.doc], self.avg_len);
            }
        }
        scores
    }

    pub fn search(&self, query: &str, k: usize) -> Vec<Hit> {
        let mut hits: Vec<Hit> = self
            .scores(query)
            .into_iter()
            .zip(&self.ids)
            .map(|(score, &id)| Hit { id, score })
            .collect();
        rank(&mut hits);
        hits.truncate(k);
        hits
    }
}
