//! Precision of related-term retrieval against a labeled pair file.
//!
//! Pair file lines are `termA<TAB>termB<TAB>related|unrelated`. A pair is
//! retrieved when the two terms share a parent (or, with a `top_k`, when
//! `termB` is among the top-k related terms of `termA`). Precision is the
//! share of retrieved pairs labeled related.

use thiserror::Error;

use crate::graph::{Model, NodeRef};
use crate::scoring::{related, shares_parent, similarity_log_score};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("pair file line {line}: {message}")]
pub struct PairParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Related,
    Unrelated,
}

impl PairLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Related => "related",
            PairLabel::Unrelated => "unrelated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub a: String,
    pub b: String,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairVerdict {
    pub pair: LabeledPair,
    pub retrieved: bool,
    /// Similarity log-score when the pair shares a parent.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub verdicts: Vec<PairVerdict>,
    pub retrieved: usize,
    pub retrieved_related: usize,
}

impl EvalReport {
    /// `None` when nothing was retrieved.
    pub fn precision(&self) -> Option<f64> {
        (self.retrieved > 0).then(|| self.retrieved_related as f64 / self.retrieved as f64)
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<LabeledPair>, PairParseError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| PairParseError { line: i + 1, message: message.to_owned() };
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, label] = fields.as_slice() else {
            return Err(err("expected termA<TAB>termB<TAB>related|unrelated"));
        };
        if a.is_empty() || b.is_empty() {
            return Err(err("empty term"));
        }
        let label = match *label {
            "related" => PairLabel::Related,
            "unrelated" => PairLabel::Unrelated,
            _ => return Err(err("label must be `related` or `unrelated`")),
        };
        pairs.push(LabeledPair { a: (*a).to_owned(), b: (*b).to_owned(), label });
    }
    Ok(pairs)
}

pub fn evaluate(model: &Model, level: usize, pairs: &[LabeledPair], top_k: Option<usize>) -> EvalReport {
    let mut verdicts = Vec::with_capacity(pairs.len());
    let (mut retrieved, mut retrieved_related) = (0, 0);
    for pair in pairs {
        let x = NodeRef::new(level, pair.a.as_str());
        let y = NodeRef::new(level, pair.b.as_str());
        let shared = shares_parent(model, &x, &y);
        let hit = match top_k {
            None => shared,
            Some(k) => {
                shared && related(model, &x, k.max(1)).is_ok_and(|r| r.iter().any(|s| s.label == pair.b))
            }
        };
        let score = if shared { similarity_log_score(model, &x, &y).ok() } else { None };
        if hit {
            retrieved += 1;
            if pair.label == PairLabel::Related {
                retrieved_related += 1;
            }
        }
        verdicts.push(PairVerdict { pair: pair.clone(), retrieved: hit, score });
    }
    EvalReport { verdicts, retrieved, retrieved_related }
}
