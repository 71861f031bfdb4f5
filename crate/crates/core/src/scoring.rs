//! Parent classification and same-level similarity over a trained model.
//!
//! Classification: `Cl(v | w) = f(v, w) / T(w)`.
//! Similarity: `ln CO(x, y) = sum_{v in pa(x)} ln(f(v, x) / n) + sum_{v in pa(y)} ln(f(v, y) / n)`,
//! evaluated in log space. Candidates for [`related`] are the nodes sharing
//! at least one parent with the query, but every score sums over all parents.
//!
//! Result lists are ordered by score descending, then label ascending (byte
//! order), so repeated queries are identical.

use std::cmp::Ordering;

use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::graph::{Model, NodeId, NodeRef};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("unknown node {0}")]
    UnknownNode(NodeRef),
    #[error("node {0} has no incoming evidence")]
    ZeroEvidence(NodeRef),
    #[error("{x} and {y} are not on the same level")]
    LevelMismatch { x: NodeRef, y: NodeRef },
    #[error("{0} is the root; queries need a node at level 1 or deeper")]
    RootNode(NodeRef),
    #[error("{x} and {y} share no parent")]
    NoSharedParent { x: NodeRef, y: NodeRef },
    #[error("k must be positive")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResult {
    pub label: String,
    pub score: f64,
}

/// `p̂(v, w) = f(v, w) / n`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EdgeProbability(f64);

impl EdgeProbability {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn edge_probability(model: &Model, parent: &NodeRef, child: &NodeRef) -> EdgeProbability {
    let n = model.n();
    if n == 0 {
        return EdgeProbability(0.0);
    }
    EdgeProbability(model.frequency(parent, child) as f64 / n as f64)
}

/// `Cl(parent | child)`; 0 when the arc is absent.
pub fn classification_score(model: &Model, parent: &NodeRef, child: &NodeRef) -> Result<f64, ScoreError> {
    let child_id = model.id_of(child).ok_or_else(|| ScoreError::UnknownNode(child.clone()))?;
    let total = model.stat(child_id).in_total;
    if total == 0 {
        return Err(ScoreError::ZeroEvidence(child.clone()));
    }
    let freq = model.id_of(parent).map_or(0, |p| model.edge_freq(p, child_id));
    Ok(freq as f64 / total as f64)
}

/// Top-`k` parents of `child` by classification score.
pub fn classify(model: &Model, child: &NodeRef, k: usize) -> Result<Vec<ScoredResult>, ScoreError> {
    if k == 0 {
        return Err(ScoreError::InvalidK);
    }
    let child_id = model.id_of(child).ok_or_else(|| ScoreError::UnknownNode(child.clone()))?;
    let total = model.stat(child_id).in_total;
    if total == 0 {
        return Err(ScoreError::ZeroEvidence(child.clone()));
    }
    let mut results: Vec<ScoredResult> = model
        .parent_ids(child_id)
        .iter()
        .map(|&p| ScoredResult {
            label: model.label(p).to_owned(),
            score: model.edge_freq(p, child_id) as f64 / total as f64,
        })
        .collect();
    rank(&mut results, k);
    Ok(results)
}

/// Natural log of `CO(x, y)`.
pub fn similarity_log_score(model: &Model, x: &NodeRef, y: &NodeRef) -> Result<f64, ScoreError> {
    let (x_id, y_id) = same_level_pair(model, x, y)?;
    let x_parents: FxHashSet<NodeId> = model.parent_ids(x_id).iter().copied().collect();
    if !model.parent_ids(y_id).iter().any(|p| x_parents.contains(p)) {
        return Err(ScoreError::NoSharedParent { x: x.clone(), y: y.clone() });
    }
    Ok(parent_log_mass(model, x_id) + parent_log_mass(model, y_id))
}

/// Top-`k` nodes sharing a parent with `x`, ranked by similarity to `x`.
pub fn related(model: &Model, x: &NodeRef, k: usize) -> Result<Vec<ScoredResult>, ScoreError> {
    if k == 0 {
        return Err(ScoreError::InvalidK);
    }
    let x_id = model.id_of(x).ok_or_else(|| ScoreError::UnknownNode(x.clone()))?;
    if x_id.level() == 0 {
        return Err(ScoreError::RootNode(x.clone()));
    }
    let x_mass = parent_log_mass(model, x_id);
    let mut seen = FxHashSet::default();
    let mut results = Vec::new();
    for &parent in model.parent_ids(x_id) {
        for &candidate in model.child_ids(parent) {
            if candidate == x_id || candidate.level() != x_id.level() || !seen.insert(candidate) {
                continue;
            }
            results.push(ScoredResult {
                label: model.label(candidate).to_owned(),
                score: x_mass + parent_log_mass(model, candidate),
            });
        }
    }
    rank(&mut results, k);
    Ok(results)
}

/// Whether `x` and `y` are on the same level and share a parent; unknown
/// nodes simply share nothing.
pub fn shares_parent(model: &Model, x: &NodeRef, y: &NodeRef) -> bool {
    match (model.id_of(x), model.id_of(y)) {
        (Some(a), Some(b)) if a.level() == b.level() && a.level() > 0 => {
            let pa: FxHashSet<NodeId> = model.parent_ids(a).iter().copied().collect();
            model.parent_ids(b).iter().any(|p| pa.contains(p))
        }
        _ => false,
    }
}

fn same_level_pair(model: &Model, x: &NodeRef, y: &NodeRef) -> Result<(NodeId, NodeId), ScoreError> {
    let x_id = model.id_of(x).ok_or_else(|| ScoreError::UnknownNode(x.clone()))?;
    let y_id = model.id_of(y).ok_or_else(|| ScoreError::UnknownNode(y.clone()))?;
    if x_id.level() != y_id.level() {
        return Err(ScoreError::LevelMismatch { x: x.clone(), y: y.clone() });
    }
    if x_id.level() == 0 {
        return Err(ScoreError::RootNode(x.clone()));
    }
    Ok((x_id, y_id))
}

/// `sum_{v in pa(w)} ln(f(v, w) / n)`, summed in parent-label order so equal
/// models give bit-identical scores regardless of insertion history.
fn parent_log_mass(model: &Model, id: NodeId) -> f64 {
    let n = model.n() as f64;
    let mut terms: Vec<(&str, u64)> = model
        .parent_ids(id)
        .iter()
        .filter(|p| p.level() + 1 == id.level())
        .map(|&p| (model.label(p), model.edge_freq(p, id)))
        .filter(|&(_, f)| f > 0)
        .collect();
    terms.sort_unstable_by(|a, b| a.0.cmp(b.0));
    terms.iter().map(|&(_, f)| (f as f64 / n).ln()).sum()
}

fn rank(results: &mut Vec<ScoredResult>, k: usize) {
    results.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.label.as_bytes().cmp(b.label.as_bytes()),
        other => other,
    });
    results.truncate(k);
}
