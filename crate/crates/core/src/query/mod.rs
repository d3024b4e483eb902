//! Top-k evaluation under a black-box similarity: graph-guided evaluation,
//! the exhaustive scans it is measured against, and residual curves.

mod evaluate;
mod nard;

pub use evaluate::{evaluate, linear_scan, random_order_baseline};
pub use nard::{nard_curve, residual_units, units_to_residual, NardPoint};

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::inference::{LatentVector, SimilarityNet};
use crate::store::EmbeddingRecord;

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("t must be at least 1")]
    ZeroT,
    #[error("score {score} for id {id} is outside [0, 1]")]
    InvalidScore { id: u64, score: f64 },
    #[error("graph covers {graph} nodes but the snapshot holds {snapshot}")]
    GraphMismatch { graph: usize, snapshot: usize },
    #[error("trace holds {len} evaluations, fewer than k = {k}")]
    TraceTooShort { len: usize, k: usize },
    #[error("final result does not match the trace")]
    TraceMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scores a candidate record against the query vector. Higher is more
/// similar; scores must lie in [0, 1].
pub trait Similarity: Sync {
    fn score(&self, q: &LatentVector, candidate: &EmbeddingRecord) -> f64;
}

impl Similarity for SimilarityNet {
    fn score(&self, q: &LatentVector, candidate: &EmbeddingRecord) -> f64 {
        SimilarityNet::score(self, q, &candidate.vector) as f64
    }
}

impl<F> Similarity for F
where
    F: Fn(&LatentVector, &EmbeddingRecord) -> f64 + Sync,
{
    fn score(&self, q: &LatentVector, candidate: &EmbeddingRecord) -> f64 {
        self(q, candidate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRequest {
    pub q: LatentVector,
    pub k: usize,
    /// Random evaluations per sampling phase; `None` picks `max(4k, ⌈N/100⌉)`.
    pub t: Option<usize>,
    pub seed: u64,
}

impl QueryRequest {
    pub fn new(q: LatentVector, k: usize) -> Self {
        Self {
            q,
            k,
            t: None,
            seed: 0,
        }
    }

    pub fn with_t(mut self, t: usize) -> Self {
        self.t = Some(t);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn effective_t(&self, n: usize) -> usize {
        self.t.unwrap_or_else(|| default_t(self.k, n))
    }
}

pub fn default_t(k: usize, n: usize) -> usize {
    (4 * k).max(n.div_ceil(100)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: u64,
    pub score: f64,
}

/// Result order: higher score first, then lower id.
pub(crate) fn rank_cmp(a: &ScoredId, b: &ScoredId) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Results in descending score, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopKResult {
    pub items: Vec<ScoredId>,
}

impl TopKResult {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.items.iter().map(|s| s.id).collect()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.items.iter().any(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Random,
    Expansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based evaluation count.
    pub step: usize,
    pub id: u64,
    pub score: f64,
    /// Residual Σ(1 − score) over the best k seen so far.
    pub d_t: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub k: usize,
    pub steps: Vec<TraceStep>,
}

impl QueryTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn phase_count(&self, phase: Phase) -> usize {
        self.steps.iter().filter(|s| s.phase == phase).count()
    }

    /// One JSON record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), QueryError> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Bounded best-k set kept sorted best-first, with the exact fixed-point
/// residual of its members.
#[derive(Debug, Clone)]
pub(crate) struct BestK {
    k: usize,
    items: Vec<ScoredId>,
    residual: i128,
}

impl BestK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k.min(1 << 16)),
            residual: 0,
        }
    }

    /// Offers a candidate; returns whether it entered the set.
    pub(crate) fn offer(&mut self, c: ScoredId) -> bool {
        if self.items.len() == self.k {
            let worst = self.items.last().expect("k >= 1");
            if rank_cmp(&c, worst) != Ordering::Less {
                return false;
            }
            let out = self.items.pop().expect("non-empty");
            self.residual -= residual_units(out.score);
        }
        let pos = self
            .items
            .binary_search_by(|probe| rank_cmp(probe, &c))
            .unwrap_or_else(|p| p);
        self.items.insert(pos, c);
        self.residual += residual_units(c.score);
        true
    }

    pub(crate) fn items(&self) -> &[ScoredId] {
        &self.items
    }

    pub(crate) fn residual_units(&self) -> i128 {
        self.residual
    }

    pub(crate) fn into_result(self) -> TopKResult {
        TopKResult { items: self.items }
    }
}
