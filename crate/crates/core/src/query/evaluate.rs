use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{units_to_residual, BestK, Phase, QueryError, QueryRequest, QueryTrace, ScoredId, Similarity, TopKResult, TraceStep};
use crate::inference::LatentVector;
use crate::store::{EpsilonGraph, StoreSnapshot};

struct Run<'a, S: ?Sized> {
    q: &'a LatentVector,
    snapshot: &'a StoreSnapshot,
    sim: &'a S,
    best: BestK,
    evaluated: Vec<bool>,
    trace: QueryTrace,
}

impl<'a, S: Similarity + ?Sized> Run<'a, S> {
    fn new(q: &'a LatentVector, k: usize, snapshot: &'a StoreSnapshot, sim: &'a S) -> Result<Self, QueryError> {
        if k == 0 {
            return Err(QueryError::ZeroK);
        }
        Ok(Self {
            q,
            snapshot,
            sim,
            best: BestK::new(k),
            evaluated: vec![false; snapshot.len()],
            trace: QueryTrace {
                k,
                steps: Vec::with_capacity(snapshot.len()),
            },
        })
    }

    fn eval(&mut self, idx: usize, phase: Phase) -> Result<bool, QueryError> {
        debug_assert!(!self.evaluated[idx]);
        self.evaluated[idx] = true;
        let record = &self.snapshot.records()[idx];
        let score = self.sim.score(self.q, record);
        if !(0.0..=1.0).contains(&score) {
            return Err(QueryError::InvalidScore { id: record.id, score });
        }
        let entered = self.best.offer(ScoredId { id: record.id, score });
        self.trace.steps.push(TraceStep {
            step: self.trace.steps.len() + 1,
            id: record.id,
            score,
            d_t: units_to_residual(self.best.residual_units()),
            phase,
        });
        Ok(entered)
    }

    fn finish(self) -> (TopKResult, QueryTrace) {
        (self.best.into_result(), self.trace)
    }
}

fn sweep<S: Similarity + ?Sized>(
    q: &LatentVector,
    k: usize,
    snapshot: &StoreSnapshot,
    sim: &S,
    order: impl IntoIterator<Item = usize>,
) -> Result<(TopKResult, QueryTrace), QueryError> {
    let mut run = Run::new(q, k, snapshot, sim)?;
    for idx in order {
        run.eval(idx, Phase::Random)?;
    }
    Ok(run.finish())
}

/// Scores every record in ascending id order.
pub fn linear_scan<S: Similarity + ?Sized>(
    q: &LatentVector,
    k: usize,
    snapshot: &StoreSnapshot,
    sim: &S,
) -> Result<(TopKResult, QueryTrace), QueryError> {
    sweep(q, k, snapshot, sim, 0..snapshot.len())
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Scores every record in a seeded random order.
pub fn random_order_baseline<S: Similarity + ?Sized>(
    q: &LatentVector,
    k: usize,
    snapshot: &StoreSnapshot,
    sim: &S,
    seed: u64,
) -> Result<(TopKResult, QueryTrace), QueryError> {
    sweep(q, k, snapshot, sim, permutation(snapshot.len(), seed))
}

/// Graph-guided evaluation.
///
/// Alternates two phases until every record has been scored. The sampling
/// phase scores `t` not-yet-scored records in a seeded random order. The
/// expansion phase repeatedly takes the best member of the current top-k
/// that still has unscored graph neighbors and scores its next neighbor.
/// Because every record is eventually scored, the result is the exact
/// top-k; the graph only changes how early good candidates are found.
pub fn evaluate<S: Similarity + ?Sized>(
    req: &QueryRequest,
    snapshot: &StoreSnapshot,
    graph: &EpsilonGraph,
    sim: &S,
) -> Result<(TopKResult, QueryTrace), QueryError> {
    let n = snapshot.len();
    if graph.node_count() != n {
        return Err(QueryError::GraphMismatch {
            graph: graph.node_count(),
            snapshot: n,
        });
    }
    if req.t == Some(0) {
        return Err(QueryError::ZeroT);
    }
    let t = req.effective_t(n);
    let mut run = Run::new(&req.q, req.k, snapshot, sim)?;
    let order = permutation(n, req.seed);
    let mut next_random = 0usize;
    // position of the next neighbor to try, per node
    let mut cursor = vec![0u32; n];
    let mut remaining = n;

    while remaining > 0 {
        let mut taken = 0;
        while taken < t && next_random < n {
            let idx = order[next_random];
            next_random += 1;
            if !run.evaluated[idx] {
                run.eval(idx, Phase::Random)?;
                taken += 1;
                remaining -= 1;
            }
        }

        loop {
            let mut target = None;
            for member in run.best.items() {
                let i = member.id as usize;
                let nbrs = graph.neighbors(member.id).expect("graph covers the snapshot");
                let c = &mut cursor[i];
                while (*c as usize) < nbrs.len() && run.evaluated[nbrs[*c as usize] as usize] {
                    *c += 1;
                }
                if (*c as usize) < nbrs.len() {
                    target = Some(nbrs[*c as usize] as usize);
                    break;
                }
            }
            let Some(j) = target else { break };
            run.eval(j, Phase::Expansion)?;
            remaining -= 1;
        }
    }
    Ok(run.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{build_graph, build_graph_with, EmbeddingRecord, GraphOptions};

    fn line_store(n: usize) -> StoreSnapshot {
        StoreSnapshot::from_vectors((0..n).map(|i| {
            let mut v = [0f32; 32];
            v[0] = i as f32;
            v
        }))
    }

    fn closeness(q: &LatentVector, r: &EmbeddingRecord) -> f64 {
        1.0 / (1.0 + (q[0] - r.vector[0]).abs() as f64)
    }

    #[test]
    fn covers_every_record_once() {
        let snap = line_store(50);
        let graph = build_graph(&snap, 1.0).unwrap();
        let req = QueryRequest::new([7.0; 32], 3).with_t(4).with_seed(2);
        let (res, trace) = evaluate(&req, &snap, &graph, &closeness).unwrap();
        let mut ids: Vec<u64> = trace.steps.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..50).collect::<Vec<_>>());
        let (lin, _) = linear_scan(&req.q, 3, &snap, &closeness).unwrap();
        assert_eq!(res, lin);
        assert!(trace.phase_count(Phase::Expansion) > 0);
    }

    #[test]
    fn expansion_walks_the_chain() {
        // a path graph: after sampling, expansion should follow the line towards q
        let snap = line_store(200);
        let graph = build_graph_with(&snap, 1.0, GraphOptions { degree_cap: None }).unwrap();
        let mut q = [0f32; 32];
        q[0] = 120.0;
        let req = QueryRequest::new(q, 1).with_t(20).with_seed(1);
        let (res, trace) = evaluate(&req, &snap, &graph, &closeness).unwrap();
        assert_eq!(res.ids(), [120]);
        let found = trace.steps.iter().position(|s| s.id == 120).unwrap();
        assert!(found < 20 + 120, "found at step {found}");
    }

    #[test]
    fn k_above_n_and_empty_store() {
        let snap = line_store(3);
        let graph = build_graph(&snap, 0.5).unwrap();
        let req = QueryRequest::new([0.0; 32], 10);
        let (res, _) = evaluate(&req, &snap, &graph, &closeness).unwrap();
        assert_eq!(res.ids(), [0, 1, 2]);

        let empty = StoreSnapshot::default();
        let g = build_graph(&empty, 1.0).unwrap();
        let (res, trace) = evaluate(&req, &empty, &g, &closeness).unwrap();
        assert!(res.is_empty() && trace.is_empty());
        assert!(linear_scan(&req.q, 5, &empty, &closeness).unwrap().0.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        let snap = line_store(3);
        let graph = build_graph(&snap, 0.5).unwrap();
        let zero_k = QueryRequest::new([0.0; 32], 0);
        assert!(matches!(evaluate(&zero_k, &snap, &graph, &closeness), Err(QueryError::ZeroK)));
        let zero_t = QueryRequest::new([0.0; 32], 1).with_t(0);
        assert!(matches!(evaluate(&zero_t, &snap, &graph, &closeness), Err(QueryError::ZeroT)));
        let nan = |_: &LatentVector, _: &EmbeddingRecord| f64::NAN;
        assert!(matches!(
            linear_scan(&[0.0; 32], 1, &snap, &nan),
            Err(QueryError::InvalidScore { .. })
        ));
        let other = build_graph(&line_store(4), 0.5).unwrap();
        assert!(matches!(
            evaluate(&QueryRequest::new([0.0; 32], 1), &snap, &other, &closeness),
            Err(QueryError::GraphMismatch { .. })
        ));
    }

    #[test]
    fn planted_needle() {
        let snap = line_store(100);
        let mut q = [0f32; 32];
        q[0] = 63.0;
        let (res, _) = linear_scan(&q, 1, &snap, &closeness).unwrap();
        assert_eq!(res.ids(), [63]);
        let (a, ta) = random_order_baseline(&q, 5, &snap, &closeness, 4).unwrap();
        let (b, tb) = random_order_baseline(&q, 5, &snap, &closeness, 4).unwrap();
        assert_eq!((a, ta), (b, tb));
    }
}
