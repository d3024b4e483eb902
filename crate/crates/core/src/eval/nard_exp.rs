//! Residual-curve comparison of graph-guided evaluation against a random
//! order pass, on clustered synthetic embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::inference::{LatentVector, LATENT_DIM};
use crate::query::{evaluate, nard_curve, random_order_baseline, NardPoint, QueryRequest, Similarity};
use crate::store::{EpsilonGraph, StoreSnapshot};
use crate::util::par_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub clusters: usize,
    /// Standard deviation of cluster centers around the origin.
    pub center_spread: f64,
    /// Standard deviation of members around their center.
    pub cluster_spread: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            clusters: 8,
            center_spread: 4.0,
            cluster_spread: 1.0,
        }
    }
}

/// Draws mixture centers then `n` points with uniformly chosen clusters.
pub struct Mixture {
    centers: Vec<[f64; LATENT_DIM]>,
    member: Normal<f64>,
}

impl Mixture {
    pub fn new(params: &MixtureParams, rng: &mut impl Rng) -> Self {
        let center = Normal::new(0.0, params.center_spread).expect("finite spread");
        let centers = (0..params.clusters.max(1))
            .map(|_| std::array::from_fn(|_| center.sample(rng)))
            .collect();
        Self {
            centers,
            member: Normal::new(0.0, params.cluster_spread).expect("finite spread"),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> LatentVector {
        let c = &self.centers[rng.random_range(0..self.centers.len())];
        std::array::from_fn(|d| (c[d] + self.member.sample(rng)) as f32)
    }
}

/// Stub similarity that decays with embedding distance, so scores are
/// highest inside the query's own cluster.
pub fn distance_similarity(q: &LatentVector, v: &LatentVector) -> f64 {
    let d2: f64 = q
        .iter()
        .zip(v)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    1.0 / (1.0 + d2.sqrt())
}

/// Median distance from sampled points to their `degree`-th nearest
/// neighbor: an ε giving roughly that many neighbors per node.
pub fn epsilon_for_degree(snapshot: &StoreSnapshot, degree: usize, probes: usize, seed: u64) -> f64 {
    let n = snapshot.len();
    if n < 2 || degree == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = (0..probes.max(1)).map(|_| rng.random_range(0..n)).collect();
    let mut kth: Vec<f64> = par_map(&picks, |&i| {
        let vi = &snapshot.records()[i].vector;
        let mut d: Vec<f64> = snapshot
            .records()
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, r)| crate::store::distance(vi, &r.vector))
            .collect();
        let idx = degree.min(d.len()) - 1;
        let (_, nth, _) = d.select_nth_unstable_by(idx, f64::total_cmp);
        *nth
    });
    kth.sort_by(f64::total_cmp);
    kth[kth.len() / 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub t: Vec<usize>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Area under the mean curve with evaluations rescaled to [0, 1].
    pub auc: f64,
}

/// Mean and population variance across curves of equal length.
pub fn curve_stats(curves: &[Vec<NardPoint>]) -> CurveStats {
    let len = curves.first().map_or(0, Vec::len);
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut variance = vec![0.0; len];
    for i in 0..len {
        let m = curves.iter().map(|c| c[i].value).sum::<f64>() / n;
        mean[i] = m;
        variance[i] = curves.iter().map(|c| (c[i].value - m).powi(2)).sum::<f64>() / n;
    }
    let t = curves.first().map_or_else(Vec::new, |c| c.iter().map(|p| p.t).collect());
    let auc = area(&mean);
    CurveStats {
        t,
        mean,
        variance,
        auc,
    }
}

/// Trapezoid area over evenly spaced points on [0, 1].
pub fn area(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let inner: f64 = values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]);
            inner / (n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NardTrial {
    pub query: usize,
    pub auc_evaluate: f64,
    pub auc_baseline: f64,
    pub random_phase_evals: usize,
    pub expansion_phase_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NardComparison {
    pub k: usize,
    pub t: usize,
    pub trials: Vec<NardTrial>,
    pub evaluate: CurveStats,
    pub baseline: CurveStats,
}

/// Runs both strategies for every query. Query `i` uses seed `seed + i`
/// for its sampling order and for the baseline permutation.
pub fn nard_experiment<S: Similarity>(
    snapshot: &StoreSnapshot,
    graph: &EpsilonGraph,
    queries: &[LatentVector],
    k: usize,
    t: Option<usize>,
    sim: &S,
    seed: u64,
) -> Result<NardComparison, EvalError> {
    if snapshot.len() < k {
        return Err(EvalError::InvalidParameter(format!(
            "store of {} records is smaller than k = {k}",
            snapshot.len()
        )));
    }
    let indexed: Vec<(usize, &LatentVector)> = queries.iter().enumerate().collect();
    let runs = par_map(&indexed, |&(i, q)| -> Result<_, EvalError> {
        let s = seed.wrapping_add(i as u64);
        let mut req = QueryRequest::new(*q, k).with_seed(s);
        req.t = t;
        let (res, trace) = evaluate(&req, snapshot, graph, sim)?;
        let eval_curve = nard_curve(&trace, k, &res)?;
        let (bres, btrace) = random_order_baseline(q, k, snapshot, sim, s)?;
        let base_curve = nard_curve(&btrace, k, &bres)?;
        let trial = NardTrial {
            query: i,
            auc_evaluate: area(&eval_curve.iter().map(|p| p.value).collect::<Vec<_>>()),
            auc_baseline: area(&base_curve.iter().map(|p| p.value).collect::<Vec<_>>()),
            random_phase_evals: trace.phase_count(crate::query::Phase::Random),
            expansion_phase_evals: trace.phase_count(crate::query::Phase::Expansion),
        };
        Ok((trial, eval_curve, base_curve))
    });
    let mut trials = Vec::with_capacity(runs.len());
    let mut eval_curves = Vec::with_capacity(runs.len());
    let mut base_curves = Vec::with_capacity(runs.len());
    for r in runs {
        let (trial, e, b) = r?;
        trials.push(trial);
        eval_curves.push(e);
        base_curves.push(b);
    }
    Ok(NardComparison {
        k,
        t: t.unwrap_or_else(|| crate::query::default_t(k, snapshot.len())),
        trials,
        evaluate: curve_stats(&eval_curves),
        baseline: curve_stats(&base_curves),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_of_linear_decay_is_half() {
        let line: Vec<f64> = (0..=100).map(|i| 1.0 - i as f64 / 100.0).collect();
        assert!((area(&line) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mixture_is_seeded() {
        let p = MixtureParams::default();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let (ma, mb) = (Mixture::new(&p, &mut a), Mixture::new(&p, &mut b));
        assert_eq!(ma.sample(&mut a), mb.sample(&mut b));
    }

    #[test]
    fn small_experiment_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mix = Mixture::new(&MixtureParams::default(), &mut rng);
        let snap = StoreSnapshot::from_vectors((0..400).map(|_| mix.sample(&mut rng)));
        let eps = epsilon_for_degree(&snap, 10, 50, 0);
        let graph = crate::store::build_graph(&snap, eps).unwrap();
        let queries: Vec<_> = (0..6).map(|_| mix.sample(&mut rng)).collect();
        let sim = |q: &LatentVector, r: &crate::store::EmbeddingRecord| distance_similarity(q, &r.vector);
        let out = nard_experiment(&snap, &graph, &queries, 5, None, &sim, 11).unwrap();
        assert_eq!(out.trials.len(), 6);
        assert_eq!(out.evaluate.mean.len(), 400 - 5 + 1);
        assert_eq!(out.evaluate.mean[0], 1.0);
        assert_eq!(*out.baseline.mean.last().unwrap(), 0.0);
        let again = nard_experiment(&snap, &graph, &queries, 5, None, &sim, 11).unwrap();
        assert_eq!(out, again);
    }
}
