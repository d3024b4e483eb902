//! Retrieval protocols: rotation robustness (single scan at many noise
//! levels, many scans at one level), episode recall and template recall.

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_2;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{episode_recall, spearman_rho};
use super::scorer::{prepare_all, top_k, ScanQuery, ScanScorer};
use super::synth::EpisodeLabel;
use super::EvalError;
use crate::query::TopKResult;
use crate::scan::{add_range_noise, apply_rotation, inject_template, LaserScan, ScanMeta, Template};
use crate::util::par_map;

/// `count` rotation magnitudes evenly spaced in (0, π/2].
pub fn mnss_levels(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / count as f64 * FRAC_PI_2).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnssOutcome {
    pub rho: f64,
    /// Store positions (= level indices) in result order.
    pub ranking: Vec<u64>,
}

/// Fills a store with `scan` rotated by each level (copy `i` gets `seq = i`),
/// queries with the unrotated scan, and correlates result position with
/// rotation magnitude. A scorer that prefers smaller rotations gets ρ = 1.
pub fn run_mnss<S: ScanScorer>(
    scan: &LaserScan,
    levels: &[f64],
    k: usize,
    scorer: &S,
) -> Result<MnssOutcome, EvalError> {
    if levels.len() < k {
        return Err(EvalError::InvalidParameter(format!(
            "{} noise levels cannot fill a top-{k}",
            levels.len()
        )));
    }
    let store: Vec<LaserScan> = levels
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let meta = ScanMeta {
                seq: i as u32,
                ..scan.meta().clone()
            };
            apply_rotation(scan, theta).with_meta(meta)
        })
        .collect();
    let prepared = prepare_all(scorer, &store)?;
    let q = scorer.prepare_query(ScanQuery::Whole(scan))?;
    let result = top_k(scorer, &q, &prepared, k)?;
    let positions: Vec<f64> = (1..=result.len()).map(|p| p as f64).collect();
    let magnitudes: Vec<f64> = result.items.iter().map(|s| levels[s.id as usize]).collect();
    Ok(MnssOutcome {
        rho: spearman_rho(&positions, &magnitudes)?,
        ranking: result.ids(),
    })
}

/// Rank correlation of two top-k lists over their union; an id missing from
/// one list takes rank k + 1 there.
pub fn union_rank_correlation(a: &TopKResult, b: &TopKResult, k: usize) -> Result<f64, EvalError> {
    let mut union: Vec<u64> = a.ids();
    for id in b.ids() {
        if !union.contains(&id) {
            union.push(id);
        }
    }
    let rank = |r: &TopKResult, id: u64| -> f64 {
        r.items
            .iter()
            .position(|s| s.id == id)
            .map_or(k as f64 + 1.0, |p| p as f64 + 1.0)
    };
    let ra: Vec<f64> = union.iter().map(|&id| rank(a, id)).collect();
    let rb: Vec<f64> = union.iter().map(|&id| rank(b, id)).collect();
    spearman_rho(&ra, &rb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnmsOutcome {
    pub theta: f64,
    pub per_query: Vec<f64>,
    pub mean: f64,
}

/// Rotates every stored scan and each query by the same `theta` and
/// compares the top-k before and after. `queries` index into `scans`.
pub fn run_snms<S: ScanScorer>(
    scans: &[LaserScan],
    queries: &[usize],
    theta: f64,
    k: usize,
    scorer: &S,
) -> Result<SnmsOutcome, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::InvalidParameter("no queries".into()));
    }
    if let Some(&bad) = queries.iter().find(|&&q| q >= scans.len()) {
        return Err(EvalError::InvalidParameter(format!("query index {bad} out of range")));
    }
    let rotated: Vec<LaserScan> = scans.iter().map(|s| apply_rotation(s, theta)).collect();
    let before = prepare_all(scorer, scans)?;
    let after = prepare_all(scorer, &rotated)?;
    let per_query = par_map(queries, |&qi| -> Result<f64, EvalError> {
        let qa = scorer.prepare_query(ScanQuery::Whole(&scans[qi]))?;
        let qb = scorer.prepare_query(ScanQuery::Whole(&rotated[qi]))?;
        let a = top_k(scorer, &qa, &before, k)?;
        let b = top_k(scorer, &qb, &after, k)?;
        union_rank_correlation(&a, &b, k)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(SnmsOutcome {
        theta,
        per_query,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecallTrial {
    pub query: u64,
    pub location_type: String,
    pub recall: f64,
}

/// For each query scan, recall over the other episodes of its location
/// type. The query's own episode is excluded since its neighbors in time
/// would trivially match.
pub fn run_episode_recall<S: ScanScorer>(
    scans: &[LaserScan],
    episodes: &[EpisodeLabel],
    queries: &[usize],
    k: usize,
    scorer: &S,
) -> Result<Vec<EpisodeRecallTrial>, EvalError> {
    let prepared = prepare_all(scorer, scans)?;
    par_map(queries, |&qi| -> Result<Option<EpisodeRecallTrial>, EvalError> {
        let own = episodes
            .iter()
            .find(|e| e.contains(qi as u64))
            .ok_or_else(|| EvalError::InvalidParameter(format!("scan {qi} is in no episode")))?;
        let others: Vec<EpisodeLabel> = episodes
            .iter()
            .filter(|e| e.location_type == own.location_type && *e != own)
            .cloned()
            .collect();
        if others.is_empty() {
            return Ok(None);
        }
        let q = scorer.prepare_query(ScanQuery::Whole(&scans[qi]))?;
        let result = top_k(scorer, &q, &prepared, k)?;
        Ok(Some(EpisodeRecallTrial {
            query: qi as u64,
            location_type: own.location_type.clone(),
            recall: episode_recall(&result, &others)?,
        }))
    })
    .into_iter()
    .filter_map(Result::transpose)
    .collect()
}

/// Perturbation applied to each injected copy of a template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateNoise {
    /// Range noise, meters.
    pub sigma: f64,
    /// Rotations are drawn uniformly from ±this, radians.
    pub max_rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecallParams {
    pub injections_per_template: usize,
    pub k: usize,
    pub noise: Option<TemplateNoise>,
    pub seed: u64,
}

impl Default for TemplateRecallParams {
    fn default() -> Self {
        Self {
            injections_per_template: 50,
            k: 200,
            noise: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecall {
    pub label: String,
    pub injected: usize,
    pub recall: f64,
}

/// Hosts after injection, with the host indices holding each template.
#[derive(Debug, Clone)]
pub struct InjectedStore {
    pub scans: Vec<LaserScan>,
    pub injected: Vec<Vec<usize>>,
}

/// Injects every template into its own disjoint random subset of hosts.
pub fn build_template_store(
    hosts: &[LaserScan],
    templates: &[Template],
    params: &TemplateRecallParams,
) -> Result<InjectedStore, EvalError> {
    let needed = params.injections_per_template * templates.len();
    if needed > hosts.len() {
        return Err(EvalError::InvalidParameter(format!(
            "{needed} injections need at least as many hosts, got {}",
            hosts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..hosts.len()).collect();
    order.shuffle(&mut rng);
    let mut scans = hosts.to_vec();
    let mut injected = Vec::with_capacity(templates.len());
    for (ti, template) in templates.iter().enumerate() {
        let chosen = &order[ti * params.injections_per_template..(ti + 1) * params.injections_per_template];
        for &h in chosen {
            let (fragment, rotation) = match params.noise {
                None => (template.clone(), 0.0),
                Some(n) => {
                    let noisy = add_range_noise(&template.fragment, n.sigma, rng.random())?;
                    let rot = if n.max_rotation > 0.0 {
                        rng.random_range(-n.max_rotation..=n.max_rotation)
                    } else {
                        0.0
                    };
                    (
                        Template {
                            label: template.label.clone(),
                            fragment: noisy,
                        },
                        rot,
                    )
                }
            };
            scans[h] = inject_template(&scans[h], &fragment, rotation)?;
        }
        let mut ids = chosen.to_vec();
        ids.sort_unstable();
        injected.push(ids);
    }
    Ok(InjectedStore { scans, injected })
}

/// Queries with each clean template and reports the share of the top-k
/// that holds an injected copy of it.
pub fn template_recall<S: ScanScorer>(
    hosts: &[LaserScan],
    templates: &[Template],
    params: &TemplateRecallParams,
    scorer: &S,
) -> Result<Vec<TemplateRecall>, EvalError> {
    let store = build_template_store(hosts, templates, params)?;
    let prepared = prepare_all(scorer, &store.scans)?;
    templates
        .iter()
        .zip(&store.injected)
        .map(|(t, ids)| {
            let q = scorer.prepare_query(ScanQuery::Fragment(&t.fragment))?;
            let result = top_k(scorer, &q, &prepared, params.k)?;
            let set: HashSet<u64> = ids.iter().map(|&i| i as u64).collect();
            let hits = result.items.iter().filter(|s| set.contains(&s.id)).count();
            Ok(TemplateRecall {
                label: t.label.clone(),
                injected: ids.len(),
                recall: hits as f64 / params.k as f64,
            })
        })
        .collect()
}
