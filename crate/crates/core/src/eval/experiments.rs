//! Complete experiment runs: generate data, run a protocol over seeded
//! queries, and collect everything into an `ExperimentReport`.

use std::f64::consts::FRAC_PI_4;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::nard_exp::{distance_similarity, epsilon_for_degree, nard_experiment, Mixture, MixtureParams};
use super::protocols::{mnss_levels, run_episode_recall, run_mnss, run_snms, template_recall, TemplateNoise, TemplateRecallParams};
use super::report::{mean, median, ExperimentReport};
use super::scorer::ScanScorer;
use super::synth::{default_templates, synth_world, SynthParams};
use super::EvalError;
use crate::inference::LatentVector;
use crate::store::{build_graph, EmbeddingRecord, StoreSnapshot};

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("experiment parameters serialize")
}

/// Picks `count` distinct indices below `n`, in draw order.
fn pick_queries(n: usize, count: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if count == 0 || count > n {
        return Err(EvalError::InvalidParameter(format!("cannot pick {count} queries from {n} scans")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Ok(sample(&mut rng, n, count).into_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnssParams {
    pub levels: usize,
    pub k: usize,
    pub queries: usize,
    pub corpus: SynthParams,
}

impl Default for MnssParams {
    fn default() -> Self {
        Self {
            levels: 50,
            k: 50,
            queries: 10,
            corpus: SynthParams::default(),
        }
    }
}

/// Rotation robustness of one scan at many magnitudes; mean ρ over queries.
pub fn mnss_experiment<S: ScanScorer>(
    p: &MnssParams,
    scorer: &S,
    scorer_name: &str,
    seed: u64,
) -> Result<ExperimentReport, EvalError> {
    let corpus = synth_world(&p.corpus, seed);
    let queries = pick_queries(corpus.scans.len(), p.queries, seed)?;
    let levels = mnss_levels(p.levels);
    let mut trials = Vec::new();
    let mut rhos = Vec::new();
    for &q in &queries {
        let out = run_mnss(&corpus.scans[q], &levels, p.k, scorer)?;
        rhos.push(out.rho);
        trials.push(json!({ "query": q, "rho": out.rho }));
    }
    Ok(ExperimentReport {
        experiment: "mnss".into(),
        seed,
        parameters: json!({ "scorer": scorer_name, "params": to_value(p) }),
        aggregation: "mean".into(),
        trials,
        aggregate: json!({ "rho": mean(&rhos) }),
        curves: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnmsParams {
    pub k: usize,
    pub queries: usize,
    /// Fixed rotation; `None` draws one uniformly from (0, π/4).
    pub theta: Option<f64>,
    pub corpus: SynthParams,
}

impl Default for SnmsParams {
    fn default() -> Self {
        Self {
            k: 50,
            queries: 10,
            theta: None,
            corpus: SynthParams::default(),
        }
    }
}

pub fn snms_experiment<S: ScanScorer>(
    p: &SnmsParams,
    scorer: &S,
    scorer_name: &str,
    seed: u64,
) -> Result<ExperimentReport, EvalError> {
    let corpus = synth_world(&p.corpus, seed);
    let queries = pick_queries(corpus.scans.len(), p.queries, seed)?;
    let theta = p.theta.unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        rng.random_range(0.0..FRAC_PI_4)
    });
    let out = run_snms(&corpus.scans, &queries, theta, p.k, scorer)?;
    let trials = queries
        .iter()
        .zip(&out.per_query)
        .map(|(q, rho)| json!({ "query": q, "rho": rho }))
        .collect();
    Ok(ExperimentReport {
        experiment: "snms".into(),
        seed,
        parameters: json!({ "scorer": scorer_name, "theta": theta, "params": to_value(p) }),
        aggregation: "mean".into(),
        trials,
        aggregate: json!({ "rho": out.mean }),
        curves: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallParams {
    pub k: usize,
    pub queries: usize,
    pub corpus: SynthParams,
}

impl Default for RecallParams {
    fn default() -> Self {
        Self {
            k: 10,
            queries: 50,
            corpus: SynthParams::default(),
        }
    }
}

/// Episode recall per query; median per location type and overall.
pub fn recall_experiment<S: ScanScorer>(
    p: &RecallParams,
    scorer: &S,
    scorer_name: &str,
    seed: u64,
) -> Result<ExperimentReport, EvalError> {
    let corpus = synth_world(&p.corpus, seed);
    let queries = pick_queries(corpus.scans.len(), p.queries, seed)?;
    let trials = run_episode_recall(&corpus.scans, &corpus.episodes, &queries, p.k, scorer)?;
    let mut aggregate = serde_json::Map::new();
    let all: Vec<f64> = trials.iter().map(|t| t.recall).collect();
    aggregate.insert("all".into(), json!(median(&all)));
    let mut types: Vec<&str> = trials.iter().map(|t| t.location_type.as_str()).collect();
    types.sort_unstable();
    types.dedup();
    for ty in types {
        let v: Vec<f64> = trials.iter().filter(|t| t.location_type == ty).map(|t| t.recall).collect();
        aggregate.insert(ty.to_string(), json!(median(&v)));
    }
    Ok(ExperimentReport {
        experiment: "recall".into(),
        seed,
        parameters: json!({ "scorer": scorer_name, "params": to_value(p) }),
        aggregation: "median".into(),
        trials: trials.iter().map(to_value).collect(),
        aggregate: Value::Object(aggregate),
        curves: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatesParams {
    pub injections_per_template: usize,
    pub k: usize,
    pub noise: Option<TemplateNoise>,
    pub corpus: SynthParams,
}

impl Default for TemplatesParams {
    fn default() -> Self {
        let d = TemplateRecallParams::default();
        Self {
            injections_per_template: d.injections_per_template,
            k: d.k,
            noise: d.noise,
            corpus: SynthParams::default(),
        }
    }
}

pub fn templates_experiment<S: ScanScorer>(
    p: &TemplatesParams,
    scorer: &S,
    scorer_name: &str,
    seed: u64,
) -> Result<ExperimentReport, EvalError> {
    let corpus = synth_world(&p.corpus, seed);
    let templates = default_templates(&p.corpus.scanner);
    let params = TemplateRecallParams {
        injections_per_template: p.injections_per_template,
        k: p.k,
        noise: p.noise,
        seed,
    };
    let recalls = template_recall(&corpus.scans, &templates, &params, scorer)?;
    let mut aggregate = serde_json::Map::new();
    for r in &recalls {
        aggregate.insert(r.label.clone(), json!(r.recall));
    }
    let all: Vec<f64> = recalls.iter().map(|r| r.recall).collect();
    aggregate.insert("mean".into(), json!(mean(&all)));
    Ok(ExperimentReport {
        experiment: "templates".into(),
        seed,
        parameters: json!({ "scorer": scorer_name, "params": to_value(p) }),
        aggregation: "per-template recall, then mean".into(),
        trials: recalls.iter().map(to_value).collect(),
        aggregate: Value::Object(aggregate),
        curves: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NardParams {
    pub records: usize,
    pub mixture: MixtureParams,
    pub queries: usize,
    pub k: usize,
    pub t: Option<usize>,
    /// Target neighbor count used to pick ε.
    pub degree: usize,
}

impl Default for NardParams {
    fn default() -> Self {
        Self {
            records: 10_000,
            mixture: MixtureParams::default(),
            queries: 100,
            k: 10,
            t: None,
            degree: 12,
        }
    }
}

/// Residual curves of graph-guided evaluation and of a random-order pass
/// on clustered embeddings, scored by distance.
pub fn nard_report(p: &NardParams, seed: u64) -> Result<ExperimentReport, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = Mixture::new(&p.mixture, &mut rng);
    let snapshot = StoreSnapshot::from_vectors((0..p.records).map(|_| mix.sample(&mut rng)));
    let queries: Vec<LatentVector> = (0..p.queries).map(|_| mix.sample(&mut rng)).collect();
    let epsilon = epsilon_for_degree(&snapshot, p.degree, 200, seed);
    let graph = build_graph(&snapshot, epsilon)?;
    let sim = |q: &LatentVector, r: &EmbeddingRecord| distance_similarity(q, &r.vector);
    let cmp = nard_experiment(&snapshot, &graph, &queries, p.k, p.t, &sim, seed)?;
    let ratio = cmp.evaluate.auc / cmp.baseline.auc;
    Ok(ExperimentReport {
        experiment: "nard".into(),
        seed,
        parameters: json!({
            "params": to_value(p),
            "epsilon": epsilon,
            "edges": graph.edge_count(),
            "t": cmp.t,
        }),
        aggregation: "mean curve over queries".into(),
        trials: cmp.trials.iter().map(to_value).collect(),
        aggregate: json!({
            "auc_evaluate": cmp.evaluate.auc,
            "auc_baseline": cmp.baseline.auc,
            "auc_ratio": ratio,
        }),
        curves: Some(cmp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::scorer::RawScanScorer;

    fn small_corpus() -> SynthParams {
        SynthParams {
            episodes: 8,
            scans_per_episode: 10,
            ..SynthParams::default()
        }
    }

    #[test]
    fn reports_are_seed_deterministic() {
        let p = MnssParams {
            levels: 12,
            k: 12,
            queries: 3,
            corpus: small_corpus(),
        };
        let a = mnss_experiment(&p, &RawScanScorer, "raw", 4).unwrap();
        assert_eq!(a, mnss_experiment(&p, &RawScanScorer, "raw", 4).unwrap());
        assert_eq!(a.trials.len(), 3);
        assert_eq!(a.parameters["params"]["levels"], 12);
    }

    #[test]
    fn snms_draws_theta_when_unset() {
        let p = SnmsParams {
            k: 5,
            queries: 2,
            theta: None,
            corpus: small_corpus(),
        };
        let r = snms_experiment(&p, &RawScanScorer, "raw", 1).unwrap();
        let theta = r.parameters["theta"].as_f64().unwrap();
        assert!(theta > 0.0 && theta < FRAC_PI_4);
    }

    #[test]
    fn recall_aggregates_by_median() {
        let p = RecallParams {
            k: 5,
            queries: 10,
            corpus: small_corpus(),
        };
        let r = recall_experiment(&p, &RawScanScorer, "raw", 2).unwrap();
        assert_eq!(r.aggregation, "median");
        assert!(r.aggregate["all"].as_f64().unwrap() <= 1.0);
    }

    #[test]
    fn nard_report_carries_curves() {
        let p = NardParams {
            records: 300,
            queries: 4,
            k: 5,
            ..NardParams::default()
        };
        let r = nard_report(&p, 7).unwrap();
        assert!(r.curves_csv().unwrap().starts_with("strategy,t,fraction,mean,variance\n"));
        assert_eq!(r.trials.len(), 4);
    }

    #[test]
    fn too_many_queries_is_an_error() {
        assert!(pick_queries(3, 4, 0).is_err());
    }
}
