//! Evaluation protocols, metrics and the synthetic data they run on.

mod experiments;
mod metrics;
mod nard_exp;
mod protocols;
mod report;
mod scorer;
pub mod synth;

pub use experiments::{
    mnss_experiment, nard_report, recall_experiment, snms_experiment, templates_experiment, MnssParams,
    NardParams, RecallParams, SnmsParams, TemplatesParams,
};
pub use metrics::{average_ranks, episode_recall, margin_rank_loss, spearman_rho};
pub use nard_exp::{
    area, curve_stats, distance_similarity, epsilon_for_degree, nard_experiment, CurveStats,
    Mixture, MixtureParams, NardComparison, NardTrial,
};
pub use protocols::{
    build_template_store, mnss_levels, run_episode_recall, run_mnss, run_snms, template_recall,
    union_rank_correlation, EpisodeRecallTrial, InjectedStore, MnssOutcome, SnmsOutcome,
    TemplateNoise, TemplateRecall, TemplateRecallParams,
};
pub use report::{mean, median, ExperimentReport};
pub use scorer::{
    fragment_similarity, prepare_all, raw_scan_similarity, top_k, LearnedScorer, RawQuery,
    RawScanScorer, ScanQuery, ScanScorer,
};
pub use synth::{synth_world, EpisodeLabel, ScannerModel, SynthCorpus, SynthParams};

use crate::inference::InferenceError;
use crate::query::QueryError;
use crate::scan::ScanError;
use crate::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
