//! Scan-level scoring used by the experiment protocols: the raw range
//! comparison baseline and the learned embedding pipeline.

use super::EvalError;
use crate::inference::{Encoder, LatentVector, SimilarityNet};
use crate::query::{BestK, ScoredId, TopKResult};
use crate::scan::{beams_in_window, rasterize, AngularWindow, LaserScan, ScanError};
use crate::util::par_map;

const SQUARE_SCALE: f64 = (1u64 << 40) as f64;

fn reading(scan: &LaserScan, r: f64) -> f64 {
    if scan.is_return(r) {
        r
    } else {
        scan.range_max()
    }
}

/// Squared differences are rounded to fixed point before summing, so the
/// distance does not depend on beam order: circularly shifting both scans
/// gives a bit-identical score.
fn score_from_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let total: u128 = pairs
        .map(|(x, y)| {
            let d = x - y;
            (d * d * SQUARE_SCALE).round() as u128
        })
        .sum();
    1.0 / (1.0 + (total as f64 / SQUARE_SCALE).sqrt())
}

/// `1 / (1 + ‖a − b‖₂)` over the range vectors, missing returns read as
/// `range_max`. With a window only the beams inside it are compared.
pub fn raw_scan_similarity(
    a: &LaserScan,
    b: &LaserScan,
    window: Option<&AngularWindow>,
) -> Result<f64, EvalError> {
    if !a.same_lattice(b) {
        return Err(ScanError::LatticeMismatch.into());
    }
    let (ra, rb) = (a.ranges(), b.ranges());
    Ok(match window {
        None => score_from_pairs(ra.iter().zip(rb).map(|(&x, &y)| (reading(a, x), reading(b, y)))),
        Some(w) => {
            let idx = beams_in_window(a, w)?;
            score_from_pairs(idx.into_iter().map(|i| (reading(a, ra[i]), reading(b, rb[i]))))
        }
    })
}

/// Compares a fragment with the host beams it lands on. The fragment must
/// share the host's angular increment.
pub fn fragment_similarity(fragment: &LaserScan, host: &LaserScan) -> Result<f64, EvalError> {
    let inc = host.angle_increment();
    if (fragment.angle_increment() - inc).abs() > 1e-9 * inc.max(1.0) {
        return Err(ScanError::LatticeMismatch.into());
    }
    let n = host.len() as i64;
    let offset = ((fragment.angle_min() - host.angle_min()) / inc).round() as i64;
    let wrap = host.is_full_circle();
    let mut pairs = Vec::with_capacity(fragment.len());
    for (j, &r) in fragment.ranges().iter().enumerate() {
        let bin = offset + j as i64;
        let bin = if wrap {
            bin.rem_euclid(n)
        } else if (0..n).contains(&bin) {
            bin
        } else {
            return Err(ScanError::Domain("fragment extends past the host field of view".into()).into());
        };
        let h = host.ranges()[bin as usize];
        pairs.push((reading(fragment, r), reading(host, h)));
    }
    Ok(score_from_pairs(pairs.into_iter()))
}

/// What a protocol asks for: a whole scan, or a fragment covering part of
/// the field of view.
#[derive(Debug, Clone, Copy)]
pub enum ScanQuery<'a> {
    Whole(&'a LaserScan),
    Fragment(&'a LaserScan),
}

/// Scores stored scans against a query. `Prepared` caches per-scan work
/// such as embeddings.
pub trait ScanScorer: Sync {
    type Prepared: Send + Sync;
    type Query: Send + Sync;

    fn prepare(&self, scan: &LaserScan) -> Result<Self::Prepared, EvalError>;
    fn prepare_query(&self, query: ScanQuery<'_>) -> Result<Self::Query, EvalError>;
    fn score(&self, query: &Self::Query, candidate: &Self::Prepared) -> Result<f64, EvalError>;
}

/// Prepares every scan, in parallel when enabled.
pub fn prepare_all<S: ScanScorer>(scorer: &S, scans: &[LaserScan]) -> Result<Vec<S::Prepared>, EvalError> {
    par_map(scans, |s| scorer.prepare(s)).into_iter().collect()
}

/// Exact top-k over prepared candidates; ids are positions.
pub fn top_k<S: ScanScorer>(
    scorer: &S,
    query: &S::Query,
    candidates: &[S::Prepared],
    k: usize,
) -> Result<TopKResult, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidParameter("k must be at least 1".into()));
    }
    let mut best = BestK::new(k);
    for (i, c) in candidates.iter().enumerate() {
        let score = scorer.score(query, c)?;
        best.offer(ScoredId { id: i as u64, score });
    }
    Ok(best.into_result())
}

/// The raw range baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawScanScorer;

pub enum RawQuery {
    Whole(LaserScan),
    Fragment(LaserScan),
}

impl ScanScorer for RawScanScorer {
    type Prepared = LaserScan;
    type Query = RawQuery;

    fn prepare(&self, scan: &LaserScan) -> Result<LaserScan, EvalError> {
        Ok(scan.clone())
    }

    fn prepare_query(&self, query: ScanQuery<'_>) -> Result<RawQuery, EvalError> {
        Ok(match query {
            ScanQuery::Whole(s) => RawQuery::Whole(s.clone()),
            ScanQuery::Fragment(s) => RawQuery::Fragment(s.clone()),
        })
    }

    fn score(&self, query: &RawQuery, candidate: &LaserScan) -> Result<f64, EvalError> {
        match query {
            RawQuery::Whole(q) => raw_scan_similarity(q, candidate, None),
            RawQuery::Fragment(f) => fragment_similarity(f, candidate),
        }
    }
}

/// Rasterize, encode, then score embeddings with the similarity network.
#[derive(Debug, Clone)]
pub struct LearnedScorer {
    pub encoder: Encoder,
    pub similarity: SimilarityNet,
}

impl LearnedScorer {
    pub fn embed(&self, scan: &LaserScan) -> Result<LatentVector, EvalError> {
        let bitmap = rasterize(scan, &self.encoder.raster_config())?;
        Ok(self.encoder.encode(&bitmap)?.mu)
    }
}

impl ScanScorer for LearnedScorer {
    type Prepared = LatentVector;
    type Query = LatentVector;

    fn prepare(&self, scan: &LaserScan) -> Result<LatentVector, EvalError> {
        self.embed(scan)
    }

    fn prepare_query(&self, query: ScanQuery<'_>) -> Result<LatentVector, EvalError> {
        match query {
            ScanQuery::Whole(s) | ScanQuery::Fragment(s) => self.embed(s),
        }
    }

    fn score(&self, query: &LatentVector, candidate: &LatentVector) -> Result<f64, EvalError> {
        Ok(self.similarity.score(query, candidate) as f64)
    }
}
