//! Normalized residual curves.
//!
//! For the best k among the first t evaluations, `d_t = Σ (1 − score)`. The
//! curve reports `(d_t − d_T) / (d_k − d_T)`, which falls from 1 at `t = k`
//! to 0 once everything has been evaluated. Residuals are summed as exact
//! fixed-point integers so the curve is monotone and both endpoints are exact.

use serde::{Deserialize, Serialize};

use super::{BestK, QueryError, QueryTrace, ScoredId, TopKResult};

const SCALE: f64 = (1u64 << 52) as f64;

/// `1 − score` in units of 2^-52. Monotone non-increasing in `score`.
pub fn residual_units(score: f64) -> i128 {
    ((1.0 - score) * SCALE).round() as i128
}

pub fn units_to_residual(units: i128) -> f64 {
    units as f64 / SCALE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NardPoint {
    pub t: usize,
    pub value: f64,
}

/// One point per `t` in `k..=T`. When `d_k = d_T` the curve is all zeros.
pub fn nard_curve(trace: &QueryTrace, k: usize, final_result: &TopKResult) -> Result<Vec<NardPoint>, QueryError> {
    if k == 0 {
        return Err(QueryError::ZeroK);
    }
    if trace.len() < k {
        return Err(QueryError::TraceTooShort { len: trace.len(), k });
    }
    let mut best = BestK::new(k);
    let mut d = Vec::with_capacity(trace.len() - k + 1);
    for (i, s) in trace.steps.iter().enumerate() {
        best.offer(ScoredId { id: s.id, score: s.score });
        if i + 1 >= k {
            d.push(best.residual_units());
        }
    }
    let d_final: i128 = final_result.items.iter().map(|s| residual_units(s.score)).sum();
    let d_last = *d.last().expect("at least one point");
    if d_final != d_last {
        return Err(QueryError::TraceMismatch);
    }
    let span = d[0] - d_last;
    Ok(d.iter()
        .enumerate()
        .map(|(i, &dt)| NardPoint {
            t: k + i,
            value: if span == 0 {
                0.0
            } else {
                (dt - d_last) as f64 / span as f64
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::{Phase, TraceStep};
    use super::*;

    fn trace(scores: &[f64]) -> QueryTrace {
        QueryTrace {
            k: 2,
            steps: scores
                .iter()
                .enumerate()
                .map(|(i, &score)| TraceStep {
                    step: i + 1,
                    id: i as u64,
                    score,
                    d_t: 0.0,
                    phase: Phase::Random,
                })
                .collect(),
        }
    }

    fn final_of(scores: &[f64], k: usize) -> TopKResult {
        let mut b = BestK::new(k);
        for (i, &score) in scores.iter().enumerate() {
            b.offer(ScoredId { id: i as u64, score });
        }
        b.into_result()
    }

    #[test]
    fn hand_summed_five_item_trace() {
        let s = [0.5, 0.25, 0.75, 0.125, 1.0];
        // best-2 residuals: t=2 {0.5, 0.25} -> 1.25; t=3 {0.75, 0.5} -> 0.75;
        // t=4 unchanged 0.75; t=5 {1.0, 0.75} -> 0.25
        let curve = nard_curve(&trace(&s), 2, &final_of(&s, 2)).unwrap();
        let values: Vec<f64> = curve.iter().map(|p| p.value).collect();
        assert_eq!(values, [1.0, 0.5, 0.5, 0.0]);
        assert_eq!(curve[0].t, 2);
        assert_eq!(curve[3].t, 5);
    }

    #[test]
    fn degenerate_curve_is_zero() {
        let s = [0.9, 0.9, 0.1, 0.2];
        let curve = nard_curve(&trace(&s), 2, &final_of(&s, 2)).unwrap();
        assert!(curve.iter().all(|p| p.value == 0.0));
    }

    #[test]
    fn too_short_trace_is_an_error() {
        let s = [0.3];
        assert!(matches!(
            nard_curve(&trace(&s), 2, &final_of(&s, 2)),
            Err(QueryError::TraceTooShort { len: 1, k: 2 })
        ));
    }
}
