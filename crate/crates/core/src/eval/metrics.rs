use super::synth::EpisodeLabel;
use super::EvalError;
use crate::query::TopKResult;

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: the Pearson correlation of the two rank
/// vectors, ties averaged.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::Degenerate("need at least two observations".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(EvalError::Degenerate("a ranking is constant".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Fraction of episodes with at least one member in `result`.
pub fn episode_recall(result: &TopKResult, episodes: &[EpisodeLabel]) -> Result<f64, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::Degenerate("no episodes given".into()));
    }
    let hit = episodes
        .iter()
        .filter(|e| result.items.iter().any(|s| e.contains(s.id)))
        .count();
    Ok(hit as f64 / episodes.len() as f64)
}

/// Hinge on the score gap: zero once the preferred score leads by `margin`.
pub fn margin_rank_loss(s_hi: f64, s_lo: f64, margin: f64) -> f64 {
    (margin - (s_hi - s_lo)).max(0.0)
}
