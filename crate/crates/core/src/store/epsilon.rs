//! Picks ε from decoder smoothness: the radius around stored vectors within
//! which decoded interpolations change only gradually.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::graph::distance;
use super::{StoreError, StoreSnapshot};
use crate::inference::{Decoder, LatentVector, LATENT_DIM};

/// Anything that maps a latent vector to a flat image.
pub trait LatentDecoder: Sync {
    fn decode_latent(&self, v: &LatentVector) -> Vec<f32>;
}

impl LatentDecoder for Decoder {
    fn decode_latent(&self, v: &LatentVector) -> Vec<f32> {
        self.decode(v).values().to_vec()
    }
}

impl<F> LatentDecoder for F
where
    F: Fn(&LatentVector) -> Vec<f32> + Sync,
{
    fn decode_latent(&self, v: &LatentVector) -> Vec<f32> {
        self(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonParams {
    /// Stored vectors sampled as interpolation origins.
    pub samples: usize,
    /// Random unit directions per origin.
    pub directions: usize,
    /// Decodes along each interpolation segment, endpoints included.
    pub steps: usize,
    /// Largest allowed mean absolute pixel change between consecutive decodes.
    pub tau: f64,
    /// Which percentile of the per-(origin, direction) radii to return.
    pub percentile: f64,
    /// Upper end of the radius search. `None` uses the largest distance
    /// between any two sampled origins.
    pub cap: Option<f64>,
    /// Bisection stops once the bracket is narrower than this fraction of the cap.
    pub relative_tolerance: f64,
    pub seed: u64,
}

impl Default for EpsilonParams {
    fn default() -> Self {
        Self {
            samples: 64,
            directions: 8,
            steps: 10,
            tau: 0.02,
            percentile: 25.0,
            cap: None,
            relative_tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl EpsilonParams {
    fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: &str| Err(StoreError::InvalidParameter(m.into()));
        if self.samples == 0 || self.directions == 0 {
            return bad("samples and directions must be positive");
        }
        if self.steps < 2 {
            return bad("at least two interpolation steps are needed");
        }
        if self.tau.is_nan() || self.tau < 0.0 || !(0.0..=100.0).contains(&self.percentile) {
            return bad("tau must be non-negative and percentile within [0, 100]");
        }
        if !(self.relative_tolerance > 0.0 && self.relative_tolerance < 1.0) {
            return bad("relative tolerance must lie in (0, 1)");
        }
        if let Some(c) = self.cap {
            if !(c > 0.0 && c.is_finite()) {
                return bad("cap must be positive and finite");
            }
        }
        Ok(())
    }
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    let total: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    total / a.len().max(1) as f64
}

fn smooth_at(
    decoder: &dyn LatentDecoder,
    origin: &LatentVector,
    dir: &[f64; LATENT_DIM],
    radius: f64,
    p: &EpsilonParams,
) -> bool {
    let point = |j: usize| -> LatentVector {
        let t = radius * j as f64 / (p.steps - 1) as f64;
        std::array::from_fn(|d| (origin[d] as f64 + t * dir[d]) as f32)
    };
    let mut prev = decoder.decode_latent(&point(0));
    for j in 1..p.steps {
        let next = decoder.decode_latent(&point(j));
        if mean_abs_diff(&prev, &next) > p.tau {
            return false;
        }
        prev = next;
    }
    true
}

/// Largest radius in [0, cap] passing the smoothness test, found by bisection.
fn radius_for(
    decoder: &dyn LatentDecoder,
    origin: &LatentVector,
    dir: &[f64; LATENT_DIM],
    cap: f64,
    p: &EpsilonParams,
) -> f64 {
    if smooth_at(decoder, origin, dir, cap, p) {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    while hi - lo > p.relative_tolerance * cap {
        let mid = 0.5 * (lo + hi);
        if smooth_at(decoder, origin, dir, mid, p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn random_direction(rng: &mut ChaCha8Rng) -> [f64; LATENT_DIM] {
    loop {
        let d: [f64; LATENT_DIM] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return d.map(|x| x / norm);
        }
    }
}

/// Percentile with linear interpolation between closest ranks.
pub(crate) fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Estimates ε. Uses every stored vector when fewer than `samples` exist.
pub fn estimate_epsilon(
    snapshot: &StoreSnapshot,
    decoder: Option<&dyn LatentDecoder>,
    params: &EpsilonParams,
) -> Result<f64, StoreError> {
    let decoder = decoder.ok_or(StoreError::DecoderMissing)?;
    params.validate()?;
    if snapshot.is_empty() {
        return Err(StoreError::InvalidParameter(
            "cannot estimate epsilon over an empty store".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let m = params.samples.min(snapshot.len());
    let mut picked: Vec<usize> = sample(&mut rng, snapshot.len(), m).into_vec();
    picked.sort_unstable();
    let origins: Vec<LatentVector> = picked.iter().map(|&i| snapshot.records()[i].vector).collect();

    let cap = match params.cap {
        Some(c) => c,
        None => {
            let mut widest = 0f64;
            for (i, a) in origins.iter().enumerate() {
                for b in &origins[i + 1..] {
                    widest = widest.max(distance(a, b));
                }
            }
            if widest > 0.0 {
                widest
            } else {
                1.0
            }
        }
    };

    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..params.directions).map(move |d| (i, d)))
        .collect();
    let radius = |&(i, d): &(usize, usize)| -> f64 {
        // each pair draws from its own stream so results do not depend on scheduling
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream((i * params.directions + d) as u64 + 1);
        let dir = random_direction(&mut rng);
        radius_for(decoder, &origins[i], &dir, cap, params)
    };
    #[cfg(feature = "parallel")]
    let mut radii: Vec<f64> = pairs.par_iter().map(radius).collect();
    #[cfg(not(feature = "parallel"))]
    let mut radii: Vec<f64> = pairs.iter().map(radius).collect();
    radii.sort_by(f64::total_cmp);
    Ok(percentile(&radii, params.percentile))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(n: usize) -> StoreSnapshot {
        StoreSnapshot::from_vectors((0..n).map(|i| {
            let mut v = [0f32; 32];
            v[i % 32] = 1.0 + i as f32;
            v
        }))
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 25.0), 2.0);
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 100.0), 5.0);
        assert_eq!(percentile(&[0.0, 1.0], 25.0), 0.25);
    }

    #[test]
    fn constant_decoder_hits_cap() {
        let dec = |_: &LatentVector| vec![0.5f32; 16];
        let p = EpsilonParams {
            cap: Some(3.5),
            ..Default::default()
        };
        assert_eq!(estimate_epsilon(&snapshot(10), Some(&dec), &p).unwrap(), 3.5);
    }

    #[test]
    fn missing_decoder_is_an_error() {
        assert!(matches!(
            estimate_epsilon(&snapshot(3), None, &EpsilonParams::default()),
            Err(StoreError::DecoderMissing)
        ));
    }

    #[test]
    fn step_decoder_bounds_the_radius() {
        let c = 0.75;
        let dec = move |v: &LatentVector| {
            let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            vec![if norm < c { 0.0f32 } else { 1.0 }; 8]
        };
        let origin = StoreSnapshot::from_vectors([[0.0; 32]]);
        let p = EpsilonParams {
            cap: Some(4.0),
            directions: 16,
            seed: 9,
            ..Default::default()
        };
        let eps = estimate_epsilon(&origin, Some(&dec), &p).unwrap();
        assert!(eps <= c + 4.0 * p.relative_tolerance, "{eps}");
        assert!(eps > c - 4.0 * p.relative_tolerance - 1e-6, "{eps}");
        assert_eq!(eps, estimate_epsilon(&origin, Some(&dec), &p).unwrap());
    }
}
