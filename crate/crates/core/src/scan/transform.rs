//! Pure scan-space transforms used for augmentation, pair synthesis and
//! experiments. All of them keep the input's metadata.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AngularWindow, LaserScan, ScanError, Template, ANGLE_EPS, NO_RETURN};

/// Subset selections whose span falls in this fraction-of-FOV band are
/// rejected by [`combine_scans`]: they would be equal parts of both inputs.
pub const HALF_FOV_REJECTION_BAND: (f64, f64) = (0.4, 0.6);

/// Rotates the scene by `theta` about the sensor. Each beam moves to the
/// nearest bin of the original lattice; collisions keep the shorter range
/// and beams leaving a partial field of view are dropped.
pub fn apply_rotation(scan: &LaserScan, theta: f64) -> LaserScan {
    let n = scan.len();
    let shift = theta / scan.angle_increment();
    let wrap = scan.is_full_circle();
    let mut out = vec![NO_RETURN; n];
    for (i, &r) in scan.ranges().iter().enumerate() {
        if !scan.is_return(r) {
            continue;
        }
        let target = (i as f64 + shift).round();
        let j = if wrap {
            (target as i64).rem_euclid(n as i64) as usize
        } else if target >= 0.0 && target < n as f64 {
            target as usize
        } else {
            continue;
        };
        if r < out[j] {
            out[j] = r;
        }
    }
    scan.with_ranges(out)
}

/// Mirrors the scan about the sensor's forward axis.
pub fn apply_flip(scan: &LaserScan) -> LaserScan {
    let n = scan.len();
    let mut ranges = scan.ranges().to_vec();
    ranges.reverse();
    let angle_min = -(scan.angle_min() + (n - 1) as f64 * scan.angle_increment());
    LaserScan::from_parts_unchecked(
        ranges,
        angle_min,
        scan.angle_increment(),
        scan.range_max(),
        scan.meta().clone(),
    )
}

/// Indices of the beams inside `window`, in angular order from the window
/// start. Errors when no beam is covered or the covered beams are not
/// contiguous on the lattice.
pub fn beams_in_window(scan: &LaserScan, window: &AngularWindow) -> Result<Vec<usize>, ScanError> {
    window.validate()?;
    let mut hits: Vec<(f64, usize)> = (0..scan.len())
        .filter_map(|i| {
            let rel = window.offset_of(scan.beam_angle(i));
            (rel < window.span - ANGLE_EPS).then_some((rel, i))
        })
        .collect();
    if hits.is_empty() {
        return Err(ScanError::Domain(format!(
            "window [{:.4}, +{:.4}) covers no beam of the scan",
            window.start, window.span
        )));
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = scan.len();
    let wrap = scan.is_full_circle();
    for pair in hits.windows(2) {
        let next = if wrap { (pair[0].1 + 1) % n } else { pair[0].1 + 1 };
        if pair[1].1 != next {
            return Err(ScanError::Domain(
                "window covers a gap in the scan's field of view".into(),
            ));
        }
    }
    Ok(hits.into_iter().map(|(_, i)| i).collect())
}

/// Keeps only the beams inside `window`.
pub fn restrict_fov(scan: &LaserScan, window: &AngularWindow) -> Result<LaserScan, ScanError> {
    let idx = beams_in_window(scan, window)?;
    let ranges = idx.iter().map(|&i| scan.ranges()[i]).collect();
    let angle_min = scan.beam_angle(idx[0]);
    Ok(LaserScan::from_parts_unchecked(
        ranges,
        angle_min,
        scan.angle_increment(),
        scan.range_max(),
        scan.meta().clone(),
    ))
}

/// Adds i.i.d. zero-mean Gaussian noise to every return, clamped to
/// `[0, range_max]`. The noise stream is a function of `seed` only.
pub fn add_range_noise(scan: &LaserScan, sigma: f64, seed: u64) -> Result<LaserScan, ScanError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(ScanError::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(scan.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| ScanError::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = scan.range_max();
    let ranges = scan
        .ranges()
        .iter()
        .map(|&r| {
            let dr: f64 = normal.sample(&mut rng);
            if scan.is_return(r) {
                (r + dr).clamp(0.0, max)
            } else {
                r
            }
        })
        .collect();
    Ok(scan.with_ranges(ranges))
}

/// Overwrites the beams of `scan` covered by the template, rotated by
/// `rotation`, with the template's readings.
pub fn inject_template(
    scan: &LaserScan,
    template: &Template,
    rotation: f64,
) -> Result<LaserScan, ScanError> {
    let frag = &template.fragment;
    let inc = scan.angle_increment();
    if (frag.angle_increment() - inc).abs() > ANGLE_EPS * inc.max(1.0) {
        return Err(ScanError::LatticeMismatch);
    }
    if frag.fov() > scan.fov() + ANGLE_EPS {
        return Err(ScanError::Domain(format!(
            "template '{}' spans {:.4} rad, wider than the scan's {:.4}",
            template.label,
            frag.fov(),
            scan.fov()
        )));
    }
    let n = scan.len() as i64;
    let wrap = scan.is_full_circle();
    let offset = (frag.angle_min() + rotation - scan.angle_min()) / inc;
    let mut ranges = scan.ranges().to_vec();
    for (j, &r) in frag.ranges().iter().enumerate() {
        let bin = (offset + j as f64).round() as i64;
        let bin = if wrap {
            bin.rem_euclid(n)
        } else if (0..n).contains(&bin) {
            bin
        } else {
            return Err(ScanError::Domain(format!(
                "template '{}' does not fit inside the scan's field of view",
                template.label
            )));
        };
        ranges[bin as usize] = if r <= scan.range_max() { r } else { NO_RETURN };
    }
    Ok(scan.with_ranges(ranges))
}

/// Beams of `b` inside `window`, beams of `a` elsewhere. Windows covering
/// 40-60% of the field of view are rejected so callers resample.
pub fn combine_scans(
    a: &LaserScan,
    b: &LaserScan,
    window: &AngularWindow,
) -> Result<LaserScan, ScanError> {
    if !a.same_lattice(b) {
        return Err(ScanError::LatticeMismatch);
    }
    let fraction = window.span / a.fov();
    let (lo, hi) = HALF_FOV_REJECTION_BAND;
    if (lo..=hi).contains(&fraction) {
        return Err(ScanError::NearHalfWindow { fraction });
    }
    let idx = beams_in_window(a, window)?;
    let mut ranges = a.ranges().to_vec();
    for i in idx {
        ranges[i] = b.ranges()[i];
    }
    Ok(a.with_ranges(ranges))
}
