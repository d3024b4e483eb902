//! Polar laser scans and everything that happens to them before embedding.
//!
//! A [`LaserScan`] is a fixed angular lattice (`angle_min + i * angle_increment`)
//! of range readings. Missing returns are stored as [`NO_RETURN`], which is
//! larger than any `range_max`, so "is this a return?" is a single comparison.

mod interchange;
mod raster;
mod transform;

use std::f64::consts::TAU;

pub use interchange::{parse_scan_line, read_scans, scan_to_line, write_scans, ScanRecord};
pub use raster::{rasterize, RasterConfig, ScanBitmap};
pub use transform::{
    add_range_noise, apply_flip, apply_rotation, beams_in_window, combine_scans, inject_template,
    restrict_fov, HALF_FOV_REJECTION_BAND,
};

/// Internal no-return sentinel. Interchange files use `null`.
pub const NO_RETURN: f64 = f64::INFINITY;

/// Angular slack used when deciding lattice membership.
pub(crate) const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("invalid scan: {0}")]
    InvalidScan(String),
    #[error("invalid raster configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid angular window: {0}")]
    InvalidWindow(String),
    #[error("{0}")]
    Domain(String),
    #[error("window covers {fraction:.3} of the field of view, inside the rejected band around one half")]
    NearHalfWindow { fraction: f64 },
    #[error("scans do not share a beam lattice")]
    LatticeMismatch,
    #[error("line {line}: {message}")]
    Interchange { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Metadata carried unchanged through every transform.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ScanMeta {
    pub timestamp_us: u64,
    pub deployment_id: String,
    pub seq: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    ranges: Vec<f64>,
    angle_min: f64,
    angle_increment: f64,
    range_max: f64,
    meta: ScanMeta,
}

impl LaserScan {
    /// Validates and builds a scan. Finite readings above `range_max` are
    /// normalized to [`NO_RETURN`].
    pub fn new(
        ranges: Vec<f64>,
        angle_min: f64,
        angle_increment: f64,
        range_max: f64,
        meta: ScanMeta,
    ) -> Result<Self, ScanError> {
        if ranges.is_empty() {
            return Err(ScanError::InvalidScan("no beams".into()));
        }
        if !angle_min.is_finite() {
            return Err(ScanError::InvalidScan("angle_min is not finite".into()));
        }
        if !(angle_increment.is_finite() && angle_increment > 0.0) {
            return Err(ScanError::InvalidScan(format!(
                "angle_increment must be positive, got {angle_increment}"
            )));
        }
        if !(range_max.is_finite() && range_max > 0.0) {
            return Err(ScanError::InvalidScan(format!(
                "range_max must be positive, got {range_max}"
            )));
        }
        let fov = ranges.len() as f64 * angle_increment;
        if fov > TAU * (1.0 + 1e-9) {
            return Err(ScanError::InvalidScan(format!(
                "field of view {fov} exceeds a full turn"
            )));
        }
        let mut ranges = ranges;
        for (i, r) in ranges.iter_mut().enumerate() {
            if r.is_nan() {
                return Err(ScanError::InvalidScan(format!("beam {i} is NaN")));
            }
            if *r < 0.0 {
                return Err(ScanError::InvalidScan(format!("beam {i} is negative ({r})")));
            }
            if *r > range_max {
                *r = NO_RETURN;
            }
        }
        Ok(Self {
            ranges,
            angle_min,
            angle_increment,
            range_max,
            meta,
        })
    }

    /// Same lattice and metadata, new readings. Callers guarantee validity.
    pub(crate) fn with_ranges(&self, ranges: Vec<f64>) -> Self {
        debug_assert_eq!(ranges.len(), self.ranges.len());
        Self {
            ranges,
            ..self.clone()
        }
    }

    pub(crate) fn from_parts_unchecked(
        ranges: Vec<f64>,
        angle_min: f64,
        angle_increment: f64,
        range_max: f64,
        meta: ScanMeta,
    ) -> Self {
        Self {
            ranges,
            angle_min,
            angle_increment,
            range_max,
            meta,
        }
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn angle_min(&self) -> f64 {
        self.angle_min
    }

    pub fn angle_increment(&self) -> f64 {
        self.angle_increment
    }

    pub fn range_max(&self) -> f64 {
        self.range_max
    }

    pub fn meta(&self) -> &ScanMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: ScanMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Total field of view, `len * angle_increment`.
    pub fn fov(&self) -> f64 {
        self.ranges.len() as f64 * self.angle_increment
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    pub fn is_return(&self, r: f64) -> bool {
        r <= self.range_max
    }

    /// True when the lattice wraps: beam `len` would coincide with beam 0.
    pub fn is_full_circle(&self) -> bool {
        (self.fov() - TAU).abs() < 0.5 * self.angle_increment
    }

    /// The window this scan's beams occupy: `[angle_min, angle_min + fov)`.
    pub fn covering_window(&self) -> AngularWindow {
        AngularWindow {
            start: self.angle_min,
            span: self.fov(),
        }
    }

    /// Whether `other` uses the same angles for the same beam indices.
    pub fn same_lattice(&self, other: &LaserScan) -> bool {
        self.len() == other.len()
            && (self.angle_min - other.angle_min).abs() <= ANGLE_EPS
            && (self.angle_increment - other.angle_increment).abs()
                <= ANGLE_EPS * self.angle_increment.max(1.0)
    }
}

/// A contiguous arc `[start, start + span)` in the scan frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AngularWindow {
    pub start: f64,
    pub span: f64,
}

impl AngularWindow {
    pub fn new(start: f64, span: f64) -> Result<Self, ScanError> {
        let w = Self { start, span };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if !self.start.is_finite() {
            return Err(ScanError::InvalidWindow("start is not finite".into()));
        }
        if !(self.span.is_finite() && self.span > 0.0) {
            return Err(ScanError::InvalidWindow(format!(
                "span must be positive, got {}",
                self.span
            )));
        }
        if self.span > TAU + ANGLE_EPS {
            return Err(ScanError::InvalidWindow(format!(
                "span {} exceeds a full turn",
                self.span
            )));
        }
        Ok(())
    }

    /// Offset of `angle` from the window start folded into `[0, 2π)`.
    pub(crate) fn offset_of(&self, angle: f64) -> f64 {
        let rel = (angle - self.start).rem_euclid(TAU);
        if TAU - rel < ANGLE_EPS {
            0.0
        } else {
            rel
        }
    }

    pub fn contains(&self, angle: f64) -> bool {
        self.offset_of(angle) < self.span - ANGLE_EPS
    }
}

/// A labelled scan fragment used for subset retrieval ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub label: String,
    pub fragment: LaserScan,
}
