//! Synthetic indoor worlds and ray-cast scans, standing in for real
//! deployment logs. Every output is a pure function of the parameters and seed.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scan::{add_range_noise, LaserScan, ScanMeta, Template, NO_RETURN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Self {
        Self { a, b }
    }
}

fn cross(u: (f64, f64), v: (f64, f64)) -> f64 {
    u.0 * v.1 - u.1 * v.0
}

/// Distance along the ray from `origin` at `angle` to the first segment hit.
pub fn ray_hit(segments: &[Segment], origin: (f64, f64), angle: f64) -> Option<f64> {
    let d = (angle.cos(), angle.sin());
    let mut best: Option<f64> = None;
    for s in segments {
        let e = (s.b.0 - s.a.0, s.b.1 - s.a.1);
        let denom = cross(d, e);
        if denom.abs() < 1e-15 {
            continue;
        }
        let ap = (s.a.0 - origin.0, s.a.1 - origin.1);
        let t = cross(ap, e) / denom;
        let u = cross(ap, d) / denom;
        if t >= 0.0 && (0.0..=1.0).contains(&u) && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScannerModel {
    pub beams: usize,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
}

impl ScannerModel {
    /// 1081 beams at 0.25°, centered on the heading.
    pub fn fov_270() -> Self {
        let inc = 0.25_f64.to_radians();
        Self {
            beams: 1081,
            angle_min: -540.0 * inc,
            angle_increment: inc,
            range_max: 30.0,
        }
    }

    /// 1440 beams at 0.25° covering the full circle.
    pub fn fov_360() -> Self {
        Self {
            beams: 1440,
            angle_min: -PI,
            angle_increment: TAU / 1440.0,
            range_max: 30.0,
        }
    }

    pub fn with_beams(self, beams: usize) -> Self {
        let fov = self.beams as f64 * self.angle_increment;
        Self {
            beams,
            angle_increment: fov / beams as f64,
            ..self
        }
    }

    pub fn fov(&self) -> f64 {
        self.beams as f64 * self.angle_increment
    }
}

/// Ray-casts one scan at `pose` = (x, y, heading).
pub fn cast_scan(world: &[Segment], pose: (f64, f64, f64), model: &ScannerModel, meta: ScanMeta) -> LaserScan {
    let ranges = (0..model.beams)
        .map(|i| {
            let angle = pose.2 + model.angle_min + i as f64 * model.angle_increment;
            match ray_hit(world, (pose.0, pose.1), angle) {
                Some(r) if r <= model.range_max => r,
                _ => NO_RETURN,
            }
        })
        .collect();
    LaserScan::new(ranges, model.angle_min, model.angle_increment, model.range_max, meta)
        .expect("ray-cast ranges are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocationType {
    Corridor,
    TJunction,
    Lobby,
    Room,
}

impl LocationType {
    pub const ALL: [LocationType; 4] = [
        LocationType::Corridor,
        LocationType::TJunction,
        LocationType::Lobby,
        LocationType::Room,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LocationType::Corridor => "corridor",
            LocationType::TJunction => "t-junction",
            LocationType::Lobby => "lobby",
            LocationType::Room => "room",
        }
    }
}

/// A run of consecutive scan ids recorded at one location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLabel {
    pub location_type: String,
    pub lo: u64,
    pub hi: u64,
}

impl EpisodeLabel {
    pub fn contains(&self, id: u64) -> bool {
        (self.lo..=self.hi).contains(&id)
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> [Segment; 4] {
    [
        Segment::new((x0, y0), (x1, y0)),
        Segment::new((x1, y0), (x1, y1)),
        Segment::new((x1, y1), (x0, y1)),
        Segment::new((x0, y1), (x0, y0)),
    ]
}

/// Horizontal wall from x0 to x1 at height y, with door-sized gaps.
fn wall_with_gaps(x0: f64, x1: f64, y: f64, gaps: &[(f64, f64)]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut x = x0;
    for &(g0, g1) in gaps {
        if g0 > x {
            out.push(Segment::new((x, y), (g0, y)));
        }
        x = x.max(g1);
    }
    if x < x1 {
        out.push(Segment::new((x, y), (x1, y)));
    }
    out
}

/// Builds a place and a start pose plus per-step motion.
fn build_place(kind: LocationType, rng: &mut ChaCha8Rng) -> (Vec<Segment>, (f64, f64, f64), (f64, f64)) {
    match kind {
        LocationType::Corridor => {
            let w = rng.random_range(1.6..3.0);
            let mut gaps = Vec::new();
            let mut x = -18.0;
            while x < 16.0 {
                x += rng.random_range(3.0..8.0);
                gaps.push((x, x + 0.9));
            }
            let mut segs = wall_with_gaps(-20.0, 20.0, w / 2.0, &gaps);
            segs.extend(wall_with_gaps(-20.0, 20.0, -w / 2.0, &gaps[gaps.len() / 2..]));
            for &(g0, g1) in &gaps {
                // shallow door recesses
                segs.push(Segment::new((g0, w / 2.0 + 0.3), (g1, w / 2.0 + 0.3)));
            }
            let y = rng.random_range(-w / 6.0..w / 6.0);
            (segs, (-6.0, y, 0.0), (0.25, 0.01))
        }
        LocationType::TJunction => {
            let w = rng.random_range(1.8..3.0);
            let b = rng.random_range(1.6..2.8);
            let mut segs = vec![Segment::new((-20.0, -w / 2.0), (20.0, -w / 2.0))];
            segs.push(Segment::new((-20.0, w / 2.0), (-b / 2.0, w / 2.0)));
            segs.push(Segment::new((b / 2.0, w / 2.0), (20.0, w / 2.0)));
            segs.push(Segment::new((-b / 2.0, w / 2.0), (-b / 2.0, 20.0)));
            segs.push(Segment::new((b / 2.0, w / 2.0), (b / 2.0, 20.0)));
            (segs, (-4.0, 0.0, 0.0), (0.2, 0.02))
        }
        LocationType::Lobby => {
            let (hx, hy) = (rng.random_range(6.0..9.0), rng.random_range(5.0..7.5));
            let mut segs = rect(-hx, -hy, hx, hy).to_vec();
            for _ in 0..rng.random_range(2..6) {
                let (px, py) = (rng.random_range(-hx + 1.5..hx - 1.5), rng.random_range(-hy + 1.5..hy - 1.5));
                if px.abs() < 1.2 && py.abs() < 1.2 {
                    continue;
                }
                segs.extend(rect(px - 0.3, py - 0.3, px + 0.3, py + 0.3));
            }
            (segs, (-hx / 2.0, 0.0, rng.random_range(-0.3..0.3)), (0.15, 0.03))
        }
        LocationType::Room => {
            let (hx, hy) = (rng.random_range(2.2..3.5), rng.random_range(2.0..3.2));
            let door = rng.random_range(-hx + 0.6..hx - 1.5);
            let mut segs = wall_with_gaps(-hx, hx, hy, &[(door, door + 0.9)]);
            segs.push(Segment::new((hx, hy), (hx, -hy)));
            segs.push(Segment::new((hx, -hy), (-hx, -hy)));
            segs.push(Segment::new((-hx, -hy), (-hx, hy)));
            // couch against the back wall and a table
            let cw = rng.random_range(1.4..2.0);
            segs.extend(rect(-cw / 2.0, -hy + 0.1, cw / 2.0, -hy + 0.9));
            let (tx, ty) = (rng.random_range(0.5..hx - 0.5), rng.random_range(0.3..hy - 0.6));
            segs.extend(rect(tx - 0.4, ty - 0.3, tx + 0.4, ty + 0.3));
            (segs, (-hx / 2.0, 0.0, 0.0), (0.06, 0.05))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub episodes: usize,
    pub scans_per_episode: usize,
    pub scanner: ScannerModel,
    /// Standard deviation of per-beam range noise, meters.
    pub range_noise: f64,
    pub deployment_id: String,
    /// Scan rate used for timestamps.
    pub rate_hz: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            episodes: 20,
            scans_per_episode: 25,
            scanner: ScannerModel::fov_270(),
            range_noise: 0.01,
            deployment_id: "synthetic".into(),
            rate_hz: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub scans: Vec<LaserScan>,
    pub episodes: Vec<EpisodeLabel>,
}

/// Generates `episodes` drives, cycling through location types. Scan `i`
/// has `seq = i`, so ids assigned by a fresh store line up with episode ranges.
pub fn synth_world(params: &SynthParams, seed: u64) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scans = Vec::with_capacity(params.episodes * params.scans_per_episode);
    let mut episodes = Vec::with_capacity(params.episodes);
    let dt_us = (1e6 / params.rate_hz).round() as u64;
    for e in 0..params.episodes {
        let kind = LocationType::ALL[e % LocationType::ALL.len()];
        let (world, mut pose, (step, turn)) = build_place(kind, &mut rng);
        let lo = scans.len() as u64;
        for _ in 0..params.scans_per_episode {
            let i = scans.len();
            let meta = ScanMeta {
                timestamp_us: 1_600_000_000_000_000 + i as u64 * dt_us,
                deployment_id: params.deployment_id.clone(),
                seq: i as u32,
            };
            let clean = cast_scan(&world, pose, &params.scanner, meta);
            let scan = add_range_noise(&clean, params.range_noise, rng.random())
                .expect("noise level validated by caller");
            scans.push(scan);
            pose.2 += rng.random_range(-turn..=turn);
            pose.0 += step * pose.2.cos();
            pose.1 += step * pose.2.sin();
        }
        episodes.push(EpisodeLabel {
            location_type: kind.name().into(),
            lo,
            hi: scans.len() as u64 - 1,
        });
    }
    SynthCorpus { scans, episodes }
}

/// The ten template labels used for subset-retrieval experiments.
pub const TEMPLATE_LABELS: [&str; 10] = [
    "left-turn",
    "right-turn",
    "couch",
    "human",
    "elevator",
    "hall",
    "door-open",
    "door-closed",
    "corner-inner",
    "corner-outer",
];

fn template_scene(label: &str) -> Vec<Segment> {
    match label {
        // the fragment looks along +x from the sensor
        "left-turn" => vec![
            Segment::new((0.0, -1.0), (3.0, -1.0)),
            Segment::new((3.0, -1.0), (3.0, 3.0)),
            Segment::new((0.0, 1.0), (1.2, 1.0)),
            Segment::new((1.2, 1.0), (1.2, 3.0)),
        ],
        "right-turn" => vec![
            Segment::new((0.0, 1.0), (3.0, 1.0)),
            Segment::new((3.0, 1.0), (3.0, -3.0)),
            Segment::new((0.0, -1.0), (1.2, -1.0)),
            Segment::new((1.2, -1.0), (1.2, -3.0)),
        ],
        "couch" => {
            let mut s = rect(1.2, -0.9, 2.0, 0.9).to_vec();
            s.push(Segment::new((1.0, -0.9), (1.2, -0.9)));
            s.push(Segment::new((1.0, 0.9), (1.2, 0.9)));
            s
        }
        "human" => {
            // two legs
            let mut s = rect(1.0, -0.25, 1.15, -0.1).to_vec();
            s.extend(rect(1.0, 0.1, 1.15, 0.25));
            s
        }
        "elevator" => vec![
            Segment::new((2.0, -1.5), (2.0, -0.6)),
            Segment::new((2.0, -0.6), (2.6, -0.6)),
            Segment::new((2.6, -0.6), (2.6, 0.6)),
            Segment::new((2.6, 0.6), (2.0, 0.6)),
            Segment::new((2.0, 0.6), (2.0, 1.5)),
        ],
        "hall" => vec![
            Segment::new((8.0, -6.0), (8.0, 6.0)),
            Segment::new((0.0, 6.0), (8.0, 6.0)),
        ],
        "door-open" => vec![
            Segment::new((1.5, -2.0), (1.5, -0.45)),
            Segment::new((1.5, 0.45), (1.5, 2.0)),
            Segment::new((1.5, 0.45), (2.3, 0.9)),
        ],
        "door-closed" => vec![
            Segment::new((1.5, -2.0), (1.5, -0.45)),
            Segment::new((1.5, 0.45), (1.5, 2.0)),
            Segment::new((1.6, -0.45), (1.6, 0.45)),
        ],
        "corner-inner" => vec![
            Segment::new((2.0, -2.0), (2.0, 2.0)),
            Segment::new((2.0, 2.0), (-1.0, 2.0)),
        ],
        "corner-outer" => vec![
            Segment::new((1.0, 0.0), (1.0, -3.0)),
            Segment::new((1.0, 0.0), (4.0, 0.0)),
        ],
        other => panic!("unknown template label {other}"),
    }
}

/// Builds a template fragment on the lattice of `host`: `beams` beams
/// centered on the host bin closest to angle 0.
pub fn make_template(label: &str, host: &ScannerModel, beams: usize) -> Template {
    let scene = template_scene(label);
    let center = ((0.0 - host.angle_min) / host.angle_increment).round() as i64;
    let first = (center - beams as i64 / 2).clamp(0, host.beams as i64 - beams as i64) as usize;
    let angle_min = host.angle_min + first as f64 * host.angle_increment;
    let model = ScannerModel {
        beams,
        angle_min,
        angle_increment: host.angle_increment,
        range_max: host.range_max,
    };
    let fragment = cast_scan(&scene, (0.0, 0.0, 0.0), &model, ScanMeta::default());
    Template {
        label: label.into(),
        fragment,
    }
}

/// All ten templates, each spanning roughly 80° of the host lattice.
pub fn default_templates(host: &ScannerModel) -> Vec<Template> {
    let beams = ((80f64.to_radians() / host.angle_increment).round() as usize).min(host.beams);
    TEMPLATE_LABELS
        .iter()
        .map(|l| make_template(l, host, beams))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_room_is_four_fold_symmetric() {
        let world = rect(-2.0, -2.0, 2.0, 2.0);
        let model = ScannerModel::fov_360().with_beams(360);
        let s = cast_scan(&world, (0.0, 0.0, 0.0), &model, ScanMeta::default());
        let r = s.ranges();
        for i in 0..90 {
            for q in 1..4 {
                assert!((r[i] - r[i + 90 * q]).abs() < 1e-9, "beam {i}");
            }
        }
        assert!((r[180] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let p = SynthParams {
            episodes: 4,
            scans_per_episode: 3,
            scanner: ScannerModel::fov_270().with_beams(271),
            ..Default::default()
        };
        let a = synth_world(&p, 5);
        let b = synth_world(&p, 5);
        assert_eq!(a.scans, b.scans);
        assert_eq!(a.scans.len(), 12);
        assert_eq!(a.episodes[1], EpisodeLabel { location_type: "t-junction".into(), lo: 3, hi: 5 });
        for s in &a.scans {
            assert!(s.ranges().iter().all(|&r| r == NO_RETURN || (0.0..=s.range_max()).contains(&r)));
            assert!(s.ranges().iter().any(|&r| r != NO_RETURN));
        }
        assert_eq!(a.scans[7].meta().seq, 7);
    }

    #[test]
    fn templates_sit_on_the_host_lattice() {
        let host = ScannerModel::fov_360();
        for t in default_templates(&host) {
            let bins = (t.fragment.angle_min() - host.angle_min) / host.angle_increment;
            assert!((bins - bins.round()).abs() < 1e-9);
            assert!(t.fragment.ranges().iter().any(|&r| r != NO_RETURN), "{}", t.label);
        }
    }
}
