//! Turns a scan into GP training data and splits the space around the robot
//! into three regions.
//!
//! Along every kept beam, free samples sit at `d, 2d, 3d, …` from the robot,
//! stopping `1.5·d` short of the hit; the hit itself is an occupied sample.
//! The last free sample of each beam traces the inner ring and the hits
//! trace the outer ring. Inside the inner ring is region A (confidently
//! free), between the rings region B (uncertain), and beyond the outer ring
//! or outside the field of view region C (unobserved this frame).

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::gp::Point;
use crate::simulator::{LaserScan, ScannerSpec};
use crate::world::{MapGeometry, Pose2D};

/// Samples closer than this are treated as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-6;

/// Angular slack when deciding whether a bearing is inside the kept span.
const ANGLE_EPS: f64 = 1e-9;

/// Radial slack so a hit point recomputed from world coordinates stays on
/// its own outer ring.
const RADIUS_EPS: f64 = 1e-9;

pub const OCCUPIED: f64 = 1.0;
pub const FREE: f64 = -1.0;

/// Where a training sample came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOrigin {
    /// Position of the beam among the kept beams.
    pub beam: usize,
    /// Distance from the robot along the beam.
    pub radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub x: Vec<Point>,
    /// `+1` occupied, `-1` free.
    pub y: Vec<f64>,
    pub origin: Vec<SampleOrigin>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn occupied_count(&self) -> usize {
        self.y.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Number of free samples that fit on a beam: the largest `k` with
/// `k·d <= limit`, where `limit` is the beam range minus `1.5·d`.
fn free_sample_count(range: f64, d: f64) -> usize {
    let limit = range - 1.5 * d;
    if limit < d {
        return 0;
    }
    (limit / d + 1e-9).floor() as usize
}

/// Indices of the beams kept after decimation.
pub fn kept_beams(beam_count: usize, decimation: usize) -> impl Iterator<Item = usize> {
    (0..beam_count).step_by(decimation.max(1))
}

fn beam_angle(scan: &LaserScan, spec: &ScannerSpec, i: usize) -> f64 {
    scan.pose.theta + spec.beam_offset(i)
}

/// Drops samples within [`DUPLICATE_TOLERANCE`] of an earlier one.
struct Dedup {
    buckets: HashMap<(i64, i64), Vec<Point>>,
}

impl Dedup {
    fn new() -> Self {
        Self {
            buckets: HashMap::new(),
        }
    }

    fn key(p: Point) -> (i64, i64) {
        (
            (p[0] / DUPLICATE_TOLERANCE).floor() as i64,
            (p[1] / DUPLICATE_TOLERANCE).floor() as i64,
        )
    }

    fn insert(&mut self, p: Point) -> bool {
        let (kx, ky) = Self::key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    if b.iter().any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) < DUPLICATE_TOLERANCE) {
                        return false;
                    }
                }
            }
        }
        self.buckets.entry((kx, ky)).or_default().push(p);
        true
    }
}

/// Occupied and free training samples from one scan, in world coordinates.
pub fn extract_samples(scan: &LaserScan, spec: &ScannerSpec, d: f64, decimation: usize) -> TrainingSet {
    assert!(d > 0.0, "sample interval must be positive");
    let mut set = TrainingSet::default();
    let mut dedup = Dedup::new();
    let (px, py) = (scan.pose.x, scan.pose.y);
    for (beam, i) in kept_beams(scan.ranges.len(), decimation).enumerate() {
        let angle = beam_angle(scan, spec, i);
        let (c, s) = (angle.cos(), angle.sin());
        let range = scan.ranges[i];
        let mut push = |radius: f64, label: f64| {
            let p = [px + radius * c, py + radius * s];
            if dedup.insert(p) {
                set.x.push(p);
                set.y.push(label);
                set.origin.push(SampleOrigin { beam, radius });
            }
        };
        for k in 1..=free_sample_count(range, d) {
            push(k as f64 * d, FREE);
        }
        if scan.hits[i] {
            push(range, OCCUPIED);
        }
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    /// Inside the inner ring: free with low variance.
    A,
    /// Between the rings: regressed by the GP.
    B,
    /// Beyond the outer ring or outside the field of view.
    C,
}

/// Per-beam ring radii around the scan pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Rings {
    pub center: Pose2D,
    /// World-frame bearings of the kept beams, strictly increasing (not
    /// wrapped into (-pi, pi]).
    pub beam_angles: Vec<f64>,
    pub r_inner: Vec<f64>,
    /// Hit range, or `f64::INFINITY` for beams that saw nothing.
    pub r_outer: Vec<f64>,
    pub max_range: f64,
}

pub fn extract_rings(scan: &LaserScan, spec: &ScannerSpec, d: f64, decimation: usize) -> Rings {
    assert!(d > 0.0, "sample interval must be positive");
    let mut rings = Rings {
        center: scan.pose,
        beam_angles: Vec::new(),
        r_inner: Vec::new(),
        r_outer: Vec::new(),
        max_range: spec.max_range,
    };
    for i in kept_beams(scan.ranges.len(), decimation) {
        let range = scan.ranges[i];
        rings.beam_angles.push(beam_angle(scan, spec, i));
        rings.r_inner.push(free_sample_count(range, d) as f64 * d);
        rings.r_outer.push(if scan.hits[i] { range } else { f64::INFINITY });
    }
    rings
}

impl Rings {
    pub fn len(&self) -> usize {
        self.beam_angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beam_angles.is_empty()
    }

    /// Bearing of `(x, y)` measured from the first kept beam, in [0, 2pi),
    /// or `None` when it falls outside the kept angular span.
    fn offset_in_span(&self, dx: f64, dy: f64) -> Option<f64> {
        let first = self.beam_angles[0];
        let span = self.beam_angles[self.len() - 1] - first;
        let rel = (dy.atan2(dx) - first).rem_euclid(2.0 * PI);
        if rel <= span + ANGLE_EPS {
            Some(rel.min(span))
        } else if 2.0 * PI - rel <= ANGLE_EPS {
            Some(0.0)
        } else {
            None
        }
    }

    /// Ring radii interpolated at a bearing offset. Returns (inner, outer).
    fn radii_at(&self, rel: f64) -> (f64, f64) {
        let first = self.beam_angles[0];
        let n = self.len();
        if n == 1 {
            return (self.r_inner[0], self.r_outer[0]);
        }
        // first beam whose offset is >= rel, bracketing interval [i-1, i]
        let hi = self
            .beam_angles
            .partition_point(|&a| a - first < rel)
            .clamp(1, n - 1);
        let lo = hi - 1;
        let (a0, a1) = (self.beam_angles[lo] - first, self.beam_angles[hi] - first);
        let t = ((rel - a0) / (a1 - a0)).clamp(0.0, 1.0);
        let inner = self.r_inner[lo] + t * (self.r_inner[hi] - self.r_inner[lo]);
        let (o0, o1) = (self.r_outer[lo], self.r_outer[hi]);
        let outer = if o0.is_finite() && o1.is_finite() {
            o0 + t * (o1 - o0)
        } else if t < 0.5 {
            o0
        } else {
            o1
        };
        (inner, outer)
    }

    /// Region of a world point for this frame.
    pub fn classify(&self, x: f64, y: f64) -> Region {
        if self.is_empty() {
            return Region::C;
        }
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        let radius = dx.hypot(dy);
        if radius == 0.0 {
            return if self.r_inner.iter().any(|&r| r > 0.0) {
                Region::A
            } else {
                Region::B
            };
        }
        let Some(rel) = self.offset_in_span(dx, dy) else {
            return Region::C;
        };
        let (inner, outer) = self.radii_at(rel);
        if radius < inner {
            Region::A
        } else if radius > outer + RADIUS_EPS || radius > self.max_range + RADIUS_EPS {
            Region::C
        } else {
            Region::B
        }
    }
}

pub fn classify_region(point: Point, rings: &Rings) -> Region {
    rings.classify(point[0], point[1])
}

/// Keeps every occupied sample and, per beam, only the free sample lying on
/// the inner ring.
pub fn select_ring_samples(samples: &TrainingSet, rings: &Rings) -> TrainingSet {
    let mut out = TrainingSet::default();
    for i in 0..samples.len() {
        let o = samples.origin[i];
        let keep = if samples.y[i] > 0.0 {
            true
        } else {
            let inner = rings.r_inner[o.beam];
            inner > 0.0 && (o.radius - inner).abs() < 1e-9
        };
        if keep {
            out.x.push(samples.x[i]);
            out.y.push(samples.y[i]);
            out.origin.push(o);
        }
    }
    out
}

/// Global cells of the local frame, with their world-frame centers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Window {
    pub cells: Vec<(usize, usize)>,
    /// Row-major indices into the global grid.
    pub indices: Vec<usize>,
    pub centers: Vec<Point>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// The `width × height` block of cells centered on the robot's cell,
/// clipped to the grid.
pub fn inference_window(pose: &Pose2D, width: usize, height: usize, geometry: &MapGeometry) -> Window {
    let res = geometry.resolution;
    let rc = ((pose.x - geometry.origin.x) / res).floor() as i64;
    let rr = ((pose.y - geometry.origin.y) / res).floor() as i64;
    let c0 = (rc - (width / 2) as i64).max(0);
    let c1 = (rc - (width / 2) as i64 + width as i64).min(geometry.width as i64);
    let r0 = (rr - (height / 2) as i64).max(0);
    let r1 = (rr - (height / 2) as i64 + height as i64).min(geometry.height as i64);
    let mut w = Window::default();
    if c0 >= c1 || r0 >= r1 {
        return w;
    }
    let n = ((c1 - c0) * (r1 - r0)) as usize;
    w.cells.reserve(n);
    w.indices.reserve(n);
    w.centers.reserve(n);
    for row in r0 as usize..r1 as usize {
        for col in c0 as usize..c1 as usize {
            let (x, y) = geometry.cell_center(col, row);
            w.cells.push((col, row));
            w.indices.push(geometry.index(col, row));
            w.centers.push([x, y]);
        }
    }
    w
}
