//! Laser-scanner simulation over a ground-truth grid, procedural test maps
//! and the JSON-Lines scan-log format.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{CellState, GridMap, MapGeometry, Pose2D, WorldError};

/// Smallest range a noisy hit is clamped to.
const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scanner spec: {0}")]
    InvalidSpec(String),
    #[error("pose ({x:.3}, {y:.3}) is outside the map")]
    PoseOutsideMap { x: f64, y: f64 },
    #[error("pose ({x:.3}, {y:.3}) lies in a {state:?} cell")]
    PoseNotFree { x: f64, y: f64, state: CellState },
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("cannot generate a {kind} map of {width}x{height}: {reason}")]
    MapTooSmall {
        kind: MapKind,
        width: usize,
        height: usize,
        reason: String,
    },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("scan log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Planar laser scanner model. Angles are relative to the robot heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScannerSpec {
    pub beam_count: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub max_range: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Downstream consumers keep every `decimation`-th beam.
    pub decimation: usize,
}

impl Default for ScannerSpec {
    fn default() -> Self {
        Self {
            beam_count: 270,
            angle_min: -135f64.to_radians(),
            angle_max: 135f64.to_radians(),
            max_range: 30.0,
            noise_mean: 0.0,
            noise_std: 0.05,
            decimation: 10,
        }
    }
}

impl ScannerSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if self.beam_count == 0 {
            return fail("beam_count must be positive");
        }
        if !(self.angle_min < self.angle_max) {
            return fail("angle_min must be below angle_max");
        }
        if self.angle_max - self.angle_min > 2.0 * PI + 1e-12 {
            return fail("field of view exceeds a full turn");
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return fail("max_range must be positive and finite");
        }
        if !(self.noise_std >= 0.0) || !self.noise_mean.is_finite() {
            return fail("noise_std must be non-negative and noise_mean finite");
        }
        if self.decimation == 0 {
            return fail("decimation must be at least 1");
        }
        Ok(())
    }

    /// Beam angle relative to the robot heading.
    pub fn beam_offset(&self, i: usize) -> f64 {
        if self.beam_count == 1 {
            return self.angle_min;
        }
        self.angle_min + i as f64 * (self.angle_max - self.angle_min) / (self.beam_count - 1) as f64
    }
}

/// One frame of range measurements. `hits[i] == false` means no obstacle
/// was seen and `ranges[i] == max_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub pose: Pose2D,
    pub ranges: Vec<f64>,
    pub hits: Vec<bool>,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanLog {
    pub spec: ScannerSpec,
    pub map_resolution: f64,
    pub frames: Vec<LaserScan>,
}

enum RayEnd {
    Hit(f64),
    Miss,
}

/// Walks the grid cells crossed by a ray (Amanatides-Woo traversal) until
/// an occupied cell, an unknown cell, the grid border or `max_range`.
fn trace_ray(map: &GridMap, x: f64, y: f64, angle: f64, max_range: f64) -> RayEnd {
    let g = &map.geometry;
    let Ok((mut col, mut row)) = g.world_to_grid(x, y) else {
        return RayEnd::Miss;
    };
    let (dx, dy) = (angle.cos(), angle.sin());
    let step_c: isize = if dx > 0.0 { 1 } else { -1 };
    let step_r: isize = if dy > 0.0 { 1 } else { -1 };
    let boundary_t = |cell: usize, step: isize, origin: f64, p: f64, d: f64| -> f64 {
        if d == 0.0 {
            return f64::INFINITY;
        }
        let edge = if step > 0 { cell + 1 } else { cell };
        (origin + edge as f64 * g.resolution - p) / d
    };
    loop {
        let tx = boundary_t(col, step_c, g.origin.x, x, dx);
        let ty = boundary_t(row, step_r, g.origin.y, y, dy);
        let t = tx.min(ty);
        if t > max_range {
            return RayEnd::Miss;
        }
        if tx <= ty {
            let next = col as isize + step_c;
            if next < 0 || next >= g.width as isize {
                return RayEnd::Miss;
            }
            col = next as usize;
        } else {
            let next = row as isize + step_r;
            if next < 0 || next >= g.height as isize {
                return RayEnd::Miss;
            }
            row = next as usize;
        }
        match map.get(col, row) {
            CellState::Occupied => return RayEnd::Hit(t.max(0.0)),
            CellState::Unknown => return RayEnd::Miss,
            CellState::Free => {}
        }
    }
}

fn check_pose(map: &GridMap, pose: &Pose2D) -> Result<()> {
    match map.state_at(pose.x, pose.y) {
        None => Err(SimError::PoseOutsideMap {
            x: pose.x,
            y: pose.y,
        }),
        Some(CellState::Free) => Ok(()),
        Some(state) => Err(SimError::PoseNotFree {
            x: pose.x,
            y: pose.y,
            state,
        }),
    }
}

/// Simulates one scan from `pose`. Hit ranges get additive Gaussian noise
/// and are clamped to `(0, max_range]`; misses report `max_range`.
pub fn raycast(map: &GridMap, pose: Pose2D, spec: &ScannerSpec, rng_seed: u64) -> Result<LaserScan> {
    spec.validate()?;
    check_pose(map, &pose)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = Normal::new(spec.noise_mean, spec.noise_std)
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let mut ranges = Vec::with_capacity(spec.beam_count);
    let mut hits = Vec::with_capacity(spec.beam_count);
    for i in 0..spec.beam_count {
        let angle = pose.theta + spec.beam_offset(i);
        match trace_ray(map, pose.x, pose.y, angle, spec.max_range) {
            RayEnd::Hit(r) => {
                let noisy = r + noise.sample(&mut rng);
                ranges.push(noisy.clamp(MIN_RANGE, spec.max_range));
                hits.push(true);
            }
            RayEnd::Miss => {
                ranges.push(spec.max_range);
                hits.push(false);
            }
        }
    }
    Ok(LaserScan {
        pose,
        ranges,
        hits,
        frame_index: 0,
    })
}

/// Per-frame seed; frames are independent of each other and of the order
/// in which they are simulated.
pub fn frame_seed(seed: u64, frame_index: usize) -> u64 {
    let mut z = seed ^ (frame_index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn simulate_trajectory(
    map: &GridMap,
    poses: &[Pose2D],
    spec: &ScannerSpec,
    seed: u64,
) -> Result<ScanLog> {
    spec.validate()?;
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, &pose)| {
            raycast(map, pose, spec, frame_seed(seed, i))
                .map(|mut scan| {
                    scan.frame_index = i;
                    scan
                })
                .map_err(|e| SimError::Frame {
                    frame: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanLog {
        spec: spec.clone(),
        map_resolution: map.resolution(),
        frames,
    })
}

/// Samples a polyline at a fixed arc-length step. Produces
/// `ceil(length / step) + 1` poses, the last one on the final waypoint, each
/// heading along its segment.
pub fn interpolate_waypoints(waypoints: &[(f64, f64)], step: f64) -> Result<Vec<Pose2D>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(SimError::InvalidTrajectory(format!("step must be positive, got {step}")));
    }
    let segments: Vec<((f64, f64), (f64, f64), f64)> = waypoints
        .windows(2)
        .map(|w| (w[0], w[1], (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)))
        .filter(|s| s.2 > 0.0)
        .collect();
    if segments.is_empty() {
        return match waypoints.first() {
            Some(&(x, y)) => Ok(vec![Pose2D::new(x, y, 0.0)]),
            None => Err(SimError::InvalidTrajectory("no waypoints".into())),
        };
    }
    let last_seg_end = segments[segments.len() - 1].1;
    let total: f64 = segments.iter().map(|s| s.2).sum();
    let count = ((total / step) - 1e-9).ceil().max(0.0) as usize + 1;
    let mut poses = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..count {
        let s = (k as f64 * step).min(total);
        while seg + 1 < segments.len() && s > seg_start + segments[seg].2 {
            seg_start += segments[seg].2;
            seg += 1;
        }
        let (a, b, len) = segments[seg];
        let heading = (b.1 - a.1).atan2(b.0 - a.0);
        let pose = if k + 1 == count {
            Pose2D::new(last_seg_end.0, last_seg_end.1, heading)
        } else {
            let u = ((s - seg_start) / len).clamp(0.0, 1.0);
            Pose2D::new(a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1), heading)
        };
        poses.push(pose);
    }
    Ok(poses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapKind {
    SimpleRooms,
    SparseObstacles,
    Corridor,
}

impl MapKind {
    pub fn name(self) -> &'static str {
        match self {
            MapKind::SimpleRooms => "simple_rooms",
            MapKind::SparseObstacles => "sparse_obstacles",
            MapKind::Corridor => "corridor",
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "simple_rooms" => Ok(MapKind::SimpleRooms),
            "sparse_obstacles" => Ok(MapKind::SparseObstacles),
            "corridor" => Ok(MapKind::Corridor),
            other => Err(format!(
                "unknown map kind {other:?} (expected simple_rooms, sparse_obstacles or corridor)"
            )),
        }
    }
}

/// A generated map together with a collision-free tour through it.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub map: GridMap,
    /// Waypoints in meters; consecutive waypoints are joined by straight
    /// segments that stay in free space.
    pub tour: Vec<(f64, f64)>,
    pub start: (usize, usize),
    pub goal: (usize, usize),
}

pub const MIN_MAP_SIZE: usize = 50;

pub fn generate_synthetic_map(
    kind: MapKind,
    width: usize,
    height: usize,
    resolution: f64,
    seed: u64,
) -> Result<GridMap> {
    generate_synthetic_world(kind, width, height, resolution, seed).map(|w| w.map)
}

/// Procedural stand-ins for indoor test arenas. The building sits inside a
/// band of unknown cells and is closed by a one-cell outer wall.
pub fn generate_synthetic_world(
    kind: MapKind,
    width: usize,
    height: usize,
    resolution: f64,
    seed: u64,
) -> Result<SyntheticWorld> {
    let too_small = |reason: &str| SimError::MapTooSmall {
        kind,
        width,
        height,
        reason: reason.to_string(),
    };
    if width < MIN_MAP_SIZE || height < MIN_MAP_SIZE {
        return Err(too_small(&format!("both sides must be at least {MIN_MAP_SIZE} cells")));
    }
    let geometry = MapGeometry::new(width, height, resolution, Pose2D::origin())?;
    let mut map = GridMap::filled(geometry, CellState::Unknown);
    let margin = (width.min(height) / 20).max(2);
    let frame = Frame {
        c0: margin,
        r0: margin,
        c1: width - 1 - margin,
        r1: height - 1 - margin,
    };
    map.fill_rect(frame.c0, frame.r0, frame.c1, frame.r1, CellState::Occupied);
    map.fill_rect(frame.c0 + 1, frame.r0 + 1, frame.c1 - 1, frame.r1 - 1, CellState::Free);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tour_cells, start, goal) = match kind {
        MapKind::SimpleRooms => build_rooms(&mut map, &frame, &mut rng).ok_or_else(|| too_small("rooms do not fit"))?,
        MapKind::SparseObstacles => {
            build_obstacles(&mut map, &frame, &mut rng).ok_or_else(|| too_small("obstacles do not fit"))?
        }
        MapKind::Corridor => build_corridor(&mut map, &frame, &mut rng).ok_or_else(|| too_small("corridor does not fit"))?,
    };
    let tour = tour_cells
        .iter()
        .map(|&(c, r)| map.geometry.cell_center(c, r))
        .collect();
    Ok(SyntheticWorld {
        map,
        tour,
        start,
        goal,
    })
}

/// Inclusive cell bounds of the outer wall.
struct Frame {
    c0: usize,
    r0: usize,
    c1: usize,
    r1: usize,
}

type Layout = (Vec<(usize, usize)>, (usize, usize), (usize, usize));

fn cells_for(meters: f64, resolution: f64, min: usize) -> usize {
    ((meters / resolution).round() as usize).max(min)
}

/// Four rooms split by a cross of walls, one door in each wall arm. The
/// tour visits the rooms in a cycle through the doors.
fn build_rooms(map: &mut GridMap, f: &Frame, rng: &mut ChaCha8Rng) -> Option<Layout> {
    let res = map.resolution();
    let (iw, ih) = (f.c1 - f.c0 - 1, f.r1 - f.r0 - 1);
    let door = cells_for(0.9, res, 3).min(iw.min(ih) / 5).max(3);
    if iw < 2 * door + 9 || ih < 2 * door + 9 {
        return None;
    }
    let vx = f.c0 + 1 + (iw as f64 * rng.random_range(0.4..0.6)) as usize;
    let hy = f.r0 + 1 + (ih as f64 * rng.random_range(0.4..0.6)) as usize;
    map.fill_rect(vx, f.r0, vx, f.r1, CellState::Occupied);
    map.fill_rect(f.c0, hy, f.c1, hy, CellState::Occupied);
    // door start within (lo, hi) exclusive span, keeping two cells of wall at each end
    let mut door_at = |lo: usize, hi: usize| -> Option<usize> {
        let first = lo + 3;
        let last = hi.checked_sub(door + 2)?;
        (first <= last).then(|| rng.random_range(first..=last))
    };
    let d_vlow = door_at(f.r0, hy)?;
    let d_vhigh = door_at(hy, f.r1)?;
    let d_hleft = door_at(f.c0, vx)?;
    let d_hright = door_at(vx, f.c1)?;
    map.fill_rect(vx, d_vlow, vx, d_vlow + door - 1, CellState::Free);
    map.fill_rect(vx, d_vhigh, vx, d_vhigh + door - 1, CellState::Free);
    map.fill_rect(d_hleft, hy, d_hleft + door - 1, hy, CellState::Free);
    map.fill_rect(d_hright, hy, d_hright + door - 1, hy, CellState::Free);

    let center = |a: usize, b: usize| (a + b) / 2;
    let bl = (center(f.c0, vx), center(f.r0, hy));
    let br = (center(vx, f.c1), center(f.r0, hy));
    let tr = (center(vx, f.c1), center(hy, f.r1));
    let tl = (center(f.c0, vx), center(hy, f.r1));
    let mid = |start: usize| start + door / 2;
    let tour = vec![
        bl,
        (vx, mid(d_vlow)),
        br,
        (mid(d_hright), hy),
        tr,
        (vx, mid(d_vhigh)),
        tl,
        (mid(d_hleft), hy),
        bl,
    ];
    Some((tour, bl, tl))
}

/// Random non-overlapping boxes around a rectangular patrol loop that is
/// kept clear.
fn build_obstacles(map: &mut GridMap, f: &Frame, rng: &mut ChaCha8Rng) -> Option<Layout> {
    let res = map.resolution();
    let (iw, ih) = (f.c1 - f.c0 - 1, f.r1 - f.r0 - 1);
    let clearance = cells_for(0.5, res, 3).min(iw.min(ih) / 10).max(2);
    let (lx0, lx1) = (f.c0 + 1 + iw * 3 / 10, f.c0 + 1 + iw * 7 / 10);
    let (ly0, ly1) = (f.r0 + 1 + ih * 3 / 10, f.r0 + 1 + ih * 7 / 10);
    if lx0 < f.c0 + 1 + clearance || ly0 < f.r0 + 1 + clearance {
        return None;
    }
    let min_side = cells_for(0.3, res, 2);
    let max_side = cells_for(1.0, res, 4).min(iw / 4).max(min_side + 1);
    let target = ((iw * ih) as f64 / 2500.0).round().clamp(3.0, 12.0) as usize;
    let mut boxes: Vec<(usize, usize, usize, usize)> = Vec::new();
    let near_loop = |c0: usize, r0: usize, c1: usize, r1: usize| {
        let band = |a0: usize, a1: usize, line: usize| a0 <= line + clearance && a1 + clearance >= line;
        let overlaps = |a0: usize, a1: usize, lo: usize, hi: usize| a0 <= hi + clearance && a1 + clearance >= lo;
        ((band(c0, c1, lx0) || band(c0, c1, lx1)) && overlaps(r0, r1, ly0, ly1))
            || ((band(r0, r1, ly0) || band(r0, r1, ly1)) && overlaps(c0, c1, lx0, lx1))
    };
    for _ in 0..target * 200 {
        if boxes.len() == target {
            break;
        }
        let w = rng.random_range(min_side..=max_side);
        let h = rng.random_range(min_side..=max_side);
        let c0 = rng.random_range(f.c0 + 3..=f.c1.saturating_sub(w + 2).max(f.c0 + 3));
        let r0 = rng.random_range(f.r0 + 3..=f.r1.saturating_sub(h + 2).max(f.r0 + 3));
        let (c1, r1) = (c0 + w - 1, r0 + h - 1);
        if c1 + 3 > f.c1 || r1 + 3 > f.r1 || near_loop(c0, r0, c1, r1) {
            continue;
        }
        let clash = boxes
            .iter()
            .any(|&(a0, b0, a1, b1)| c0 <= a1 + 2 && a0 <= c1 + 2 && r0 <= b1 + 2 && b0 <= r1 + 2);
        if !clash {
            boxes.push((c0, r0, c1, r1));
        }
    }
    if boxes.is_empty() {
        return None;
    }
    for &(c0, r0, c1, r1) in &boxes {
        map.fill_rect(c0, r0, c1, r1, CellState::Occupied);
    }
    let tour = vec![(lx0, ly0), (lx1, ly0), (lx1, ly1), (lx0, ly1), (lx0, ly0)];
    Some((tour, (lx0, ly0), (lx0, ly1)))
}

/// Serpentine corridor: horizontal lanes separated by one-cell walls, with
/// the passage to the next lane alternating between the two ends.
fn build_corridor(map: &mut GridMap, f: &Frame, rng: &mut ChaCha8Rng) -> Option<Layout> {
    let res = map.resolution();
    let ih = f.r1 - f.r0 - 1;
    let lane = cells_for(1.2, res, 5).min(ih / 3).max(5);
    let lanes = (ih + 1) / (lane + 1);
    if lanes < 2 || f.c1 - f.c0 - 1 < 3 * lane {
        return None;
    }
    // distribute leftover rows over the lanes so the last wall is the outer one
    let spare = ih + 1 - lanes * (lane + 1);
    let mut bottoms = Vec::with_capacity(lanes);
    let mut row = f.r0 + 1;
    for i in 0..lanes {
        let h = lane + spare / lanes + usize::from(i < spare % lanes);
        bottoms.push((row, row + h - 1));
        row += h + 1;
    }
    let left_first = rng.random_bool(0.5);
    let mut gaps = Vec::with_capacity(lanes - 1);
    for i in 0..lanes - 1 {
        let wall = bottoms[i].1 + 1;
        map.fill_rect(f.c0, wall, f.c1, wall, CellState::Occupied);
        let gap = ((lane as f64) * rng.random_range(0.8..1.2)).round() as usize;
        let at_left = (i % 2 == 0) == left_first;
        let (g0, g1) = if at_left {
            (f.c0 + 1, f.c0 + gap)
        } else {
            (f.c1 - gap, f.c1 - 1)
        };
        map.fill_rect(g0, wall, g1, wall, CellState::Free);
        gaps.push(((g0 + g1) / 2, at_left));
    }
    let lane_mid = |i: usize| (bottoms[i].0 + bottoms[i].1) / 2;
    let (near_left, near_right) = (f.c0 + 1 + lane / 2, f.c1 - 1 - lane / 2);
    let mut tour = Vec::new();
    let first_x = if gaps[0].1 { near_right } else { near_left };
    tour.push((first_x, lane_mid(0)));
    for (i, &(gx, _)) in gaps.iter().enumerate() {
        tour.push((gx, lane_mid(i)));
        tour.push((gx, lane_mid(i + 1)));
    }
    let last_x = if gaps[lanes - 2].1 { near_right } else { near_left };
    tour.push((last_x, lane_mid(lanes - 1)));
    let start = tour[0];
    let goal = *tour.last().unwrap();
    Some((tour, start, goal))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogHeader {
    spec: ScannerSpec,
    map_resolution: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogFrame {
    frame_index: usize,
    pose: [f64; 3],
    ranges: Vec<f64>,
    hits: Vec<bool>,
}

pub fn write_scanlog_to<W: Write>(log: &ScanLog, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header = LogHeader {
        spec: log.spec.clone(),
        map_resolution: log.map_resolution,
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for scan in &log.frames {
        let frame = LogFrame {
            frame_index: scan.frame_index,
            pose: [scan.pose.x, scan.pose.y, scan.pose.theta],
            ranges: scan.ranges.clone(),
            hits: scan.hits.clone(),
        };
        serde_json::to_writer(&mut out, &frame).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_scanlog(log: &ScanLog, path: impl AsRef<Path>) -> Result<()> {
    write_scanlog_to(log, fs::File::create(path)?)
}

pub fn read_scanlog_from<R: BufRead>(input: R) -> Result<ScanLog> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, message: String| SimError::Parse { line, message };
    let header: LogHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "missing header line".into())),
    };
    header.spec.validate().map_err(|e| parse_err(1, e.to_string()))?;
    if !(header.map_resolution > 0.0) {
        return Err(parse_err(1, "map_resolution must be positive".into()));
    }
    let mut frames: Vec<LaserScan> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: LogFrame = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if f.ranges.len() != header.spec.beam_count || f.hits.len() != header.spec.beam_count {
            return Err(parse_err(
                lineno,
                format!(
                    "frame has {} ranges and {} hit flags, header declares {} beams",
                    f.ranges.len(),
                    f.hits.len(),
                    header.spec.beam_count
                ),
            ));
        }
        let expected_min = frames.last().map_or(0, |p| p.frame_index + 1);
        let monotone = match frames.last() {
            None => f.frame_index == 0,
            Some(_) => f.frame_index >= expected_min,
        };
        if !monotone {
            return Err(parse_err(
                lineno,
                format!("frame_index {} breaks the increasing sequence starting at 0", f.frame_index),
            ));
        }
        let [x, y, theta] = f.pose;
        if !(x.is_finite() && y.is_finite() && theta > -PI && theta <= PI) {
            return Err(parse_err(lineno, "pose must be finite with theta in (-pi, pi]".into()));
        }
        frames.push(LaserScan {
            pose: Pose2D { x, y, theta },
            ranges: f.ranges,
            hits: f.hits,
            frame_index: f.frame_index,
        });
    }
    Ok(ScanLog {
        spec: header.spec,
        map_resolution: header.map_resolution,
        frames,
    })
}

pub fn read_scanlog(path: impl AsRef<Path>) -> Result<ScanLog> {
    read_scanlog_from(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn free_map(w: usize, h: usize, res: f64) -> GridMap {
        GridMap::filled(MapGeometry::new(w, h, res, Pose2D::origin()).unwrap(), CellState::Free)
    }

    fn one_beam(noise_std: f64) -> ScannerSpec {
        ScannerSpec {
            beam_count: 1,
            angle_min: 0.0,
            angle_max: 0.1,
            max_range: 5.0,
            noise_mean: 0.0,
            noise_std,
            decimation: 1,
        }
    }

    /// Wall filling every cell with x >= 1.0 on a 0.05 m grid.
    fn wall_scene() -> GridMap {
        let mut m = free_map(40, 20, 0.05);
        m.fill_rect(20, 0, 39, 19, CellState::Occupied);
        m
    }

    #[test]
    fn open_space_reports_max_range() {
        let m = free_map(60, 60, 0.05);
        let scan = raycast(&m, Pose2D::new(1.5, 1.5, 0.4), &ScannerSpec::default(), 1).unwrap();
        assert!(scan.hits.iter().all(|h| !h));
        assert!(scan.ranges.iter().all(|&r| r == 30.0));
    }

    #[test]
    fn single_beam_hits_wall_at_analytic_range() {
        let scan = raycast(&wall_scene(), Pose2D::new(0.0, 0.5, 0.0), &one_beam(0.0), 0).unwrap();
        assert!(scan.hits[0]);
        assert!((scan.ranges[0] - 1.0).abs() <= 0.05);
    }

    #[test]
    fn noisy_scans_are_reproducible() {
        let spec = one_beam(0.05);
        let pose = Pose2D::new(0.0, 0.5, 0.0);
        let a = raycast(&wall_scene(), pose, &spec, 42).unwrap();
        let b = raycast(&wall_scene(), pose, &spec, 42).unwrap();
        assert_eq!(a.ranges[0].to_bits(), b.ranges[0].to_bits());
        let c = raycast(&wall_scene(), pose, &spec, 43).unwrap();
        assert_ne!(a.ranges[0], c.ranges[0]);
    }

    #[test]
    fn unknown_cells_block_without_hit() {
        let mut m = free_map(40, 20, 0.05);
        m.fill_rect(20, 0, 39, 19, CellState::Unknown);
        let scan = raycast(&m, Pose2D::new(0.1, 0.5, 0.0), &one_beam(0.0), 0).unwrap();
        assert!(!scan.hits[0]);
        assert_eq!(scan.ranges[0], 5.0);
    }

    #[test]
    fn invalid_poses_are_rejected() {
        let m = wall_scene();
        assert!(matches!(
            raycast(&m, Pose2D::new(1.5, 0.5, 0.0), &one_beam(0.0), 0),
            Err(SimError::PoseNotFree { .. })
        ));
        assert!(matches!(
            raycast(&m, Pose2D::new(-1.0, 0.5, 0.0), &one_beam(0.0), 0),
            Err(SimError::PoseOutsideMap { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut s = ScannerSpec::default();
        s.decimation = 0;
        assert!(s.validate().is_err());
        let mut s = ScannerSpec::default();
        s.angle_max = s.angle_min;
        assert!(s.validate().is_err());
        let mut s = ScannerSpec::default();
        s.noise_std = -1.0;
        assert!(s.validate().is_err());
        let s = ScannerSpec::default();
        assert!((s.beam_offset(0) + 135f64.to_radians()).abs() < 1e-15);
        assert!((s.beam_offset(269) - 135f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn trajectory_edge_cases() {
        let m = free_map(60, 60, 0.05);
        let log = simulate_trajectory(&m, &[], &ScannerSpec::default(), 1).unwrap();
        assert!(log.frames.is_empty());

        let poses = [Pose2D::new(1.0, 1.0, 0.0), Pose2D::new(1.2, 1.0, 0.0), Pose2D::new(1.4, 1.1, 1.0)];
        let a = simulate_trajectory(&wall_scene_big(), &poses, &ScannerSpec::default(), 5).unwrap();
        let b = simulate_trajectory(&wall_scene_big(), &poses, &ScannerSpec::default(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames.iter().map(|f| f.frame_index).collect::<Vec<_>>(), [0, 1, 2]);
    }

    fn wall_scene_big() -> GridMap {
        let mut m = free_map(60, 60, 0.05);
        m.fill_rect(50, 0, 59, 59, CellState::Occupied);
        m
    }

    #[test]
    fn repeated_poses_get_independent_noise() {
        let pose = Pose2D::new(1.0, 1.0, 0.0);
        let log = simulate_trajectory(&wall_scene_big(), &[pose, pose], &ScannerSpec::default(), 9).unwrap();
        assert_ne!(log.frames[0].ranges, log.frames[1].ranges);
    }

    #[test]
    fn trajectory_errors_name_the_frame() {
        let poses = [Pose2D::new(1.0, 1.0, 0.0), Pose2D::new(2.7, 1.0, 0.0)];
        match simulate_trajectory(&wall_scene_big(), &poses, &ScannerSpec::default(), 0) {
            Err(SimError::Frame { frame: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn waypoint_interpolation_count_and_heading() {
        let poses = interpolate_waypoints(&[(0.0, 0.0), (1.05, 0.0)], 0.1).unwrap();
        assert_eq!(poses.len(), 12);
        assert_eq!(poses.last().unwrap().x, 1.05);
        assert!(poses.iter().all(|p| p.theta == 0.0));
        let poses = interpolate_waypoints(&[(0.0, 0.0), (1.0, 0.0)], 0.1).unwrap();
        assert_eq!(poses.len(), 11);
        let poses = interpolate_waypoints(&[(0.0, 0.0), (0.0, 1.0), (-1.0, 1.0)], 0.25).unwrap();
        assert_eq!(poses.len(), 9);
        assert!((poses[1].theta - PI / 2.0).abs() < 1e-12);
        assert!((poses[8].theta - PI).abs() < 1e-12);
        assert!((poses[6].x + 0.5).abs() < 1e-12 && (poses[6].y - 1.0).abs() < 1e-12);
        assert!(interpolate_waypoints(&[(0.0, 0.0)], 0.0).is_err());
        assert!(interpolate_waypoints(&[], 0.1).is_err());
    }

    fn flood_fill_reaches(map: &GridMap, from: (usize, usize), to: (usize, usize)) -> bool {
        let mut seen = vec![false; map.geometry.cell_count()];
        let mut queue = VecDeque::from([from]);
        seen[map.geometry.index(from.0, from.1)] = true;
        while let Some((c, r)) = queue.pop_front() {
            if (c, r) == to {
                return true;
            }
            let mut push = |c: usize, r: usize| {
                let i = map.geometry.index(c, r);
                if !seen[i] && map.get(c, r) == CellState::Free {
                    seen[i] = true;
                    queue.push_back((c, r));
                }
            };
            if c > 0 {
                push(c - 1, r);
            }
            if r > 0 {
                push(c, r - 1);
            }
            if c + 1 < map.width() {
                push(c + 1, r);
            }
            if r + 1 < map.height() {
                push(c, r + 1);
            }
        }
        false
    }

    fn outer_wall_closed(map: &GridMap) {
        let margin = (map.width().min(map.height()) / 20).max(2);
        let (c1, r1) = (map.width() - 1 - margin, map.height() - 1 - margin);
        for c in margin..=c1 {
            assert_eq!(map.get(c, margin), CellState::Occupied);
            assert_eq!(map.get(c, r1), CellState::Occupied);
        }
        for r in margin..=r1 {
            assert_eq!(map.get(margin, r), CellState::Occupied);
            assert_eq!(map.get(c1, r), CellState::Occupied);
        }
        assert_eq!(map.get(0, 0), CellState::Unknown);
    }

    #[test]
    fn rooms_have_closed_outer_wall() {
        let w = generate_synthetic_world(MapKind::SimpleRooms, 100, 100, 0.05, 7).unwrap();
        outer_wall_closed(&w.map);
        assert!(flood_fill_reaches(&w.map, w.start, w.goal));
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [MapKind::SimpleRooms, MapKind::SparseObstacles, MapKind::Corridor] {
            let a = generate_synthetic_map(kind, 120, 100, 0.05, 3).unwrap();
            let b = generate_synthetic_map(kind, 120, 100, 0.05, 3).unwrap();
            assert_eq!(a, b);
            outer_wall_closed(&a);
        }
        let a = generate_synthetic_map(MapKind::SparseObstacles, 200, 200, 0.05, 1).unwrap();
        let b = generate_synthetic_map(MapKind::SparseObstacles, 200, 200, 0.05, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn corridor_connects_start_to_goal() {
        let w = generate_synthetic_world(MapKind::Corridor, 100, 100, 0.05, 11).unwrap();
        assert!(flood_fill_reaches(&w.map, w.start, w.goal));
        assert_ne!(w.start, w.goal);
    }

    #[test]
    fn tours_stay_in_free_space() {
        for kind in [MapKind::SimpleRooms, MapKind::SparseObstacles, MapKind::Corridor] {
            for (size, seed) in [(50, 0), (120, 4), (200, 7), (300, 9)] {
                let w = generate_synthetic_world(kind, size, size, 0.05, seed).unwrap();
                let poses = interpolate_waypoints(&w.tour, 0.02).unwrap();
                for p in &poses {
                    assert_eq!(w.map.state_at(p.x, p.y), Some(CellState::Free), "{kind} {size} at {p:?}");
                }
            }
        }
    }

    #[test]
    fn too_small_maps_are_rejected() {
        assert!(matches!(
            generate_synthetic_map(MapKind::SimpleRooms, 10, 10, 0.05, 0),
            Err(SimError::MapTooSmall { .. })
        ));
    }

    #[test]
    fn map_kind_names_round_trip() {
        for kind in [MapKind::SimpleRooms, MapKind::SparseObstacles, MapKind::Corridor] {
            assert_eq!(kind.name().parse::<MapKind>().unwrap(), kind);
        }
        assert!("robocup".parse::<MapKind>().is_err());
    }

    fn sample_log(frames: usize) -> ScanLog {
        let w = generate_synthetic_world(MapKind::SimpleRooms, 100, 100, 0.05, 1).unwrap();
        let poses = interpolate_waypoints(&w.tour, 0.5).unwrap();
        simulate_trajectory(&w.map, &poses[..frames], &ScannerSpec::default(), 3).unwrap()
    }

    #[test]
    fn empty_log_is_header_only() {
        let log = ScanLog {
            spec: ScannerSpec::default(),
            map_resolution: 0.05,
            frames: vec![],
        };
        let mut buf = Vec::new();
        write_scanlog_to(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_scanlog_from(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn scanlog_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let log = sample_log(3);
        write_scanlog(&log, &path).unwrap();
        assert_eq!(read_scanlog(&path).unwrap(), log);
    }

    #[test]
    fn corrupted_line_is_named() {
        let mut buf = Vec::new();
        write_scanlog_to(&sample_log(3), &mut buf).unwrap();
        let mut lines: Vec<String> = String::from_utf8(buf).unwrap().lines().map(String::from).collect();
        lines[2] = lines[2].replace("\"ranges\"", "\"rangez\"");
        let text = lines.join("\n");
        match read_scanlog_from(text.as_bytes()) {
            Err(SimError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_monotone_frames_are_rejected() {
        let mut log = sample_log(2);
        log.frames[1].frame_index = 0;
        let mut buf = Vec::new();
        write_scanlog_to(&log, &mut buf).unwrap();
        assert!(matches!(read_scanlog_from(buf.as_slice()), Err(SimError::Parse { line: 3, .. })));
    }

    #[test]
    fn beam_count_mismatch_is_rejected() {
        let mut log = sample_log(1);
        log.frames[0].ranges.pop();
        log.frames[0].hits.pop();
        let mut buf = Vec::new();
        write_scanlog_to(&log, &mut buf).unwrap();
        assert!(matches!(read_scanlog_from(buf.as_slice()), Err(SimError::Parse { line: 2, .. })));
    }
}
