//! Metric grid maps, poses and the map file formats shared by the rest of
//! the crate.
//!
//! Grids are stored row-major with row 0 at the bottom (y grows upward).
//! Image files store rows top-down, so the PGM/PNG codecs flip rows at the
//! I/O boundary.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cell ({col}, {row}) is outside a {width}x{height} grid")]
    IndexOutOfRange {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported PGM maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("probability {value} at cell {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("grid has {found} values, geometry needs {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, WorldError>;

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Planar robot pose. `theta` is kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Occupied,
    Free,
    Unknown,
}

impl CellState {
    /// Pixel value written to PGM files.
    pub fn to_pixel(self) -> u8 {
        match self {
            CellState::Occupied => 0,
            CellState::Free => 254,
            CellState::Unknown => 205,
        }
    }

    pub fn from_pixel(value: u8) -> Self {
        match value {
            0..=50 => CellState::Occupied,
            240..=255 => CellState::Free,
            _ => CellState::Unknown,
        }
    }
}

/// Size, resolution and placement of a metric grid. The origin is the
/// lower-left corner of cell (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapGeometry {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Pose2D,
}

impl MapGeometry {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2D) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(WorldError::InvalidGeometry(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(WorldError::InvalidGeometry(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if origin.theta != 0.0 {
            return Err(WorldError::InvalidGeometry(
                "rotated map origins are not supported".into(),
            ));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(WorldError::InvalidGeometry("origin must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// Cell containing the metric point `(x, y)`.
    pub fn world_to_grid(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        let gx = ((x - self.origin.x) / self.resolution).floor();
        let gy = ((y - self.origin.y) / self.resolution).floor();
        if !(gx >= 0.0 && gy >= 0.0 && gx < self.width as f64 && gy < self.height as f64) {
            return Err(WorldError::OutOfBounds { x, y });
        }
        Ok((gx as usize, gy as usize))
    }

    /// Metric center of cell `(col, row)`.
    pub fn grid_to_world(&self, col: usize, row: usize) -> Result<(f64, f64)> {
        if col >= self.width || row >= self.height {
            return Err(WorldError::IndexOutOfRange {
                col,
                row,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.cell_center(col, row))
    }

    /// Unchecked variant of [`grid_to_world`](Self::grid_to_world).
    #[inline]
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.world_to_grid(x, y).is_ok()
    }
}

/// Ternary ground-truth occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub geometry: MapGeometry,
    pub cells: Vec<CellState>,
}

impl GridMap {
    pub fn filled(geometry: MapGeometry, state: CellState) -> Self {
        Self {
            cells: vec![state; geometry.cell_count()],
            geometry,
        }
    }

    pub fn from_cells(geometry: MapGeometry, cells: Vec<CellState>) -> Result<Self> {
        if cells.len() != geometry.cell_count() {
            return Err(WorldError::SizeMismatch {
                expected: geometry.cell_count(),
                found: cells.len(),
            });
        }
        Ok(Self { geometry, cells })
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn get(&self, col: usize, row: usize) -> CellState {
        self.cells[self.geometry.index(col, row)]
    }

    pub fn set(&mut self, col: usize, row: usize, state: CellState) {
        let i = self.geometry.index(col, row);
        self.cells[i] = state;
    }

    /// State of the cell under a metric point, `None` outside the grid.
    pub fn state_at(&self, x: f64, y: f64) -> Option<CellState> {
        self.geometry
            .world_to_grid(x, y)
            .ok()
            .map(|(c, r)| self.get(c, r))
    }

    /// Fills the inclusive cell rectangle, clipped to the grid.
    pub fn fill_rect(&mut self, c0: usize, r0: usize, c1: usize, r1: usize, state: CellState) {
        let c1 = c1.min(self.width() - 1);
        let r1 = r1.min(self.height() - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                self.set(col, row, state);
            }
        }
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.width(), self.height());
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.reserve(w * h);
        for row in (0..h).rev() {
            out.extend((0..w).map(|col| self.get(col, row).to_pixel()));
        }
        out
    }

    /// Decodes a binary PGM. Resolution and origin are not stored in the
    /// file and must be supplied.
    pub fn decode_pgm(bytes: &[u8], resolution: f64, origin: Pose2D) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != "P5" {
            return Err(WorldError::MalformedHeader(format!(
                "expected magic P5, found {magic:?}"
            )));
        }
        let width = parse_header_number(bytes, &mut pos, "width")?;
        let height = parse_header_number(bytes, &mut pos, "height")?;
        let maxval = parse_header_number(bytes, &mut pos, "maxval")?;
        if maxval != 255 {
            return Err(WorldError::UnsupportedMaxval(maxval as u32));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => {
                return Err(WorldError::MalformedHeader(
                    "missing whitespace after maxval".into(),
                ))
            }
        }
        let geometry = MapGeometry::new(width, height, resolution, origin)?;
        let payload = &bytes[pos..];
        let expected = width * height;
        if payload.len() < expected {
            return Err(WorldError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        let mut map = GridMap::filled(geometry, CellState::Unknown);
        for (i, &px) in payload[..expected].iter().enumerate() {
            let (col, file_row) = (i % width, i / width);
            map.set(col, height - 1 - file_row, CellState::from_pixel(px));
        }
        Ok(map)
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(WorldError::MalformedHeader("unexpected end of header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| WorldError::MalformedHeader("non-ASCII header token".into()))
}

fn parse_header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| WorldError::MalformedHeader(format!("bad {what} {tok:?}")))
}

pub fn load_pgm(path: impl AsRef<Path>, resolution: f64, origin: Pose2D) -> Result<GridMap> {
    let bytes = fs::read(path)?;
    GridMap::decode_pgm(&bytes, resolution, origin)
}

pub fn save_pgm(map: &GridMap, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&map.encode_pgm())?;
    Ok(())
}

/// Gray level for an occupancy probability: occupied renders black.
/// Halves round up.
pub fn probability_to_pixel(p: f64) -> u8 {
    (255.0 * (1.0 - p) + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Writes an 8-bit grayscale PNG of a per-cell probability grid laid out
/// like `geometry`.
pub fn render_probability_png(
    geometry: &MapGeometry,
    probs: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if probs.len() != geometry.cell_count() {
        return Err(WorldError::SizeMismatch {
            expected: geometry.cell_count(),
            found: probs.len(),
        });
    }
    if let Some((index, &value)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(WorldError::ProbabilityOutOfRange { index, value });
    }
    let (w, h) = (geometry.width, geometry.height);
    let mut raster = Vec::with_capacity(w * h);
    for row in (0..h).rev() {
        raster.extend((0..w).map(|col| probability_to_pixel(probs[geometry.index(col, row)])));
    }
    let img = image::GrayImage::from_raw(w as u32, h as u32, raster)
        .expect("raster length matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Global Gaussian belief over the latent occupancy field: one mean and one
/// variance per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMap {
    pub geometry: MapGeometry,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl LatentMap {
    pub fn new(geometry: MapGeometry, prior_mu: f64, prior_var: f64) -> Self {
        assert!(prior_var > 0.0, "prior variance must be positive");
        let n = geometry.cell_count();
        Self {
            geometry,
            mu: vec![prior_mu; n],
            var: vec![prior_var; n],
        }
    }
}
