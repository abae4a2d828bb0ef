//! Flat binary dump of a latent map: an ASCII header line
//! `width height resolution` followed by little-endian f64 planes for mu,
//! var and the squashed probability, each row-major from the bottom row.

use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDump {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub prob: Vec<f64>,
}

impl LatentDump {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\n", self.width, self.height, self.resolution).into_bytes();
        for v in self.mu.iter().chain(&self.var).chain(&self.prob) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nl = bytes.iter().position(|&b| b == b'\n').context("missing header line")?;
        let header = std::str::from_utf8(&bytes[..nl]).context("header is not text")?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            bail!("header should be `width height resolution`, got {header:?}");
        }
        let width: usize = fields[0].parse().context("bad width")?;
        let height: usize = fields[1].parse().context("bad height")?;
        let resolution: f64 = fields[2].parse().context("bad resolution")?;
        let n = width * height;
        let body = &bytes[nl + 1..];
        if body.len() != 3 * n * 8 {
            bail!("expected {} payload bytes, found {}", 3 * n * 8, body.len());
        }
        let mut planes = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>();
        let prob = planes.split_off(2 * n);
        let var = planes.split_off(n);
        Ok(Self {
            width,
            height,
            resolution,
            mu: planes,
            var,
            prob,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::decode(&bytes).with_context(|| format!("in latent dump {}", path.display()))
    }
}
