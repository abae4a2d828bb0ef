use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fastgpom::mapping::MapperConfig;
use fastgpom::simulator::ScannerSpec;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scanner: ScannerSpec,
    pub mapper: MapperConfig,
    pub simulation: SimulationConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub kind: String,
    pub size: usize,
    /// Defaults to `size`.
    pub height: Option<usize>,
    pub resolution: f64,
    pub seed: u64,
    /// Path in meters; when absent the generated map's tour is used.
    pub waypoints: Option<Vec<[f64; 2]>>,
    /// Text file with one `x y theta` pose per line.
    pub pose_file: Option<PathBuf>,
    pub step: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            kind: "simple_rooms".into(),
            size: 200,
            height: None,
            resolution: 0.05,
            seed: 0,
            waypoints: None,
            pose_file: None,
            step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}
