//! Per-scan map updates: the classical GPOM pipeline and the ring-based
//! fast pipeline, both fusing into one persistent [`LatentMap`].

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{NoTimer, Step, StepTimer};
use crate::gp::{self, GpError, KernelParams, Point};
use crate::sampling::{
    extract_rings, extract_samples, inference_window, select_ring_samples, Region, TrainingSet,
};
use crate::simulator::{LaserScan, ScannerSpec};
use crate::world::{LatentMap, MapGeometry};

/// Predicted variances are floored here before fusion so that every fused
/// precision stays finite.
pub const MIN_PREDICTED_VAR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("invalid mapper config: {0}")]
    InvalidConfig(String),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("scan pose ({x:.3}, {y:.3}) lies outside the latent map")]
    PoseOutsideMap { x: f64, y: f64 },
    #[error("scan has {found} beams, scanner spec declares {expected}")]
    BeamCountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Gp(#[from] GpError),
}

pub type Result<T> = std::result::Result<T, MappingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquashMode {
    /// `Φ((αμ + β) / (1 + α²σ²))`
    Linear,
    /// `Φ((αμ + β) / √(1 + α²σ²))`
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Gpom,
    FastGpom,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Gpom => "gpom",
            Pipeline::FastGpom => "fast_gpom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    /// Spacing of free samples along a beam, in meters.
    pub d: f64,
    pub window_width: usize,
    pub window_height: usize,
    pub alpha: f64,
    pub beta: f64,
    pub decimation: usize,
    pub prior_mu: f64,
    pub prior_var: f64,
    pub region_a_mu: f64,
    pub region_a_var: f64,
    /// Write the region-A pseudo-observation instead of fusing it.
    pub region_a_overwrite: bool,
    pub squash_denominator: SquashMode,
    /// Fit kernel hyperparameters on the first usable frame.
    pub optimize_hyperparams: bool,
    pub hyperparam_budget: usize,
    pub kernel: KernelParams,
    /// Predict on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            d: 0.5,
            window_width: 80,
            window_height: 80,
            alpha: 100.0,
            beta: 0.0,
            decimation: 10,
            prior_mu: 0.0,
            prior_var: 1e4,
            region_a_mu: -1.0,
            region_a_var: 0.1,
            region_a_overwrite: false,
            squash_denominator: SquashMode::Linear,
            optimize_hyperparams: true,
            hyperparam_budget: 200,
            kernel: KernelParams::default(),
            parallel: false,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(MappingError::InvalidConfig(m.to_string()));
        if !(self.d > 0.0 && self.d.is_finite()) {
            return fail("d must be positive");
        }
        if !(self.alpha > 0.0) {
            return fail("alpha must be positive");
        }
        if !(self.prior_var > 0.0) {
            return fail("prior_var must be positive");
        }
        if !(self.region_a_var > 0.0) {
            return fail("region_a_var must be positive");
        }
        if self.window_width == 0 || self.window_height == 0 {
            return fail("window dimensions must be at least 1");
        }
        if self.decimation == 0 {
            return fail("decimation must be at least 1");
        }
        let k = &self.kernel;
        if !(k.lengthscale > 0.0 && k.signal_std > 0.0 && k.noise_std >= 0.0) {
            return fail("kernel parameters must be positive");
        }
        Ok(())
    }
}

/// Precision-weighted fusion of two Gaussian estimates.
pub fn bcm_fuse(mu_old: f64, var_old: f64, mu_new: f64, var_new: f64) -> Result<(f64, f64)> {
    for v in [var_old, var_new] {
        if !(v > 0.0) {
            return Err(MappingError::NonPositiveVariance(v));
        }
    }
    Ok(fuse(mu_old, var_old, mu_new, var_new))
}

#[inline]
fn fuse(mu_old: f64, var_old: f64, mu_new: f64, var_new: f64) -> (f64, f64) {
    let var = 1.0 / (1.0 / var_old + 1.0 / var_new);
    (var * (mu_old / var_old + mu_new / var_new), var)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Occupancy probability of a latent Gaussian.
pub fn squash(mu: f64, var: f64, alpha: f64, beta: f64, mode: SquashMode) -> f64 {
    let spread = 1.0 + alpha * alpha * var;
    let denom = match mode {
        SquashMode::Linear => spread,
        SquashMode::Sqrt => spread.sqrt(),
    };
    normal_cdf((alpha * mu + beta) / denom)
}

/// What an update did with a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub updated: bool,
    /// Samples the GP was fitted on (0 when no GP ran).
    pub training_size: usize,
    pub window_cells: usize,
    pub region_a: usize,
    pub region_b: usize,
    pub region_c: usize,
}

impl FrameReport {
    fn skipped(window_cells: usize) -> Self {
        Self {
            updated: false,
            training_size: 0,
            window_cells,
            region_a: 0,
            region_b: 0,
            region_c: 0,
        }
    }
}

/// Test hooks that degrade the fast pipeline toward the classical one.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FastVariant {
    /// Treat every window cell as region B.
    pub all_region_b: bool,
    /// Train on every extracted sample instead of the ring samples.
    pub keep_all_samples: bool,
}

/// Global mapping state carried from frame to frame.
#[derive(Debug, Clone)]
pub struct MapperState {
    pub latent: LatentMap,
    /// Squashed probability of every cell, refreshed for the cells each
    /// frame touches.
    pub probability: Vec<f64>,
    pub gp_params: KernelParams,
    pub params_fitted: bool,
    pub frame_count: usize,
    pub config: MapperConfig,
    pub scanner: ScannerSpec,
}

impl MapperState {
    pub fn new(geometry: MapGeometry, config: MapperConfig, scanner: ScannerSpec) -> Result<Self> {
        config.validate()?;
        scanner
            .validate()
            .map_err(|e| MappingError::InvalidConfig(e.to_string()))?;
        let latent = LatentMap::new(geometry, config.prior_mu, config.prior_var);
        let p0 = squash(
            config.prior_mu,
            config.prior_var,
            config.alpha,
            config.beta,
            config.squash_denominator,
        );
        Ok(Self {
            probability: vec![p0; geometry.cell_count()],
            latent,
            gp_params: config.kernel,
            params_fitted: !config.optimize_hyperparams,
            frame_count: 0,
            config,
            scanner,
        })
    }

    fn squash_cell(&self, i: usize) -> f64 {
        let c = &self.config;
        squash(self.latent.mu[i], self.latent.var[i], c.alpha, c.beta, c.squash_denominator)
    }

    fn check_scan(&self, scan: &LaserScan) -> Result<()> {
        if scan.ranges.len() != self.scanner.beam_count || scan.hits.len() != self.scanner.beam_count {
            return Err(MappingError::BeamCountMismatch {
                expected: self.scanner.beam_count,
                found: scan.ranges.len(),
            });
        }
        if !self.latent.geometry.contains(scan.pose.x, scan.pose.y) {
            return Err(MappingError::PoseOutsideMap {
                x: scan.pose.x,
                y: scan.pose.y,
            });
        }
        Ok(())
    }

    /// Hyperparameters for this frame: optimized on the first usable frame,
    /// fixed afterwards. Returns whether they are freshly fitted.
    fn frame_params(&self, samples: &TrainingSet) -> (KernelParams, bool) {
        if self.params_fitted {
            return (self.gp_params, false);
        }
        match gp::optimize_hyperparams(&samples.x, &samples.y, self.gp_params, self.config.hyperparam_budget) {
            Ok(p) => {
                debug!("fitted kernel hyperparameters {p:?} on {} samples", samples.len());
                (p, true)
            }
            Err(e) => {
                debug!("hyperparameter fit deferred: {e}");
                (self.gp_params, false)
            }
        }
    }

    fn predict(&self, model: &gp::GpModel, xs: &[Point]) -> gp::Prediction {
        if self.config.parallel {
            model.predict_par(xs)
        } else {
            model.predict(xs)
        }
    }

    fn commit_params(&mut self, params: KernelParams, fresh: bool) {
        if fresh {
            self.gp_params = params;
            self.params_fitted = true;
        }
    }

    /// Classical GPOM step: regress every window cell and fuse it.
    pub fn gpom_update(&mut self, scan: &LaserScan) -> Result<FrameReport> {
        self.gpom_update_timed(scan, &mut NoTimer)
    }

    pub fn gpom_update_timed<T: StepTimer>(&mut self, scan: &LaserScan, timer: &mut T) -> Result<FrameReport> {
        self.check_scan(scan)?;
        let cfg = self.config.clone();
        timer.begin();
        let samples = extract_samples(scan, &self.scanner, cfg.d, cfg.decimation);
        timer.lap(Step::ExtractXy);
        if samples.is_empty() {
            warn!("frame {}: no training samples, skipped", scan.frame_index);
            timer.finish();
            return Ok(FrameReport::skipped(0));
        }
        let (params, fresh) = self.frame_params(&samples);
        timer.lap(Step::Hyperparams);
        let window = inference_window(&scan.pose, cfg.window_width, cfg.window_height, &self.latent.geometry);
        timer.lap(Step::ExtractXstar);
        let model = gp::fit(&samples.x, &samples.y, params)?;
        timer.lap(Step::BuildGp);
        let pred = self.predict(&model, &window.centers);
        timer.lap(Step::Predict);
        for (k, &i) in window.indices.iter().enumerate() {
            let v = pred.var[k].max(MIN_PREDICTED_VAR);
            (self.latent.mu[i], self.latent.var[i]) = fuse(self.latent.mu[i], self.latent.var[i], pred.mu[k], v);
        }
        timer.lap(Step::Bcm);
        for &i in &window.indices {
            self.probability[i] = self.squash_cell(i);
        }
        timer.lap(Step::Squash);
        self.commit_params(params, fresh);
        self.frame_count += 1;
        timer.finish();
        Ok(FrameReport {
            updated: true,
            training_size: samples.len(),
            window_cells: window.len(),
            region_a: 0,
            region_b: window.len(),
            region_c: 0,
        })
    }

    /// Fast step: region A gets a free-space pseudo-observation, region B is
    /// regressed from the ring samples, region C is left untouched.
    pub fn fast_gpom_update(&mut self, scan: &LaserScan) -> Result<FrameReport> {
        self.fast_gpom_update_with(scan, &mut NoTimer, FastVariant::default())
    }

    pub fn fast_gpom_update_timed<T: StepTimer>(&mut self, scan: &LaserScan, timer: &mut T) -> Result<FrameReport> {
        self.fast_gpom_update_with(scan, timer, FastVariant::default())
    }

    #[doc(hidden)]
    pub fn fast_gpom_update_with<T: StepTimer>(
        &mut self,
        scan: &LaserScan,
        timer: &mut T,
        variant: FastVariant,
    ) -> Result<FrameReport> {
        self.check_scan(scan)?;
        let cfg = self.config.clone();
        timer.begin();
        let samples = extract_samples(scan, &self.scanner, cfg.d, cfg.decimation);
        let rings = extract_rings(scan, &self.scanner, cfg.d, cfg.decimation);
        let selected = if variant.keep_all_samples {
            samples.clone()
        } else {
            select_ring_samples(&samples, &rings)
        };
        timer.lap(Step::ExtractXy);
        if samples.is_empty() {
            warn!("frame {}: no training samples, skipped", scan.frame_index);
            timer.finish();
            return Ok(FrameReport::skipped(0));
        }
        let (params, fresh) = self.frame_params(&selected);
        timer.lap(Step::Hyperparams);
        let window = inference_window(&scan.pose, cfg.window_width, cfg.window_height, &self.latent.geometry);
        let mut cells_a = Vec::new();
        let mut cells_b = Vec::new();
        let mut centers_b = Vec::new();
        for (k, &i) in window.indices.iter().enumerate() {
            let c = window.centers[k];
            let region = if variant.all_region_b {
                Region::B
            } else {
                rings.classify(c[0], c[1])
            };
            match region {
                Region::A => cells_a.push(i),
                Region::B => {
                    cells_b.push(i);
                    centers_b.push(c);
                }
                Region::C => {}
            }
        }
        timer.lap(Step::ExtractXstar);
        let mut training_size = 0;
        let prediction = if cells_b.is_empty() {
            None
        } else if selected.is_empty() {
            warn!("frame {}: region B without ring samples, GP skipped", scan.frame_index);
            None
        } else {
            let model = gp::fit(&selected.x, &selected.y, params)?;
            training_size = model.len();
            timer.lap(Step::BuildGp);
            let pred = self.predict(&model, &centers_b);
            timer.lap(Step::Predict);
            Some(pred)
        };
        for &i in &cells_a {
            if cfg.region_a_overwrite {
                self.latent.mu[i] = cfg.region_a_mu;
                self.latent.var[i] = cfg.region_a_var;
            } else {
                (self.latent.mu[i], self.latent.var[i]) =
                    fuse(self.latent.mu[i], self.latent.var[i], cfg.region_a_mu, cfg.region_a_var);
            }
        }
        if let Some(pred) = &prediction {
            for (k, &i) in cells_b.iter().enumerate() {
                let v = pred.var[k].max(MIN_PREDICTED_VAR);
                (self.latent.mu[i], self.latent.var[i]) = fuse(self.latent.mu[i], self.latent.var[i], pred.mu[k], v);
            }
        }
        timer.lap(Step::Bcm);
        for &i in &cells_a {
            self.probability[i] = self.squash_cell(i);
        }
        if prediction.is_some() {
            for &i in &cells_b {
                self.probability[i] = self.squash_cell(i);
            }
        }
        timer.lap(Step::Squash);
        self.commit_params(params, fresh);
        self.frame_count += 1;
        timer.finish();
        Ok(FrameReport {
            updated: true,
            training_size,
            window_cells: window.len(),
            region_a: cells_a.len(),
            region_b: cells_b.len(),
            region_c: window.len() - cells_a.len() - cells_b.len(),
        })
    }

    pub fn update(&mut self, pipeline: Pipeline, scan: &LaserScan) -> Result<FrameReport> {
        match pipeline {
            Pipeline::Gpom => self.gpom_update(scan),
            Pipeline::FastGpom => self.fast_gpom_update(scan),
        }
    }

    pub fn update_timed<T: StepTimer>(
        &mut self,
        pipeline: Pipeline,
        scan: &LaserScan,
        timer: &mut T,
    ) -> Result<FrameReport> {
        match pipeline {
            Pipeline::Gpom => self.gpom_update_timed(scan, timer),
            Pipeline::FastGpom => self.fast_gpom_update_timed(scan, timer),
        }
    }
}

/// Probability of every cell, recomputed from the latent map.
pub fn squash_map(state: &MapperState) -> Vec<f64> {
    (0..state.latent.mu.len()).map(|i| state.squash_cell(i)).collect()
}

/// Feeds every frame of a log through one pipeline. Frames whose GP fit
/// fails are logged and skipped; the state is left as it was.
pub fn run_frames<'a>(
    state: &mut MapperState,
    pipeline: Pipeline,
    frames: impl IntoIterator<Item = &'a LaserScan>,
) -> Result<Vec<FrameReport>> {
    let mut reports = Vec::new();
    for scan in frames {
        match state.update(pipeline, scan) {
            Ok(r) => reports.push(r),
            Err(MappingError::Gp(e)) => {
                warn!("frame {}: {e}, skipped", scan.frame_index);
                reports.push(FrameReport::skipped(0));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(reports)
}
