//! Wall-clock timing of the individual pipeline steps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::warn;
use thiserror::Error;

use crate::mapping::{MapperConfig, MapperState, MappingError, Pipeline};
use crate::simulator::ScanLog;
use crate::world::MapGeometry;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no timed frames")]
    EmptyTimings,
    #[error("dataset has no frames")]
    EmptyDataset,
    #[error("malformed timing table: {0}")]
    Parse(String),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Pipeline steps a timer can be told about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    ExtractXy,
    /// One-off kernel fit; reported but kept out of the frame total.
    Hyperparams,
    ExtractXstar,
    BuildGp,
    Predict,
    Bcm,
    Squash,
}

/// Receives step boundaries from the mapping pipelines.
pub trait StepTimer {
    fn begin(&mut self);
    /// Attributes the time since the previous boundary to `step`.
    fn lap(&mut self, step: Step);
    fn finish(&mut self);
}

/// Timer that does nothing.
pub struct NoTimer;

impl StepTimer for NoTimer {
    #[inline(always)]
    fn begin(&mut self) {}
    #[inline(always)]
    fn lap(&mut self, _: Step) {}
    #[inline(always)]
    fn finish(&mut self) {}
}

/// Durations of one frame, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameTimings {
    pub frame_index: usize,
    pub extract_xy: f64,
    pub extract_xstar: f64,
    pub build_gp: f64,
    pub predict: f64,
    pub bcm: f64,
    pub squash: f64,
    pub build_map_total: f64,
    pub hyperparams: f64,
}

/// Names of the summarized columns, in table order.
pub const STEP_NAMES: [&str; 7] = [
    "extract_xy",
    "extract_xstar",
    "build_gp",
    "predict",
    "bcm",
    "squash",
    "build_map_total",
];

impl FrameTimings {
    pub fn values(&self) -> [f64; 7] {
        [
            self.extract_xy,
            self.extract_xstar,
            self.build_gp,
            self.predict,
            self.bcm,
            self.squash,
            self.build_map_total,
        ]
    }
}

/// Monotonic-clock timer that fills a [`FrameTimings`].
pub struct WallTimer {
    start: Instant,
    last: Instant,
    current: FrameTimings,
}

impl Default for WallTimer {
    fn default() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            current: FrameTimings::default(),
        }
    }
}

fn ms(from: Instant, to: Instant) -> f64 {
    // microsecond resolution
    (to - from).as_micros() as f64 / 1000.0
}

impl WallTimer {
    pub fn new() -> Self {
        Self::default()
    }

    /// The record of the last finished frame.
    pub fn record(&self) -> FrameTimings {
        self.current
    }
}

impl StepTimer for WallTimer {
    fn begin(&mut self) {
        self.current = FrameTimings::default();
        self.start = Instant::now();
        self.last = self.start;
    }

    fn lap(&mut self, step: Step) {
        let now = Instant::now();
        let dt = ms(self.last, now);
        self.last = now;
        let c = &mut self.current;
        let slot = match step {
            Step::ExtractXy => &mut c.extract_xy,
            Step::Hyperparams => &mut c.hyperparams,
            Step::ExtractXstar => &mut c.extract_xstar,
            Step::BuildGp => &mut c.build_gp,
            Step::Predict => &mut c.predict,
            Step::Bcm => &mut c.bcm,
            Step::Squash => &mut c.squash,
        };
        *slot += dt;
    }

    fn finish(&mut self) {
        let total = ms(self.start, Instant::now()) - self.current.hyperparams;
        self.current.build_map_total = total.max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTimings {
    pub pipeline: Pipeline,
    pub records: Vec<FrameTimings>,
    /// Frames that failed or had nothing to map.
    pub excluded: Vec<usize>,
    /// Worker threads used during prediction; 1 when single threaded.
    pub threads: usize,
}

impl StepTimings {
    /// Metadata line placed at the top of the CSV outputs.
    pub fn mode_label(&self) -> String {
        if self.threads <= 1 {
            "mode=single_thread".to_string()
        } else {
            format!("mode=parallel threads={}", self.threads)
        }
    }
}

/// Runs a pipeline over every frame of `log`, timing each step. Returns the
/// timings and the final mapper state.
pub fn instrument(
    pipeline: Pipeline,
    log: &ScanLog,
    geometry: MapGeometry,
    config: &MapperConfig,
) -> Result<(StepTimings, MapperState)> {
    if log.frames.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    let mut state = MapperState::new(geometry, config.clone(), log.spec.clone())?;
    let mut timer = WallTimer::new();
    let mut timings = StepTimings {
        pipeline,
        records: Vec::with_capacity(log.frames.len()),
        excluded: Vec::new(),
        threads: if config.parallel { rayon::current_num_threads() } else { 1 },
    };
    for scan in &log.frames {
        match state.update_timed(pipeline, scan, &mut timer) {
            Ok(report) if report.updated => {
                let mut rec = timer.record();
                rec.frame_index = scan.frame_index;
                timings.records.push(rec);
            }
            Ok(_) => timings.excluded.push(scan.frame_index),
            Err(MappingError::Gp(e)) => {
                warn!("frame {}: {e}, excluded from timings", scan.frame_index);
                timings.excluded.push(scan.frame_index);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((timings, state))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

fn stats(values: &mut [f64]) -> Stats {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    // nearest rank
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Stats {
        mean,
        median,
        p95: values[rank - 1],
        min: values[0],
        max: values[n - 1],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSummary {
    pub frames: usize,
    /// One entry per name in [`STEP_NAMES`].
    pub steps: [Stats; 7],
}

impl TimingSummary {
    pub fn step(&self, name: &str) -> Option<&Stats> {
        STEP_NAMES.iter().position(|&n| n == name).map(|i| &self.steps[i])
    }
}

pub fn summarize(timings: &StepTimings) -> Result<TimingSummary> {
    if timings.records.is_empty() {
        return Err(BenchError::EmptyTimings);
    }
    let steps = std::array::from_fn(|k| {
        let mut col: Vec<f64> = timings.records.iter().map(|r| r.values()[k]).collect();
        stats(&mut col)
    });
    Ok(TimingSummary {
        frames: timings.records.len(),
        steps,
    })
}

/// Mean-per-step table: one row per step, one column per labeled run.
pub fn format_table(runs: &[(String, TimingSummary)], meta: &str) -> String {
    let mut out = format!("# {meta}\nstep");
    for (label, _) in runs {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (k, name) in STEP_NAMES.iter().enumerate() {
        out.push_str(name);
        for (_, s) in runs {
            let _ = write!(out, ",{:.3}", s.steps[k].mean);
        }
        out.push('\n');
    }
    out
}

pub fn write_table(runs: &[(String, TimingSummary)], meta: &str, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_table(runs, meta))?;
    Ok(())
}

/// Parsed mean-per-step table: column labels and, per label, the means in
/// [`STEP_NAMES`] order.
pub fn parse_table(text: &str) -> Result<Vec<(String, [f64; 7])>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| BenchError::Parse("missing header".into()))?;
    let labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let mut cols = vec![[0.0; 7]; labels.len()];
    for (k, name) in STEP_NAMES.iter().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| BenchError::Parse(format!("missing row {name}")))?;
        let mut fields = line.split(',');
        if fields.next() != Some(name) {
            return Err(BenchError::Parse(format!("expected row {name}, got {line:?}")));
        }
        for (c, col) in cols.iter_mut().enumerate() {
            let f = fields
                .next()
                .ok_or_else(|| BenchError::Parse(format!("row {name}: missing column {c}")))?;
            col[k] = f
                .parse()
                .map_err(|_| BenchError::Parse(format!("row {name}: bad number {f:?}")))?;
        }
    }
    Ok(labels.into_iter().zip(cols).collect())
}

/// Full statistics per step with exact float formatting.
pub fn format_summary(s: &TimingSummary) -> String {
    let mut out = format!("frames,{}\nstep,mean,median,p95,min,max\n", s.frames);
    for (name, st) in STEP_NAMES.iter().zip(&s.steps) {
        let _ = writeln!(out, "{name},{},{},{},{},{}", st.mean, st.median, st.p95, st.min, st.max);
    }
    out
}

pub fn parse_summary(text: &str) -> Result<TimingSummary> {
    let bad = |m: String| BenchError::Parse(m);
    let mut lines = text.lines();
    let frames = lines
        .next()
        .and_then(|l| l.strip_prefix("frames,"))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing frame count".into()))?;
    if lines.next() != Some("step,mean,median,p95,min,max") {
        return Err(bad("missing column header".into()));
    }
    let mut steps = [Stats {
        mean: 0.0,
        median: 0.0,
        p95: 0.0,
        min: 0.0,
        max: 0.0,
    }; 7];
    for (k, name) in STEP_NAMES.iter().enumerate() {
        let line = lines.next().ok_or_else(|| bad(format!("missing row {name}")))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 || f[0] != *name {
            return Err(bad(format!("bad row {line:?}")));
        }
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|x| x.parse().map_err(|_| bad(format!("bad number {x:?}"))))
            .collect::<Result<_>>()?;
        steps[k] = Stats {
            mean: v[0],
            median: v[1],
            p95: v[2],
            min: v[3],
            max: v[4],
        };
    }
    Ok(TimingSummary { frames, steps })
}

/// Per-frame totals for plotting a histogram.
pub fn format_histogram(timings: &StepTimings) -> String {
    let mut out = format!("# {}\npipeline,frame_index,build_map_total_ms\n", timings.mode_label());
    for r in &timings.records {
        let _ = writeln!(out, "{},{},{:.3}", timings.pipeline.name(), r.frame_index, r.build_map_total);
    }
    out
}

pub fn write_histogram(timings: &StepTimings, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_histogram(timings))?;
    Ok(())
}
