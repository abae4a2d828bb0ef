mod config;
mod latent;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use fastgpom::bench::{self, StepTimings, TimingSummary};
use fastgpom::eval;
use fastgpom::mapping::{MapperConfig, MapperState, Pipeline};
use fastgpom::simulator::{
    generate_synthetic_world, interpolate_waypoints, read_scanlog, simulate_trajectory, write_scanlog, MapKind,
    ScanLog,
};
use fastgpom::world::{load_pgm, render_probability_png, save_pgm, GridMap, Pose2D};

use config::RunConfig;
use latent::LatentDump;

#[derive(Parser)]
#[command(name = "fastgpom", version, about = "GPOM and Fast-GPOM occupancy mapping on synthetic 2D worlds")]
struct Cli {
    /// TOML run configuration with [scanner], [mapper], [simulation] and [output] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth map (PGM plus a .meta sidecar).
    GenMap(GenMapArgs),
    /// Simulate laser scans along a trajectory through a map.
    Simulate(SimulateArgs),
    /// Build an occupancy map from a scan log.
    Build(BuildArgs),
    /// Score probability maps against a ground-truth map.
    Eval(EvalArgs),
    /// Time both pipelines step by step on a scan log.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenMapArgs {
    #[arg(long)]
    kind: Option<MapKind>,
    /// Width in cells (also the height unless --height is given).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Meters per cell.
    #[arg(long)]
    res: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Ground-truth PGM.
    #[arg(long)]
    map: PathBuf,
    /// Sidecar written by gen-map; defaults to the map path with a .meta extension.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    res: Option<f64>,
    /// Waypoints in meters, `x,y;x,y;...`.
    #[arg(long, conflicts_with = "poses")]
    waypoints: Option<String>,
    /// Text file with one `x y theta` pose per line.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Arc-length spacing of poses along the waypoints, in meters.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output scan log (JSON lines).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Gpom,
    #[value(alias = "fast_gpom")]
    Fast,
}

impl From<Algo> for Pipeline {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Gpom => Pipeline::Gpom,
            Algo::Fast => Pipeline::FastGpom,
        }
    }
}

#[derive(Args)]
struct MappingArgs {
    /// Scan log from `simulate`.
    #[arg(long)]
    log: PathBuf,
    /// Ground-truth PGM; fixes the map size.
    #[arg(long)]
    map: PathBuf,
    /// Free-sample spacing along each beam, in meters.
    #[arg(long)]
    d: Option<f64>,
    /// Worker threads for prediction; 1 keeps timings single threaded.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    #[command(flatten)]
    common: MappingArgs,
    /// Stem of the output files; defaults to the algorithm name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth PGM.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    res: Option<f64>,
    /// Latent dumps to score, as `name=path` or just `path`.
    #[arg(required = true)]
    maps: Vec<String>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: MappingArgs,
    /// Map label used in the table columns; defaults to the map file stem.
    #[arg(long)]
    label: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenMap(a) => gen_map(&cfg, a),
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Build(a) => build(&cfg, a),
        Command::Eval(a) => evaluate(&cfg, a),
        Command::Bench(a) => run_bench(&cfg, a),
    }
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag.unwrap_or_else(|| cfg.output.directory.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// `key=value` sidecar next to a generated map.
#[derive(Debug, Default)]
struct Meta(BTreeMap<String, String>);

impl Meta {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| v.parse().map_err(|_| anyhow::anyhow!("bad {key} value {v:?} in map metadata")))
            .transpose()
    }

    fn origin(&self) -> Result<Pose2D> {
        let x = self.num("origin_x")?.unwrap_or(0.0);
        let y = self.num("origin_y")?.unwrap_or(0.0);
        Ok(Pose2D::new(x, y, 0.0))
    }
}

fn meta_path(map: &Path) -> PathBuf {
    map.with_extension("meta")
}

fn load_meta(map: &Path, explicit: Option<&Path>) -> Result<Meta> {
    match explicit {
        Some(p) => Meta::read(p),
        None if meta_path(map).exists() => Meta::read(&meta_path(map)),
        None => Ok(Meta::default()),
    }
}

fn parse_waypoints(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (x, y) = pair
                .split_once(',')
                .with_context(|| format!("waypoint {pair:?} should be `x,y`"))?;
            Ok((x.trim().parse()?, y.trim().parse()?))
        })
        .collect()
}

fn format_waypoints(points: &[(f64, f64)]) -> String {
    points.iter().map(|(x, y)| format!("{x},{y}")).collect::<Vec<_>>().join(";")
}

fn read_pose_file(path: &Path) -> Result<Vec<Pose2D>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), i + 1))?;
        ensure!(v.len() == 3, "{}:{}: expected `x y theta`", path.display(), i + 1);
        poses.push(Pose2D::new(v[0], v[1], v[2]));
    }
    Ok(poses)
}

fn gen_map(cfg: &RunConfig, a: GenMapArgs) -> Result<()> {
    let sim = &cfg.simulation;
    let kind = match a.kind {
        Some(k) => k,
        None => sim.kind.parse().map_err(anyhow::Error::msg)?,
    };
    let width = a.size.unwrap_or(sim.size);
    let height = a.height.or(sim.height).unwrap_or(width);
    let res = a.res.unwrap_or(sim.resolution);
    let seed = a.seed.unwrap_or(sim.seed);
    let world = generate_synthetic_world(kind, width, height, res, seed)?;
    let dir = out_dir(cfg, a.out)?;
    let pgm = dir.join(format!("{kind}.pgm"));
    save_pgm(&world.map, &pgm)?;
    let o = world.map.geometry.origin;
    let meta = format!(
        "kind={kind}\nwidth={width}\nheight={height}\nresolution={res}\nseed={seed}\norigin_x={}\norigin_y={}\ntour={}\n",
        o.x,
        o.y,
        format_waypoints(&world.tour)
    );
    fs::write(meta_path(&pgm), meta)?;
    info!("wrote {}", pgm.display());
    Ok(())
}

fn simulate(cfg: &RunConfig, a: SimulateArgs) -> Result<()> {
    let sim = &cfg.simulation;
    let meta = load_meta(&a.map, a.meta.as_deref())?;
    let res = match a.res {
        Some(r) => r,
        None => meta.num("resolution")?.unwrap_or(sim.resolution),
    };
    let map = load_pgm(&a.map, res, meta.origin()?)?;
    let step = a.step.unwrap_or(sim.step);
    let poses = if let Some(w) = &a.waypoints {
        interpolate_waypoints(&parse_waypoints(w)?, step)?
    } else if let Some(p) = &a.poses {
        read_pose_file(p)?
    } else if let Some(w) = &sim.waypoints {
        let w: Vec<(f64, f64)> = w.iter().map(|p| (p[0], p[1])).collect();
        interpolate_waypoints(&w, step)?
    } else if let Some(p) = &sim.pose_file {
        read_pose_file(p)?
    } else if let Some(t) = meta.0.get("tour") {
        interpolate_waypoints(&parse_waypoints(t)?, step)?
    } else {
        bail!("no trajectory: pass --waypoints or --poses, or use a map with a generated tour");
    };
    let seed = a.seed.unwrap_or(sim.seed);
    let log = simulate_trajectory(&map, &poses, &cfg.scanner, seed)?;
    let out = match a.out {
        Some(p) => p,
        None => out_dir(cfg, None)?.join("scans.jsonl"),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_scanlog(&log, &out)?;
    info!("wrote {} frames to {}", log.frames.len(), out.display());
    Ok(())
}

struct MappingInput {
    log: ScanLog,
    truth: GridMap,
    config: MapperConfig,
    dir: PathBuf,
    label: String,
}

fn mapping_input(cfg: &RunConfig, a: MappingArgs) -> Result<MappingInput> {
    let log = read_scanlog(&a.log)?;
    ensure!(!log.frames.is_empty(), "scan log {} has no frames", a.log.display());
    let meta = load_meta(&a.map, None)?;
    if let Some(r) = meta.num::<f64>("resolution")? {
        ensure!(
            (r - log.map_resolution).abs() <= 1e-12 * r,
            "map resolution {r} does not match the scan log's {}",
            log.map_resolution
        );
    }
    let truth = load_pgm(&a.map, log.map_resolution, meta.origin()?)?;
    let mut config = cfg.mapper.clone();
    if let Some(d) = a.d {
        config.d = d;
    }
    ensure!(a.threads >= 1, "--threads must be at least 1");
    config.parallel = a.threads > 1;
    if config.parallel {
        rayon::ThreadPoolBuilder::new()
            .num_threads(a.threads)
            .build_global()
            .context("starting worker threads")?;
    }
    let label = a
        .map
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "map".into());
    let dir = out_dir(cfg, a.out)?;
    Ok(MappingInput {
        log,
        truth,
        config,
        dir,
        label,
    })
}

fn timed_run(input: &MappingInput, pipeline: Pipeline) -> Result<(StepTimings, TimingSummary, MapperState)> {
    let (timings, state) = bench::instrument(pipeline, &input.log, input.truth.geometry, &input.config)?;
    let summary = bench::summarize(&timings)?;
    info!(
        "{}: {} frames mapped, {} excluded, mean total {:.3} ms",
        pipeline.name(),
        timings.records.len(),
        timings.excluded.len(),
        summary.step("build_map_total").map_or(0.0, |s| s.mean)
    );
    Ok((timings, summary, state))
}

fn build(cfg: &RunConfig, a: BuildArgs) -> Result<()> {
    let input = mapping_input(cfg, a.common)?;
    let pipeline = Pipeline::from(a.algo);
    let (timings, summary, state) = timed_run(&input, pipeline)?;
    let name = a.name.unwrap_or_else(|| pipeline.name().to_string());
    let dir = &input.dir;
    let g = state.latent.geometry;
    render_probability_png(&g, &state.probability, dir.join(format!("{name}.png")))?;
    let dump = LatentDump {
        width: g.width,
        height: g.height,
        resolution: g.resolution,
        mu: state.latent.mu,
        var: state.latent.var,
        prob: state.probability,
    };
    fs::write(dir.join(format!("{name}.latent")), dump.encode())?;
    let column = format!("{}/{}", pipeline.name(), input.label);
    bench::write_table(&[(column, summary.clone())], &timings.mode_label(), dir.join(format!("{name}_timing.csv")))?;
    fs::write(dir.join(format!("{name}_summary.csv")), bench::format_summary(&summary))?;
    bench::write_histogram(&timings, dir.join(format!("{name}_frames.csv")))?;
    Ok(())
}

fn evaluate(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let meta = load_meta(&a.truth, None)?;
    let res = match a.res {
        Some(r) => r,
        None => meta.num("resolution")?.unwrap_or(cfg.simulation.resolution),
    };
    let truth = load_pgm(&a.truth, res, meta.origin()?)?;
    let mut maps = Vec::new();
    for spec in &a.maps {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, p)
            }
        };
        let dump = LatentDump::read(&path)?;
        ensure!(
            dump.width == truth.width() && dump.height == truth.height(),
            "{} is {}x{}, truth is {}x{}",
            path.display(),
            dump.width,
            dump.height,
            truth.width(),
            truth.height()
        );
        ensure!(
            (dump.resolution - res).abs() <= 1e-12 * res,
            "{} has resolution {}, truth has {res}",
            path.display(),
            dump.resolution
        );
        maps.push((name, dump.prob));
    }
    let rows = eval::auc_report(&maps, &truth)?;
    let dir = out_dir(cfg, a.out)?;
    fs::write(dir.join("auc.csv"), eval::format_report(&rows))?;
    let mut sorted: Vec<&(String, Vec<f64>)> = maps.iter().collect();
    sorted.sort_by(|x, y| x.0.cmp(&y.0));
    let mut roc = String::from("name,threshold,fpr,tpr\n");
    for (name, probs) in sorted {
        let (curve, _) = eval::roc_auc(&eval::make_pairs(probs, &truth)?)?;
        roc.push_str(&eval::format_roc(name, &curve));
    }
    fs::write(dir.join("roc.csv"), roc)?;
    for r in &rows {
        println!("{} auc {:.6} over {} cells", r.name, r.auc, r.cells);
    }
    Ok(())
}

fn run_bench(cfg: &RunConfig, a: BenchArgs) -> Result<()> {
    let label_flag = a.label;
    let input = mapping_input(cfg, a.common)?;
    let label = label_flag.unwrap_or_else(|| input.label.clone());
    let mut columns = Vec::new();
    let mut frames = String::new();
    let mut mode = String::new();
    for pipeline in [Pipeline::Gpom, Pipeline::FastGpom] {
        let (timings, summary, _) = timed_run(&input, pipeline)?;
        let hist = bench::format_histogram(&timings);
        if frames.is_empty() {
            frames = hist;
        } else {
            frames.extend(hist.lines().skip(2).map(|l| format!("{l}\n")));
        }
        mode = timings.mode_label();
        fs::write(
            input.dir.join(format!("bench_{}_summary.csv", pipeline.name())),
            bench::format_summary(&summary),
        )?;
        columns.push((format!("{}/{label}", pipeline.name()), summary));
    }
    bench::write_table(&columns, &mode, input.dir.join("bench_table.csv"))?;
    fs::write(input.dir.join("bench_frames.csv"), frames)?;
    print!("{}", bench::format_table(&columns, &mode));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waypoint_text_round_trip() {
        let w = vec![(1.0, 2.5), (-0.125, 3.0)];
        assert_eq!(parse_waypoints(&format_waypoints(&w)).unwrap(), w);
        assert!(parse_waypoints("1.0;2.0").is_err());
    }
}
