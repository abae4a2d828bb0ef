//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use fastgpom::bench::{instrument, summarize, StepTimings, TimingSummary};
use fastgpom::eval::{make_pairs, roc_auc};
use fastgpom::gp::{self, KernelParams, Point};
use fastgpom::mapping::{bcm_fuse, MapperConfig, MapperState, Pipeline};
use fastgpom::sampling::{extract_rings, inference_window, Region};
use fastgpom::simulator::{
    generate_synthetic_world, interpolate_waypoints, raycast, read_scanlog_from, simulate_trajectory,
    write_scanlog_to, MapKind, ScanLog, ScannerSpec, SyntheticWorld,
};
use fastgpom::world::{CellState, GridMap, MapGeometry, Pose2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GP_ORACLE_TOL: f64 = 1e-8;
const GP_ORACLE_INSTANCES: usize = 100;
const GP_ORACLE_BUDGET: Duration = Duration::from_secs(5);
const MIN_FRAMES: usize = 50;
const PREDICT_SPEEDUP: f64 = 5.0;
const TOTAL_SPEEDUP: f64 = 3.0;
const MIN_AUC: f64 = 0.80;
const MAX_AUC_GAP: f64 = 0.07;
const MAX_UNKNOWN_DEVIATION: f64 = 0.05;
const D_SWEEP_SLACK: f64 = 0.02;
const FIT_SCALING: (f64, f64) = (4.0, 16.0);
const PREDICT_SCALING: (f64, f64) = (2.0, 8.0);
const ROOMS_BUDGET: Duration = Duration::from_secs(600);

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.random_range(-extent..extent), rng.random_range(-extent..extent)])
        .collect()
}

fn gp_oracle(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..GP_ORACLE_INSTANCES {
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=30);
        let p = KernelParams {
            lengthscale: rng.random_range(0.3..3.0),
            signal_std: rng.random_range(0.5..2.0),
            noise_std: rng.random_range(0.05..0.5),
        };
        let x = random_points(&mut rng, n, 3.0);
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let xs = random_points(&mut rng, m, 4.0);
        let pred = gp::fit(&x, &y, p).expect("fit").predict(&xs);
        let (mu, var) = common::direct_predict(&x, &y, &p, &xs);
        for j in 0..m {
            worst = worst.max((pred.mu[j] - mu[j]).abs()).max((pred.var[j] - var[j]).abs());
        }
    }
    let elapsed = start.elapsed();
    report.check(
        "gp_oracle_equivalence",
        worst <= GP_ORACLE_TOL && elapsed < GP_ORACLE_BUDGET,
        format!(
            "max |diff| {worst:.2e} (<= {GP_ORACLE_TOL:.0e}) over {GP_ORACLE_INSTANCES} instances in {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

fn rooms_scenario() -> (SyntheticWorld, ScanLog) {
    let world = generate_synthetic_world(MapKind::SimpleRooms, 200, 200, 0.05, 7).expect("rooms");
    let poses = interpolate_waypoints(&world.tour, 0.25).expect("tour");
    let log = simulate_trajectory(&world.map, &poses, &ScannerSpec::default(), 11).expect("simulate");
    (world, log)
}

fn auc_of(probs: &[f64], truth: &GridMap) -> f64 {
    roc_auc(&make_pairs(probs, truth).expect("pairs")).expect("roc").1
}

fn unknown_deviation(probs: &[f64], truth: &GridMap) -> f64 {
    let (sum, n) = probs
        .iter()
        .zip(&truth.cells)
        .filter(|(_, &c)| c == CellState::Unknown)
        .fold((0.0, 0usize), |(s, n), (&p, _)| (s + p, n + 1));
    (sum / n as f64 - 0.5).abs()
}

fn run_timed(pipeline: Pipeline, log: &ScanLog, map: &GridMap, cfg: &MapperConfig) -> (StepTimings, TimingSummary, Vec<f64>) {
    let (t, state) = instrument(pipeline, log, map.geometry, cfg).expect("instrument");
    let s = summarize(&t).expect("summary");
    (t, s, state.probability)
}

fn rooms(report: &mut Report) {
    let start = Instant::now();
    let (world, log) = rooms_scenario();
    let cfg = MapperConfig::default();
    let (tg, sg, pg) = run_timed(Pipeline::Gpom, &log, &world.map, &cfg);
    let (tf, sf, pf) = run_timed(Pipeline::FastGpom, &log, &world.map, &cfg);
    let frames = tg.records.len().min(tf.records.len());
    let mean = |s: &TimingSummary, k: &str| s.step(k).unwrap().mean;
    let predict_ratio = mean(&sg, "predict") / mean(&sf, "predict");
    let total_ratio = mean(&sg, "build_map_total") / mean(&sf, "build_map_total");
    let elapsed = start.elapsed();
    report.check(
        "speedup_direction",
        frames >= MIN_FRAMES
            && predict_ratio >= PREDICT_SPEEDUP
            && total_ratio >= TOTAL_SPEEDUP
            && elapsed < ROOMS_BUDGET,
        format!(
            "{frames} frames; predict {:.3} ms vs {:.3} ms ({predict_ratio:.1}x, need {PREDICT_SPEEDUP}x); \
             total {:.3} ms vs {:.3} ms ({total_ratio:.1}x, need {TOTAL_SPEEDUP}x); {:.1} s",
            mean(&sg, "predict"),
            mean(&sf, "predict"),
            mean(&sg, "build_map_total"),
            mean(&sf, "build_map_total"),
            elapsed.as_secs_f64()
        ),
    );
    let (ag, af) = (auc_of(&pg, &world.map), auc_of(&pf, &world.map));
    report.check(
        "map_quality_band",
        ag >= MIN_AUC && af >= MIN_AUC && (af - ag).abs() <= MAX_AUC_GAP,
        format!("auc gpom {ag:.4}, fast {af:.4}, gap {:.4} (min {MIN_AUC}, max gap {MAX_AUC_GAP})", (af - ag).abs()),
    );
    let (dg, df) = (unknown_deviation(&pg, &world.map), unknown_deviation(&pf, &world.map));
    report.check(
        "unknown_space_behavior",
        df <= MAX_UNKNOWN_DEVIATION && dg > df,
        format!("mean |p - 0.5| on unknown cells: fast {df:.4} (<= {MAX_UNKNOWN_DEVIATION}), gpom {dg:.4}"),
    );
}

fn d_sweep(report: &mut Report) {
    let world = generate_synthetic_world(MapKind::Corridor, 200, 200, 0.05, 5).expect("corridor");
    let poses = interpolate_waypoints(&world.tour, 0.25).expect("tour");
    let log = simulate_trajectory(&world.map, &poses, &ScannerSpec::default(), 3).expect("simulate");
    let auc_at = |d: f64| {
        let cfg = MapperConfig {
            d,
            ..MapperConfig::default()
        };
        let mut state = MapperState::new(world.map.geometry, cfg, log.spec.clone()).expect("state");
        fastgpom::mapping::run_frames(&mut state, Pipeline::FastGpom, &log.frames).expect("run");
        auc_of(&state.probability, &world.map)
    };
    let (fine, mid, coarse) = (auc_at(0.25), auc_at(0.5), auc_at(1.0));
    report.check(
        "d_sweep_ordering",
        fine >= coarse - D_SWEEP_SLACK,
        format!("corridor auc d=0.25 {fine:.4}, d=0.5 {mid:.4}, d=1.0 {coarse:.4}"),
    );
}

/// Region C conservation and variance monotonicity over a fast run.
fn fast_run_invariants() -> Result<String, String> {
    let (world, log) = rooms_scenario();
    let cfg = MapperConfig::default();
    let mut state = MapperState::new(world.map.geometry, cfg.clone(), log.spec.clone()).unwrap();
    let mut frames = 0;
    for scan in log.frames.iter().take(20) {
        let before = state.latent.clone();
        state.fast_gpom_update(scan).map_err(|e| e.to_string())?;
        let rings = extract_rings(scan, &log.spec, cfg.d, cfg.decimation);
        let window = inference_window(&scan.pose, cfg.window_width, cfg.window_height, &world.map.geometry);
        let mut in_ab = vec![false; before.mu.len()];
        for (k, &i) in window.indices.iter().enumerate() {
            let c = window.centers[k];
            in_ab[i] = rings.classify(c[0], c[1]) != Region::C;
        }
        for i in 0..before.mu.len() {
            let changed = before.mu[i].to_bits() != state.latent.mu[i].to_bits()
                || before.var[i].to_bits() != state.latent.var[i].to_bits();
            if changed && !in_ab[i] {
                return Err(format!("frame {}: cell {i} outside A and B changed", scan.frame_index));
            }
            if changed && !(state.latent.var[i] < before.var[i]) {
                return Err(format!("frame {}: cell {i} variance did not drop", scan.frame_index));
            }
        }
        frames += 1;
    }
    Ok(format!("{frames} frames"))
}

fn bcm_associativity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let mut g = || (rng.random_range(-3.0..3.0), rng.random_range(1e-3..1e3));
        let (a, b, c) = (g(), g(), g());
        let ab = bcm_fuse(a.0, a.1, b.0, b.1).unwrap();
        let l = bcm_fuse(ab.0, ab.1, c.0, c.1).unwrap();
        let bc = bcm_fuse(b.0, b.1, c.0, c.1).unwrap();
        let r = bcm_fuse(a.0, a.1, bc.0, bc.1).unwrap();
        if (l.0 - r.0).abs() > 1e-9 || (l.1 - r.1).abs() > 1e-9 {
            return Err(format!("{a:?} {b:?} {c:?}: {l:?} vs {r:?}"));
        }
    }
    Ok("10000 triples".into())
}

fn auc_rank_statistic() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let n = rng.random_range(2..=200);
        // coarse levels force ties
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 / 11.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let pairs = fastgpom::eval::LabeledPairs::new(probs.clone(), labels.clone()).unwrap();
        let (_, auc) = roc_auc(&pairs).map_err(|e| e.to_string())?;
        worst = worst.max((auc - common::brute_auc(&probs, &labels)).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max diff {worst:.1e}"))
    } else {
        Err(format!("max diff {worst:.1e}"))
    }
}

fn round_trips() -> Result<String, String> {
    let world = generate_synthetic_world(MapKind::SparseObstacles, 120, 90, 0.05, 4).unwrap();
    let pgm = world.map.encode_pgm();
    let back = GridMap::decode_pgm(&pgm, 0.05, Pose2D::origin()).map_err(|e| e.to_string())?;
    if back != world.map {
        return Err("pgm round trip changed the map".into());
    }
    let poses = interpolate_waypoints(&world.tour, 0.5).unwrap();
    let log = simulate_trajectory(&world.map, &poses, &ScannerSpec::default(), 1).unwrap();
    let mut buf = Vec::new();
    write_scanlog_to(&log, &mut buf).map_err(|e| e.to_string())?;
    let parsed = read_scanlog_from(&buf[..]).map_err(|e| e.to_string())?;
    if parsed != log {
        return Err("scan log round trip changed the log".into());
    }
    Ok(format!("pgm {} bytes, scan log {} frames", pgm.len(), log.frames.len()))
}

fn raycast_oracle() -> Result<String, String> {
    // closed room: free interior cells, one-cell walls all around
    let res = 0.05;
    let g = MapGeometry::new(120, 80, res, Pose2D::origin()).unwrap();
    let mut map = GridMap::filled(g, CellState::Occupied);
    map.fill_rect(1, 1, 118, 78, CellState::Free);
    let spec = ScannerSpec {
        beam_count: 360,
        angle_min: -std::f64::consts::PI,
        angle_max: std::f64::consts::PI * (1.0 - 2.0 / 360.0),
        noise_std: 0.0,
        ..ScannerSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let pose = Pose2D::new(rng.random_range(0.1..5.9), rng.random_range(0.1..3.9), rng.random_range(-3.0..3.0));
        let scan = raycast(&map, pose, &spec, 0).map_err(|e| e.to_string())?;
        for (i, &r) in scan.ranges.iter().enumerate() {
            let a = pose.theta + spec.beam_offset(i);
            let truth = common::distance_to_box(pose.x, pose.y, a, res, res, 119.0 * res, 79.0 * res);
            worst = worst.max((r - truth).abs());
            if !scan.hits[i] {
                return Err(format!("beam {i} missed a closed room"));
            }
        }
    }
    if worst <= res * 2f64.sqrt() {
        Ok(format!("max error {worst:.4} m"))
    } else {
        Err(format!("max error {worst:.4} m"))
    }
}

fn determinism() -> Result<String, String> {
    let run = || {
        let world = generate_synthetic_world(MapKind::Corridor, 100, 100, 0.05, 9).unwrap();
        let poses = interpolate_waypoints(&world.tour, 0.5).unwrap();
        let log = simulate_trajectory(&world.map, &poses, &ScannerSpec::default(), 2).unwrap();
        let mut bytes = world.map.encode_pgm();
        write_scanlog_to(&log, &mut bytes).unwrap();
        for pipeline in [Pipeline::Gpom, Pipeline::FastGpom] {
            let cfg = MapperConfig {
                parallel: pipeline == Pipeline::Gpom,
                ..MapperConfig::default()
            };
            let mut state = MapperState::new(world.map.geometry, cfg, log.spec.clone()).unwrap();
            fastgpom::mapping::run_frames(&mut state, pipeline, &log.frames).unwrap();
            for v in state.latent.mu.iter().chain(&state.latent.var).chain(&state.probability) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    };
    let (a, b) = (run(), run());
    if a == b {
        Ok(format!("{} bytes identical", a.len()))
    } else {
        Err("reruns differ".into())
    }
}

fn properties(report: &mut Report) {
    let suites: [(&str, fn() -> Result<String, String>); 6] = [
        ("region_c_and_variance", fast_run_invariants),
        ("bcm_associativity", bcm_associativity),
        ("auc_rank_statistic", auc_rank_statistic),
        ("round_trips", round_trips),
        ("raycast_oracle", raycast_oracle),
        ("determinism", determinism),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, f) in suites {
        match f() {
            Ok(d) => details.push(format!("{name} ok ({d})")),
            Err(e) => {
                ok = false;
                details.push(format!("{name} FAILED ({e})"));
            }
        }
    }
    report.check("property_suites", ok, details.join("; "));
}

fn median_time(mut f: impl FnMut(), reps: usize) -> f64 {
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[reps / 2]
}

fn scaling(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = KernelParams {
        lengthscale: 0.5,
        signal_std: 1.0,
        noise_std: 0.1,
    };
    let xs = random_points(&mut rng, 2000, 5.0);
    let (n1, n2) = (500, 1000);
    let x2 = random_points(&mut rng, n2, 5.0);
    let y2: Vec<f64> = (0..n2).map(|_| if rng.random_bool(0.3) { 1.0 } else { -1.0 }).collect();
    let (x1, y1) = (&x2[..n1], &y2[..n1]);
    let fit1 = median_time(|| drop(gp::fit(x1, y1, p).unwrap()), 7);
    let fit2 = median_time(|| drop(gp::fit(&x2, &y2, p).unwrap()), 7);
    let m1 = gp::fit(x1, y1, p).unwrap();
    let m2 = gp::fit(&x2, &y2, p).unwrap();
    let pr1 = median_time(|| drop(m1.predict(&xs)), 7);
    let pr2 = median_time(|| drop(m2.predict(&xs)), 7);
    let (rf, rp) = (fit2 / fit1, pr2 / pr1);
    report.check(
        "complexity_scaling",
        (FIT_SCALING.0..=FIT_SCALING.1).contains(&rf) && (PREDICT_SCALING.0..=PREDICT_SCALING.1).contains(&rp),
        format!(
            "n {n1} -> {n2}, m {}: fit x{rf:.2} (need {}-{}), predict x{rp:.2} (need {}-{})",
            xs.len(),
            FIT_SCALING.0,
            FIT_SCALING.1,
            PREDICT_SCALING.0,
            PREDICT_SCALING.1
        ),
    );
}

fn main() {
    let mut report = Report { failed: 0 };
    gp_oracle(&mut report);
    rooms(&mut report);
    d_sweep(&mut report);
    properties(&mut report);
    scaling(&mut report);
    if report.failed > 0 {
        println!("{} criteria failed", report.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
