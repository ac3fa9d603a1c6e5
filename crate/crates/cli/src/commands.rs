use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use embodied_core::adaptive::{select_endpoint, select_from_waypoints, AdaptiveConfig, WaypointState};
use embodied_core::approx::{Benchmark, BenchmarkCase, Block, DEFAULT_THRESHOLD};
use embodied_core::controller::{
    default_seed, simulate_tracking, state_at_pose, ControlError, ControlGains, ExactController, SimulationConfig,
    MIN_CONTROL_HZ,
};
use embodied_core::dynamics::oracle::run_checks;
use embodied_core::dynamics::{TaskDim, TaskSpace};
use embodied_core::pipeline::{frame_series, simulate, summarize, AdaptiveSchedule, Feedback, PipelineConfig, Schedule};
use embodied_core::trajectory::{extract_waypoints, fit_cubic, read_samples, CubicTrajectory};
use embodied_core::{load_model, ModelError, RobotModel};
use nalgebra::{Vector3, Vector6};

use crate::manifest::{write_atomic, RunManifest};
use crate::{check, usage, AdaptArgs, ApproxSweepArgs, Cli, Command, DynamicsCheckArgs, Failure, PipelineArgs, TrackArgs};

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display())).map_err(usage)?;
    let out = Output { dir: cli.out.clone(), written: Vec::new() };
    let (name, result) = match &cli.command {
        Command::DynamicsCheck(a) => ("dynamics-check", dynamics_check(cli, a, out)),
        Command::Track(a) => ("track", track(cli, a, out)),
        Command::Adapt(a) => ("adapt", adapt(cli, a, out)),
        Command::Pipeline(a) => ("pipeline", pipeline(cli, a, out)),
        Command::ApproxSweep(a) => ("approx-sweep", approx_sweep(cli, a, out)),
    };
    let (outputs, status) = match result {
        Ok(outputs) => (outputs, Ok(())),
        Err((outputs, failure)) => (outputs, Err(failure)),
    };
    RunManifest::new(name, cli.seed, outputs).write(&cli.out).map_err(usage)?;
    status
}

type Written = Result<Vec<String>, (Vec<String>, Failure)>;

struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), bytes).map_err(usage)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(usage)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(self, result: Outcome) -> Written {
        match result {
            Ok(()) => Ok(self.written),
            Err(f) => Err((self.written, f)),
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T, Failure> {
    match &cli.config {
        None => Ok(T::default()),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(usage)
        }
    }
}

fn model_from(path: &Path) -> Result<RobotModel, Failure> {
    load_model(path).map_err(|e| match e {
        ModelError::Invalid(_) | ModelError::InvalidJoint { .. } => {
            check(anyhow!("model validation failed for {}: {e}", path.display()))
        }
        other => usage(anyhow!("cannot load model {}: {other}", path.display())),
    })
}

fn trajectory_from(path: &Path) -> Result<CubicTrajectory, Failure> {
    let samples = read_samples(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    let fit = fit_cubic(&samples).with_context(|| format!("fitting {}", path.display())).map_err(usage)?;
    Ok(fit.trajectory)
}

fn task_space(dims: Option<&[String]>, model: &RobotModel) -> Result<TaskSpace, Failure> {
    let Some(names) = dims else { return Ok(TaskSpace::default_for(model.dof())) };
    let dims = names
        .iter()
        .map(|n| {
            serde_json::from_value::<TaskDim>(serde_json::Value::String(n.trim().to_lowercase()))
                .map_err(|_| usage(anyhow!("unknown task coordinate `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if dims.is_empty() {
        return Err(usage(anyhow!("at least one task coordinate is required")));
    }
    Ok(TaskSpace::from_dims(&dims))
}

fn check_rate(hz: f64) -> Result<(), Failure> {
    if !(hz.is_finite() && hz >= MIN_CONTROL_HZ) {
        return Err(usage(anyhow!("control rate {hz} Hz is below the minimum of {MIN_CONTROL_HZ} Hz")));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DynamicsCheckConfig {
    configurations: usize,
    seed: u64,
}

impl Default for DynamicsCheckConfig {
    fn default() -> Self {
        Self { configurations: 1000, seed: 0 }
    }
}

fn dynamics_check(cli: &Cli, args: &DynamicsCheckArgs, mut out: Output) -> Written {
    let result = (|| {
        let cfg: DynamicsCheckConfig = load_config(cli)?;
        let model = model_from(&args.model)?;
        let count = args.configs.unwrap_or(cfg.configurations);
        let seed = cli.seed.unwrap_or(cfg.seed);
        let report = run_checks(&model, seed, count).map_err(check)?;
        out.json("report.json", &report)?;
        println!(
            "jacobian_rel={:.3e} mass_rel={:.3e} bias_abs={:.3e} asymmetry={:.3e} min_eig={:.3e}",
            report.jacobian_max_rel_error,
            report.mass_max_rel_error,
            report.bias_max_abs_error,
            report.mass_max_asymmetry,
            report.mass_min_eigenvalue
        );
        if report.passed() {
            println!("PASS {} configurations", report.configurations);
            Ok(())
        } else {
            Err(check(anyhow!("failed checks: {}", report.failures.join(", "))))
        }
    })();
    out.finish(result)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrackConfig {
    hz: f64,
    gains: ControlGains,
    task_dims: Option<Vec<String>>,
    start_offset: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { hz: 1000.0, gains: ControlGains::default(), task_dims: None, start_offset: 0.0 }
    }
}

#[derive(Debug, Serialize)]
struct TrackSummary {
    model: String,
    hz: f64,
    cycles: usize,
    rmse: f64,
    max_error: f64,
}

fn initial_state(
    model: &RobotModel,
    task: &TaskSpace,
    traj: &CubicTrajectory,
    offset: f64,
) -> Result<embodied_core::JointState, Failure> {
    let start = traj.pose_at(0.0).map_err(usage)?;
    let shift = Vector6::new(offset, 0.0, 0.0, 0.0, 0.0, 0.0);
    state_at_pose(model, task, &start, &shift, &default_seed(model))
        .map_err(|e| usage(anyhow!("no initial configuration reaches the trajectory start: {e}")))
}

fn track(cli: &Cli, args: &TrackArgs, mut out: Output) -> Written {
    let result = (|| {
        let cfg: TrackConfig = load_config(cli)?;
        let hz = args.hz.unwrap_or(cfg.hz);
        check_rate(hz)?;
        let model = model_from(&args.model)?;
        let traj = trajectory_from(&args.traj)?;
        let task = task_space(args.task_dims.as_deref().or(cfg.task_dims.as_deref()), &model)?;
        let mut gains = cfg.gains;
        if let Some(kp) = args.kp {
            gains.kp = [kp; 6];
        }
        if let Some(kv) = args.kv {
            gains.kv = [kv; 6];
        }
        gains.validate().map_err(usage)?;
        let initial = initial_state(&model, &task, &traj, args.start_offset.unwrap_or(cfg.start_offset))?;
        let mut ctl = ExactController::new(&model, task, gains);
        let log = simulate_tracking(&model, &mut ctl, &traj, &SimulationConfig::at(hz), &initial).map_err(|e| match e {
            ControlError::RateTooLow(_) | ControlError::InvalidGains(_) | ControlError::StartTooFar { .. } => usage(e),
            other => check(anyhow!("tracking aborted: {other}")),
        })?;
        let mut csv = Vec::new();
        log.write_csv(&mut csv).map_err(usage)?;
        out.write("tracking.csv", &csv)?;
        let summary = TrackSummary {
            model: model.name.clone(),
            hz,
            cycles: log.len(),
            rmse: log.position_rmse(),
            max_error: log.max_position_error(),
        };
        out.json("summary.json", &summary)?;
        println!("rmse={:.6e} max_error={:.6e} cycles={}", summary.rmse, summary.max_error, summary.cycles);
        Ok(())
    })();
    out.finish(result)
}

#[derive(Debug, Serialize)]
struct AdaptReport {
    endpoint: usize,
    last: bool,
    time: f64,
    test: String,
    witness: Option<usize>,
    waypoints: usize,
}

fn adapt(cli: &Cli, args: &AdaptArgs, mut out: Output) -> Written {
    let result = (|| {
        let mut cfg: AdaptiveConfig = load_config(cli)?;
        if let Some(d) = args.d {
            cfg.distance_threshold = d;
        }
        if let Some(step) = args.step {
            cfg.step = step;
        }
        cfg.validate().map_err(usage)?;
        let (endpoint, times) = if args.waypoints {
            let samples =
                read_samples(&args.traj).with_context(|| format!("reading {}", args.traj.display())).map_err(usage)?;
            if samples.len() < 2 {
                return Err(usage(anyhow!("a start point and at least one waypoint are required")));
            }
            let anchor = Vector3::new(samples[0].pose[0], samples[0].pose[1], samples[0].pose[2]);
            let points: Vec<WaypointState> = samples[1..]
                .iter()
                .map(|s| WaypointState::new([s.pose[0], s.pose[1], s.pose[2]], s.gripper))
                .collect();
            let e = select_endpoint(&anchor, &points, &cfg).map_err(usage)?;
            (e, samples[1..].iter().map(|s| s.t).collect::<Vec<_>>())
        } else {
            let traj = trajectory_from(&args.traj)?;
            let waypoints = extract_waypoints(&traj, cfg.step).map_err(usage)?;
            let e = select_from_waypoints(&waypoints, &cfg).map_err(usage)?;
            (e, waypoints.points.iter().map(|w| w.t).collect())
        };
        let last = endpoint.index + 1 == times.len();
        let report = AdaptReport {
            endpoint: endpoint.index,
            last,
            time: times[endpoint.index],
            test: endpoint.trigger.to_string(),
            witness: endpoint.witness,
            waypoints: times.len(),
        };
        out.json("adapt.json", &report)?;
        let label = if last { "last".to_string() } else { endpoint.index.to_string() };
        println!("endpoint={label} index={} time={:.6} test={}", endpoint.index, report.time, report.test);
        Ok(())
    })();
    out.finish(result)
}

fn parse_schedule(text: &str, seed: Option<u64>) -> Result<Schedule, Failure> {
    let text = text.trim().to_lowercase();
    if text == "baseline" {
        return Ok(Schedule::Baseline);
    }
    if text == "adaptive" || text == "corki_adaptive" {
        return Ok(Schedule::CorkiAdaptive(AdaptiveSchedule { seed: seed.unwrap_or(0), ..AdaptiveSchedule::default() }));
    }
    if let Some(n) = text.strip_prefix("corki:").or_else(|| text.strip_prefix("corki-")) {
        let n: usize = n.parse().map_err(|_| usage(anyhow!("invalid segment length in `{text}`")))?;
        return Ok(Schedule::Corki(n));
    }
    Err(usage(anyhow!("unknown schedule `{text}`; expected baseline, corki:N or adaptive")))
}

fn pipeline(cli: &Cli, args: &PipelineArgs, mut out: Output) -> Written {
    let result = (|| {
        let path = cli.config.as_ref().ok_or_else(|| usage(anyhow!("pipeline requires --config")))?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(usage)?;
        if let Some(schedule) = &args.schedule {
            cfg.schedule = parse_schedule(schedule, cli.seed)?;
        }
        if let Some(steps) = args.steps {
            cfg.step_count_total = steps;
        }
        if let Some(seed) = cli.seed {
            if let Feedback::RandomMidpoint(_) = cfg.feedback {
                cfg.feedback = Feedback::RandomMidpoint(seed);
            }
            if let Schedule::CorkiAdaptive(a) = &mut cfg.schedule {
                a.seed = seed;
            }
        }
        let trace = simulate(&cfg).map_err(usage)?;
        let summary = summarize(&cfg, &trace).map_err(usage)?;
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).map_err(usage)?;
        out.write("trace.csv", &buf)?;
        let mut buf = Vec::new();
        frame_series(&trace).write_csv(&mut buf).map_err(usage)?;
        out.write("frames.csv", &buf)?;
        out.json("summary.json", &summary)?;
        println!(
            "schedule={} latency_per_frame={:.6} speedup={:.4} energy_ratio={:.4} inference_count={}",
            summary.schedule, summary.latency_per_frame, summary.speedup, summary.energy_ratio, summary.inference_count
        );
        Ok(())
    })();
    out.finish(result)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepConfig {
    thresholds: Vec<f64>,
    hz: f64,
    gains: ControlGains,
    start_offset: f64,
    task_dims: Option<Vec<String>>,
    targets: BTreeSet<Block>,
    /// Cycles between calibration samples.
    stride: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.0, 1e-3, 2e-3, DEFAULT_THRESHOLD, 1e-2, 3e-2],
            hz: 1000.0,
            gains: ControlGains::default(),
            start_offset: 0.01,
            task_dims: None,
            targets: Block::JOINT_SPACE.into_iter().collect(),
            stride: 20,
        }
    }
}

#[derive(Debug, Serialize)]
struct FactorReport {
    model: String,
    factors: Vec<f64>,
    targets: BTreeSet<Block>,
    cases: Vec<String>,
}

fn corpus_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))
                .map_err(usage)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(usage(anyhow!("trajectory corpus is empty")));
    }
    Ok(files)
}

fn approx_sweep(cli: &Cli, args: &ApproxSweepArgs, mut out: Output) -> Written {
    let result = (|| {
        let cfg: SweepConfig = load_config(cli)?;
        let hz = args.hz.unwrap_or(cfg.hz);
        check_rate(hz)?;
        let thresholds = args.threshold.clone().unwrap_or(cfg.thresholds);
        if thresholds.is_empty() || !thresholds.iter().all(|t| (0.0..=1.0).contains(t)) {
            return Err(usage(anyhow!("thresholds must be non-empty and lie in [0, 1]")));
        }
        let model = model_from(&args.model)?;
        let task = task_space(args.task_dims.as_deref().or(cfg.task_dims.as_deref()), &model)?;
        let offset = args.start_offset.unwrap_or(cfg.start_offset);
        let mut cases = Vec::new();
        for file in corpus_files(&args.traj)? {
            let trajectory = trajectory_from(&file)?;
            let initial = initial_state(&model, &task, &trajectory, offset)?;
            let name = file.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            cases.push(BenchmarkCase { name, trajectory, initial });
        }
        let bench = Benchmark { model, task, gains: cfg.gains, sim: SimulationConfig::at(hz), cases };
        let exact = bench.exact_runs().map_err(check)?;
        let factors = bench.calibrate(&exact, cfg.stride, &cfg.targets).map_err(check)?;
        let rows = bench.sweep(&factors, &cfg.targets, &thresholds, &exact).map_err(check)?;
        let mut buf = Vec::new();
        embodied_core::approx::write_sweep_csv(&mut buf, &rows).map_err(usage)?;
        out.write("sweep.csv", &buf)?;
        out.json(
            "factors.json",
            &FactorReport {
                model: bench.model.name.clone(),
                factors,
                targets: cfg.targets.clone(),
                cases: bench.cases.iter().map(|c| c.name.clone()).collect(),
            },
        )?;
        print!("{}", String::from_utf8_lossy(&buf));
        Ok(())
    })();
    out.finish(result)
}
