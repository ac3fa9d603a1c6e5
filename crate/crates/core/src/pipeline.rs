//! Discrete-event simulation of the frame-sequential baseline pipeline and the
//! trajectory-based pipeline running one inference per multi-step segment.
//!
//! Three exclusive resources are modeled: the inference server, the wireless
//! link and the robot controller. Times are integer nanoseconds internally.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{select_from_waypoints, AdaptiveConfig, GripperMode};
use crate::trajectory::{extract_waypoints, Coefficients, CubicTrajectory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("traces cover different step counts ({0} vs {1})")]
    StepMismatch(usize, usize),
    #[error("zero denominator in ratio")]
    ZeroDenominator,
    #[error("adaptive segment generation failed: {0}")]
    Adaptive(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Inference,
    CommUp,
    CommDown,
    Control,
    Execute,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Inference => "inference",
            Stage::CommUp => "comm_up",
            Stage::CommDown => "comm_down",
            Stage::Control => "control",
            Stage::Execute => "execute",
        }
    }

    pub fn resource(self) -> Resource {
        match self {
            Stage::Inference => Resource::Server,
            Stage::CommUp | Stage::CommDown => Resource::Link,
            Stage::Control | Stage::Execute => Resource::Robot,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Server,
    Link,
    Robot,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Server, Resource::Link, Resource::Robot];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Server => "server",
            Resource::Link => "link",
            Resource::Robot => "robot",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Segment lengths drawn from endpoint selection on seeded synthetic paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveSchedule {
    /// Longest segment, in steps.
    pub max_steps: usize,
    pub seed: u64,
    pub adaptive: AdaptiveConfig,
    /// Net displacement range of a segment path, meters.
    pub min_length: f64,
    pub max_length: f64,
    /// Upper bound of the bend magnitude relative to the displacement.
    pub max_bend: f64,
    /// Chance that a segment contains a gripper toggle.
    pub gripper_probability: f64,
}

impl Default for AdaptiveSchedule {
    fn default() -> Self {
        Self {
            max_steps: 9,
            seed: 0,
            adaptive: AdaptiveConfig { gripper_mode: GripperMode::Edge, ..AdaptiveConfig::default() },
            min_length: 0.02,
            max_length: 0.2,
            max_bend: 1.0,
            gripper_probability: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Baseline,
    Corki(usize),
    CorkiAdaptive(AdaptiveSchedule),
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Baseline => f.write_str("baseline"),
            Schedule::Corki(n) => write!(f, "corki({n})"),
            Schedule::CorkiAdaptive(_) => f.write_str("corki_adaptive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    #[default]
    None,
    /// One extra image upload at the start of a seeded random step before
    /// each segment's endpoint.
    RandomMidpoint(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inference_latency: f64,
    pub control_latency_exact: f64,
    pub control_speedup: f64,
    pub comm_up_latency: f64,
    pub comm_down_latency: f64,
    pub exec_step_duration: f64,
    pub step_count_total: usize,
    pub inference_energy: f64,
    pub control_energy: f64,
    /// Energy of one frame's uploads and downloads together, split between
    /// them in proportion to their latencies.
    pub comm_energy: f64,
    pub schedule: Schedule,
    #[serde(default)]
    pub feedback: Feedback,
    /// Upload the image for the next segment while the last step executes.
    #[serde(default = "default_true")]
    pub overlap_up: bool,
    /// Start the first control cycle of a segment before the download ends.
    #[serde(default)]
    pub overlap_down: bool,
}

fn default_true() -> bool {
    true
}

/// Stage latencies split from a 249.4 ms baseline frame, seconds.
pub const FRAME_LATENCY: f64 = 0.2494;
pub const INFERENCE_LATENCY: f64 = 0.1917886;
pub const CONTROL_LATENCY: f64 = 0.0102254;
pub const COMM_UP_LATENCY: f64 = 0.0426474;
pub const COMM_DOWN_LATENCY: f64 = 0.0047386;
pub const CONTROL_SPEEDUP: f64 = 29.0;
/// Per-frame energies normalized to one joule per baseline frame.
pub const INFERENCE_ENERGY: f64 = 0.98;
pub const CONTROL_ENERGY: f64 = 0.00355;
pub const COMM_ENERGY: f64 = 0.01645;

impl PipelineConfig {
    /// Published stage constants with the given schedule and robot step time.
    pub fn calibrated(schedule: Schedule, exec_step_duration: f64, step_count_total: usize) -> Self {
        Self {
            inference_latency: INFERENCE_LATENCY,
            control_latency_exact: CONTROL_LATENCY,
            control_speedup: CONTROL_SPEEDUP,
            comm_up_latency: COMM_UP_LATENCY,
            comm_down_latency: COMM_DOWN_LATENCY,
            exec_step_duration,
            step_count_total,
            inference_energy: INFERENCE_ENERGY,
            control_energy: CONTROL_ENERGY,
            comm_energy: COMM_ENERGY,
            schedule,
            feedback: Feedback::None,
            overlap_up: true,
            overlap_down: false,
        }
    }

    pub fn with_schedule(&self, schedule: Schedule) -> Self {
        Self { schedule, ..self.clone() }
    }

    pub fn from_json_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let non_negative = [
            ("inference_latency", self.inference_latency),
            ("control_latency_exact", self.control_latency_exact),
            ("comm_up_latency", self.comm_up_latency),
            ("comm_down_latency", self.comm_down_latency),
            ("exec_step_duration", self.exec_step_duration),
            ("inference_energy", self.inference_energy),
            ("control_energy", self.control_energy),
            ("comm_energy", self.comm_energy),
        ];
        for (field, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(PipelineError::InvalidConfig { field, reason: format!("{value} is not a finite value ≥ 0") });
            }
        }
        if !(self.control_speedup.is_finite() && self.control_speedup >= 1.0) {
            return Err(PipelineError::InvalidConfig {
                field: "control_speedup",
                reason: format!("{} is below 1", self.control_speedup),
            });
        }
        if self.step_count_total == 0 {
            return Err(PipelineError::InvalidConfig { field: "step_count_total", reason: "must be positive".into() });
        }
        match &self.schedule {
            Schedule::Baseline => {}
            Schedule::Corki(n) if *n == 0 => {
                return Err(PipelineError::InvalidConfig { field: "schedule", reason: "corki N must be ≥ 1".into() })
            }
            Schedule::Corki(_) => {}
            Schedule::CorkiAdaptive(a) => {
                let bad = |reason: &str| PipelineError::InvalidConfig { field: "schedule", reason: reason.into() };
                if a.max_steps == 0 {
                    return Err(bad("max_steps must be ≥ 1"));
                }
                if !(a.min_length > 0.0 && a.min_length <= a.max_length && a.max_length.is_finite()) {
                    return Err(bad("segment lengths must satisfy 0 < min_length ≤ max_length"));
                }
                if !(a.max_bend.is_finite() && a.max_bend >= 0.0) {
                    return Err(bad("max_bend must be finite and ≥ 0"));
                }
                if !(0.0..=1.0).contains(&a.gripper_probability) {
                    return Err(bad("gripper_probability must lie in [0, 1]"));
                }
                a.adaptive.validate().map_err(|e| bad(&e.to_string()))?;
            }
        }
        Ok(())
    }
}

fn nanos(seconds: f64) -> u64 {
    (seconds * 1e9).round() as u64
}

fn seconds(nanos: u64) -> f64 {
    nanos as f64 * 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t_start: u64,
    pub t_end: u64,
    pub stage: Stage,
    pub frame: usize,
    pub resource: Resource,
}

impl Event {
    pub fn duration(&self) -> u64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTrace {
    pub schedule: String,
    pub events: Vec<Event>,
    /// Time between successive step completions, seconds.
    pub frame_latency: Vec<f64>,
    pub frame_energy: Vec<f64>,
    pub total_latency: f64,
    pub total_energy: f64,
    pub inference_count: usize,
    /// Steps covered by each inference.
    pub segments: Vec<usize>,
}

impl PipelineTrace {
    pub fn step_count(&self) -> usize {
        self.frame_latency.len()
    }

    pub fn mean_inference_interval(&self) -> f64 {
        self.step_count() as f64 / self.inference_count as f64
    }

    /// Total busy time of `stage`, seconds.
    pub fn stage_time(&self, stage: Stage) -> f64 {
        seconds(self.events.iter().filter(|e| e.stage == stage).map(Event::duration).sum())
    }

    /// `t_start,t_end,stage,frame,resource`, times in seconds.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["t_start", "t_end", "stage", "frame", "resource"])?;
        for e in &self.events {
            csv.write_record([
                format!("{:.9}", seconds(e.t_start)),
                format!("{:.9}", seconds(e.t_end)),
                e.stage.to_string(),
                e.frame.to_string(),
                e.resource.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

struct Simulator<'a> {
    cfg: &'a PipelineConfig,
    free_at: [u64; 3],
    events: Vec<Event>,
    energy: Vec<f64>,
    feedback_rng: Option<ChaCha8Rng>,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a PipelineConfig) -> Self {
        let feedback_rng = match cfg.feedback {
            Feedback::None => None,
            Feedback::RandomMidpoint(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Self {
            cfg,
            free_at: [0; 3],
            events: Vec::new(),
            energy: vec![0.0; cfg.step_count_total],
            feedback_rng,
        }
    }

    fn stage_energy(&self, stage: Stage) -> f64 {
        let c = self.cfg;
        let comm = c.comm_up_latency + c.comm_down_latency;
        let share = |latency: f64| if comm > 0.0 { c.comm_energy * latency / comm } else { 0.0 };
        match stage {
            Stage::Inference => c.inference_energy,
            Stage::Control => c.control_energy,
            Stage::CommUp => share(c.comm_up_latency),
            Stage::CommDown => share(c.comm_down_latency),
            Stage::Execute => 0.0,
        }
    }

    /// Books `stage` on its resource no earlier than `earliest`.
    fn run(&mut self, stage: Stage, frame: usize, earliest: u64, duration: u64) -> u64 {
        let resource = stage.resource();
        let start = earliest.max(self.free_at[resource.index()]);
        let end = start + duration;
        self.free_at[resource.index()] = end;
        self.events.push(Event { t_start: start, t_end: end, stage, frame, resource });
        self.energy[frame] += self.stage_energy(stage);
        end
    }

    fn baseline(mut self) -> PipelineTrace {
        let c = self.cfg;
        let mut done = 0;
        let mut completions = Vec::with_capacity(c.step_count_total);
        for frame in 0..c.step_count_total {
            let t = self.run(Stage::CommUp, frame, done, nanos(c.comm_up_latency));
            let t = self.run(Stage::Inference, frame, t, nanos(c.inference_latency));
            let t = self.run(Stage::CommDown, frame, t, nanos(c.comm_down_latency));
            done = self.run(Stage::Control, frame, t, nanos(c.control_latency_exact));
            completions.push(done);
        }
        let segments = vec![1; c.step_count_total];
        self.finish(Schedule::Baseline.to_string(), completions, segments)
    }

    fn segmented(mut self, lengths: &[usize]) -> PipelineTrace {
        let c = self.cfg;
        let control = nanos(c.control_latency_exact / c.control_speedup);
        let exec = nanos(c.exec_step_duration);
        let (up, down, infer) = (nanos(c.comm_up_latency), nanos(c.comm_down_latency), nanos(c.inference_latency));
        let mut completions = Vec::with_capacity(c.step_count_total);
        let mut done = 0;
        let mut uploaded: Option<u64> = None;
        let mut first = 0;
        for (s, &n) in lengths.iter().enumerate() {
            let upload_end = match uploaded.take() {
                Some(t) => t,
                None => self.run(Stage::CommUp, first, done, up),
            };
            let t = self.run(Stage::Inference, first, upload_end.max(done), infer);
            let down_end = self.run(Stage::CommDown, first, t, down);
            let mut ready = if c.overlap_down { t } else { down_end };
            let last_segment = s + 1 == lengths.len();
            let feedback_step = match self.feedback_rng.as_mut() {
                Some(rng) if n >= 2 => Some(rng.random_range(0..n - 1)),
                _ => None,
            };
            for k in 0..n {
                let frame = first + k;
                let control_end = self.run(Stage::Control, frame, ready, control);
                let start = if k == 0 { control_end.max(down_end) } else { control_end };
                if feedback_step == Some(k) {
                    self.run(Stage::CommUp, frame, start, up);
                }
                if k + 1 == n && c.overlap_up && !last_segment {
                    uploaded = Some(self.run(Stage::CommUp, first + n, start, up));
                }
                ready = self.run(Stage::Execute, frame, start, exec);
                completions.push(ready);
            }
            done = ready;
            first += n;
        }
        self.finish(String::new(), completions, lengths.to_vec())
    }

    fn finish(self, schedule: String, completions: Vec<u64>, segments: Vec<usize>) -> PipelineTrace {
        let mut frame_latency = Vec::with_capacity(completions.len());
        let mut prev = 0;
        for &t in &completions {
            frame_latency.push(seconds(t - prev));
            prev = t;
        }
        let mut events = self.events;
        events.sort_by_key(|e| (e.t_start, e.t_end, e.resource.index()));
        let inference_count = events.iter().filter(|e| e.stage == Stage::Inference).count();
        let total_energy = self.energy.iter().sum();
        PipelineTrace {
            schedule,
            events,
            frame_latency,
            frame_energy: self.energy,
            total_latency: seconds(prev),
            total_energy,
            inference_count,
            segments,
        }
    }
}

/// Segment lengths for `corki(n)`.
pub fn fixed_segments(n: usize, steps: usize) -> Vec<usize> {
    let mut out = vec![n; steps / n];
    if steps % n != 0 {
        out.push(steps % n);
    }
    out
}

/// Synthetic path of one segment: displacement `D`, bends `B`, `C` in
/// `p(u) = D u + B (u² − u) + C (u³ − u)` over `u = t / T`.
fn synthetic_segment(
    rng: &mut ChaCha8Rng,
    a: &AdaptiveSchedule,
    gripper: &mut bool,
) -> Result<CubicTrajectory, PipelineError> {
    let duration = a.max_steps as f64 * a.adaptive.step;
    let mut unit = || {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
        v.map(|x| x / n)
    };
    let (du, bu, cu) = (unit(), unit(), unit());
    let length = rng.random_range(a.min_length..=a.max_length);
    let bend_b = length * rng.random_range(0.0..=a.max_bend);
    let bend_c = length * rng.random_range(0.0..=a.max_bend);
    let mut coeffs = Coefficients::zeros();
    for i in 0..3 {
        let (d, b, c) = (du[i] * length, bu[i] * bend_b, cu[i] * bend_c);
        coeffs[(i, 0)] = c / duration.powi(3);
        coeffs[(i, 1)] = b / duration.powi(2);
        coeffs[(i, 2)] = (d - b - c) / duration;
    }
    let mut breakpoints = vec![(0.0, *gripper)];
    if rng.random_bool(a.gripper_probability) {
        *gripper = !*gripper;
        breakpoints.push((rng.random_range(0.0..duration), *gripper));
    }
    CubicTrajectory::new(coeffs, duration, breakpoints).map_err(|e| PipelineError::Adaptive(e.to_string()))
}

/// Segment lengths chosen by endpoint selection on seeded synthetic paths.
pub fn adaptive_segments(a: &AdaptiveSchedule, steps: usize) -> Result<Vec<usize>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut gripper = false;
    let mut out = Vec::new();
    let mut covered = 0;
    while covered < steps {
        let traj = synthetic_segment(&mut rng, a, &mut gripper)?;
        let waypoints = extract_waypoints(&traj, a.adaptive.step).map_err(|e| PipelineError::Adaptive(e.to_string()))?;
        let endpoint =
            select_from_waypoints(&waypoints, &a.adaptive).map_err(|e| PipelineError::Adaptive(e.to_string()))?;
        let n = (endpoint.index + 1).clamp(1, a.max_steps).min(steps - covered);
        out.push(n);
        covered += n;
    }
    Ok(out)
}

pub fn simulate(cfg: &PipelineConfig) -> Result<PipelineTrace, PipelineError> {
    cfg.validate()?;
    let sim = Simulator::new(cfg);
    let steps = cfg.step_count_total;
    let mut trace = match &cfg.schedule {
        Schedule::Baseline => return Ok(sim.baseline()),
        Schedule::Corki(n) => sim.segmented(&fixed_segments(*n, steps)),
        Schedule::CorkiAdaptive(a) => sim.segmented(&adaptive_segments(a, steps)?),
    };
    trace.schedule = cfg.schedule.to_string();
    Ok(trace)
}

/// `a.total_latency / b.total_latency`: how much faster `b` is.
pub fn speedup(a: &PipelineTrace, b: &PipelineTrace) -> Result<f64, PipelineError> {
    ratio(a, b, a.total_latency, b.total_latency)
}

/// `a.total_energy / b.total_energy`.
pub fn energy_ratio(a: &PipelineTrace, b: &PipelineTrace) -> Result<f64, PipelineError> {
    ratio(a, b, a.total_energy, b.total_energy)
}

fn ratio(a: &PipelineTrace, b: &PipelineTrace, num: f64, den: f64) -> Result<f64, PipelineError> {
    if a.step_count() != b.step_count() {
        return Err(PipelineError::StepMismatch(a.step_count(), b.step_count()));
    }
    if den == 0.0 {
        return Err(PipelineError::ZeroDenominator);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSeries {
    pub latency: Vec<f64>,
    pub energy: Vec<f64>,
    /// Frames served by a fresh inference.
    pub crest: Vec<bool>,
}

impl FrameSeries {
    pub fn crest_frames(&self) -> Vec<usize> {
        self.crest.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i).collect()
    }

    /// `frame,latency_s,energy_j,inference`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["frame", "latency_s", "energy_j", "inference"])?;
        for (i, ((l, e), c)) in self.latency.iter().zip(&self.energy).zip(&self.crest).enumerate() {
            csv.write_record([i.to_string(), format!("{l:.9}"), format!("{e:.9}"), (*c as u8).to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }
}

pub fn frame_series(trace: &PipelineTrace) -> FrameSeries {
    let mut crest = vec![false; trace.step_count()];
    for e in trace.events.iter().filter(|e| e.stage == Stage::Inference) {
        crest[e.frame] = true;
    }
    FrameSeries { latency: trace.frame_latency.clone(), energy: trace.frame_energy.clone(), crest }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub schedule: String,
    pub step_count: usize,
    pub total_latency_s: f64,
    pub total_energy_j: f64,
    pub latency_per_frame: f64,
    pub energy_per_frame: f64,
    pub inference_count: usize,
    pub mean_inference_interval: f64,
    pub baseline_total_latency_s: f64,
    pub baseline_total_energy_j: f64,
    pub speedup: f64,
    pub energy_ratio: f64,
}

/// Summary of `trace` against the baseline run of the same config.
pub fn summarize(cfg: &PipelineConfig, trace: &PipelineTrace) -> Result<PipelineSummary, PipelineError> {
    let baseline = simulate(&cfg.with_schedule(Schedule::Baseline))?;
    let steps = trace.step_count() as f64;
    Ok(PipelineSummary {
        schedule: trace.schedule.clone(),
        step_count: trace.step_count(),
        total_latency_s: trace.total_latency,
        total_energy_j: trace.total_energy,
        latency_per_frame: trace.total_latency / steps,
        energy_per_frame: trace.total_energy / steps,
        inference_count: trace.inference_count,
        mean_inference_interval: trace.mean_inference_interval(),
        baseline_total_latency_s: baseline.total_latency,
        baseline_total_energy_j: baseline.total_energy,
        speedup: speedup(&baseline, trace)?,
        energy_ratio: energy_ratio(&baseline, trace)?,
    })
}

/// Robot step time at which `cfg` reaches `target` speedup over its baseline,
/// by bisection to nanosecond resolution.
pub fn calibrate_exec_step_duration(cfg: &PipelineConfig, target: f64) -> Result<f64, PipelineError> {
    let baseline = simulate(&cfg.with_schedule(Schedule::Baseline))?;
    let at = |exec: u64| -> Result<f64, PipelineError> {
        let trial = PipelineConfig { exec_step_duration: seconds(exec), ..cfg.clone() };
        speedup(&baseline, &simulate(&trial)?)
    };
    let (mut lo, mut hi) = (0u64, nanos(cfg.inference_latency + cfg.comm_up_latency + cfg.comm_down_latency).max(1));
    while at(hi)? > target {
        hi *= 2;
    }
    if at(lo)? < target {
        return Err(PipelineError::InvalidConfig {
            field: "schedule",
            reason: format!("speedup {target} unreachable even with instantaneous motion"),
        });
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if at(mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(seconds(lo))
}
