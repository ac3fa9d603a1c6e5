//! Approximate reuse of dynamics blocks between control cycles.
//!
//! Each governed block keeps the joint angles it was last computed at. A
//! cycle recomputes the block when the weighted joint motion since then,
//! `p = min(1, Σ_j f_j |Δθ_j|)`, reaches the threshold, or when a block it
//! depends on was recomputed in the same cycle. Otherwise the cached value is
//! served.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    simulate_tracking, torque_from_blocks, ControlError, ControlGains, ExactController, Reference,
    SimulationConfig, TorqueController, TrackingLog,
};
use crate::dynamics::{
    analytic_jacobian, composite_rigid_body, control_blocks, jdot_qdot, mass_cholesky, recursive_newton_euler,
    task_bias_from, task_inertia, ControlBlocks, DynamicsError, DynamicsWorkspace, LinkFrames, TaskSpace,
};
use crate::flops::{count_flops, Counted, Real};
use crate::model::{JointState, RobotModel};
use crate::trajectory::CubicTrajectory;

/// Threshold used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 5e-3;
/// Step of the central differences used to calibrate impact factors, radians.
pub const CALIBRATION_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("calibration corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// A matrix or vector the gate can govern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Jacobian,
    JointMass,
    Bias,
    TaskMass,
    TaskBias,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::Jacobian, Block::JointMass, Block::Bias, Block::TaskMass, Block::TaskBias];
    /// Blocks invariant under rotation of the base joint about gravity.
    pub const JOINT_SPACE: [Block; 2] = [Block::JointMass, Block::Bias];

    pub fn name(self) -> &'static str {
        match self {
            Block::Jacobian => "jacobian",
            Block::JointMass => "joint_mass",
            Block::Bias => "bias",
            Block::TaskMass => "task_mass",
            Block::TaskBias => "task_bias",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Relative cost of recomputing the block.
    fn weight(self) -> f64 {
        match self {
            Block::Jacobian => 1.0,
            Block::JointMass => 3.0,
            Block::Bias => 2.0,
            Block::TaskMass => 2.0,
            Block::TaskBias => 3.0,
        }
    }

    /// Element-wise magnitude entries of the block in `blocks`.
    fn values(self, blocks: &ControlBlocks) -> &[f64] {
        match self {
            Block::Jacobian => blocks.task_jacobian.as_slice(),
            Block::JointMass => blocks.joint_mass.as_slice(),
            Block::Bias => blocks.bias.as_slice(),
            Block::TaskMass => blocks.task_mass.as_slice(),
            Block::TaskBias => blocks.task_bias.as_slice(),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactConfig {
    pub factors: Vec<f64>,
    pub threshold: f64,
    pub targets: BTreeSet<Block>,
}

impl ImpactConfig {
    pub fn new(factors: Vec<f64>, threshold: f64) -> Self {
        Self { factors, threshold, targets: Block::JOINT_SPACE.into_iter().collect() }
    }

    pub fn with_targets(mut self, targets: &[Block]) -> Self {
        self.targets = targets.iter().copied().collect();
        self
    }

    pub fn validate(&self, dof: usize) -> Result<(), ApproxError> {
        if self.factors.len() != dof {
            return Err(ApproxError::DimensionMismatch { expected: dof, got: self.factors.len() });
        }
        if !self.factors.iter().all(|f| f.is_finite() && *f >= 0.0) {
            return Err(ApproxError::InvalidConfig("factors must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ApproxError::InvalidConfig(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    pub fn governs(&self, block: Block) -> bool {
        self.targets.contains(&block)
    }
}

/// `min(1, Σ_j f_j |Δθ_j|)`.
pub fn update_probability_in<T: Real>(delta: &[T], factors: &[T]) -> T {
    let mut sum = T::zero();
    for (d, f) in delta.iter().zip(factors) {
        sum = sum + *f * d.abs();
    }
    sum.min(T::from_f64(1.0))
}

pub fn update_probability(delta: &DVector<f64>, cfg: &ImpactConfig) -> Result<f64, ApproxError> {
    if delta.len() != cfg.factors.len() {
        return Err(ApproxError::DimensionMismatch { expected: cfg.factors.len(), got: delta.len() });
    }
    Ok(update_probability_in(delta.as_slice(), &cfg.factors))
}

/// [`update_probability`] with its floating-point operation count.
pub fn update_probability_counted(delta: &DVector<f64>, cfg: &ImpactConfig) -> Result<(f64, u64), ApproxError> {
    if delta.len() != cfg.factors.len() {
        return Err(ApproxError::DimensionMismatch { expected: cfg.factors.len(), got: delta.len() });
    }
    let d: Vec<Counted> = delta.iter().map(|&v| Counted(v)).collect();
    let f: Vec<Counted> = cfg.factors.iter().map(|&v| Counted(v)).collect();
    let (p, flops) = count_flops(|| update_probability_in(&d, &f));
    Ok((p.0, flops))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounters {
    pub updates: u64,
    pub skips: u64,
}

#[derive(Debug, Clone)]
struct Cache {
    task_jacobian: DMatrix<f64>,
    joint_mass: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
    bias: DVector<f64>,
    task_mass: DMatrix<f64>,
    task_bias: DVector<f64>,
    singular: bool,
    /// Joint angles each block was computed at.
    theta: [DVector<f64>; 5],
}

/// Gated evaluation of the control blocks with per-block caches and counters.
#[derive(Debug, Clone)]
pub struct ApproxState {
    pub cfg: ImpactConfig,
    task: TaskSpace,
    cache: Option<Cache>,
    counters: [BlockCounters; 5],
    last_work: f64,
}

impl ApproxState {
    pub fn new(model: &RobotModel, task: TaskSpace, cfg: ImpactConfig) -> Result<Self, ApproxError> {
        cfg.validate(model.dof())?;
        Ok(Self { cfg, task, cache: None, counters: [BlockCounters::default(); 5], last_work: 1.0 })
    }

    pub fn task_space(&self) -> &TaskSpace {
        &self.task
    }

    pub fn counters(&self, block: Block) -> BlockCounters {
        self.counters[block.index()]
    }

    /// Skipped share of all gate decisions over the governed blocks.
    pub fn skip_fraction(&self) -> f64 {
        let (skips, total) = self
            .cfg
            .targets
            .iter()
            .map(|b| self.counters[b.index()])
            .fold((0, 0), |(s, t), c| (s + c.skips, t + c.skips + c.updates));
        if total == 0 {
            0.0
        } else {
            skips as f64 / total as f64
        }
    }

    pub fn decisions(&self) -> (u64, u64) {
        self.cfg
            .targets
            .iter()
            .map(|b| self.counters[b.index()])
            .fold((0, 0), |(s, u), c| (s + c.skips, u + c.updates))
    }

    /// Share of the full computation done by the last cycle, by block weight.
    pub fn work_fraction(&self) -> f64 {
        self.last_work
    }

    fn gate(&self, block: Block, theta: &DVector<f64>, upstream: bool) -> bool {
        let Some(cache) = &self.cache else { return true };
        if upstream || !self.cfg.governs(block) {
            return true;
        }
        let delta = theta - &cache.theta[block.index()];
        update_probability_in(delta.as_slice(), &self.cfg.factors) >= self.cfg.threshold
    }

    /// Blocks for `state`, recomputing only what the gate lets through.
    pub fn blocks(&mut self, model: &RobotModel, state: &JointState) -> Result<ControlBlocks, ApproxError> {
        let n = model.dof();
        if state.theta.len() != n || state.theta_dot.len() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, got: state.theta.len() }.into());
        }
        let theta = &state.theta;
        let links = LinkFrames::compute(model, theta);
        let pose = links.pose();

        let fresh = [
            self.gate(Block::Jacobian, theta, false),
            self.gate(Block::JointMass, theta, false),
            self.gate(Block::Bias, theta, false),
            false,
            false,
        ];
        let jacobian = if fresh[0] {
            Some(analytic_jacobian(&links.geometric_jacobian(), &pose, &self.task)?)
        } else {
            None
        };
        let mass = if fresh[1] {
            let m = composite_rigid_body(model, &links);
            let chol = mass_cholesky(&m)?;
            Some((m, chol))
        } else {
            None
        };
        let bias = if fresh[2] {
            let velocities = links.link_velocities(&state.theta_dot);
            let zero = DVector::zeros(n);
            Some(recursive_newton_euler(model, &links, &velocities, &state.theta_dot, &zero, &model.gravity))
        } else {
            None
        };

        if self.cache.is_none() {
            let (m, chol) = mass.expect("first cycle computes everything");
            let j = jacobian.expect("first cycle computes everything");
            let inertia = task_inertia(&j, &chol, &self.task);
            let b = bias.expect("first cycle computes everything");
            let jdq = jdot_qdot(model, state, &self.task)?;
            let hx = task_bias_from(&j, &chol, &b, &inertia.matrix, &jdq);
            self.cache = Some(Cache {
                task_jacobian: j,
                joint_mass: m,
                cholesky: chol,
                bias: b,
                task_mass: inertia.matrix,
                task_bias: hx,
                singular: inertia.singular,
                theta: std::array::from_fn(|_| theta.clone()),
            });
            for c in &mut self.counters {
                c.updates += 1;
            }
            self.last_work = 1.0;
            return Ok(self.snapshot(pose));
        }

        let mut recomputed = fresh;
        let task_mass_due = self.gate(Block::TaskMass, theta, fresh[0] || fresh[1]);
        let jdq = {
            let bias_due = self.gate(Block::TaskBias, theta, fresh[0] || fresh[1] || fresh[2] || task_mass_due);
            if bias_due { Some(jdot_qdot(model, state, &self.task)?) } else { None }
        };
        let cache = self.cache.as_mut().expect("cache initialized");
        if let Some(j) = jacobian {
            cache.task_jacobian = j;
            cache.theta[Block::Jacobian.index()] = theta.clone();
        }
        if let Some((m, chol)) = mass {
            cache.joint_mass = m;
            cache.cholesky = chol;
            cache.theta[Block::JointMass.index()] = theta.clone();
        }
        if let Some(b) = bias {
            cache.bias = b;
            cache.theta[Block::Bias.index()] = theta.clone();
        }
        if task_mass_due {
            let inertia = task_inertia(&cache.task_jacobian, &cache.cholesky, &self.task);
            cache.task_mass = inertia.matrix;
            cache.singular = inertia.singular;
            cache.theta[Block::TaskMass.index()] = theta.clone();
            recomputed[3] = true;
        }
        if let Some(jdq) = jdq {
            cache.task_bias =
                task_bias_from(&cache.task_jacobian, &cache.cholesky, &cache.bias, &cache.task_mass, &jdq);
            cache.theta[Block::TaskBias.index()] = theta.clone();
            recomputed[4] = true;
        }

        let total: f64 = Block::ALL.iter().map(|b| b.weight()).sum();
        let mut work = 0.0;
        for block in Block::ALL {
            let c = &mut self.counters[block.index()];
            if recomputed[block.index()] {
                c.updates += 1;
                work += block.weight();
            } else {
                c.skips += 1;
            }
        }
        self.last_work = work / total;
        Ok(self.snapshot(pose))
    }

    fn snapshot(&self, pose: Vector6<f64>) -> ControlBlocks {
        let c = self.cache.as_ref().expect("cache initialized");
        ControlBlocks {
            pose,
            task_jacobian: c.task_jacobian.clone(),
            joint_mass: c.joint_mass.clone(),
            bias: c.bias.clone(),
            task_mass: c.task_mass.clone(),
            task_bias: c.task_bias.clone(),
            singular: c.singular,
        }
    }
}

/// Task-space controller running on gated blocks.
#[derive(Debug, Clone)]
pub struct GatedController {
    pub gains: ControlGains,
    pub state: ApproxState,
}

impl GatedController {
    pub fn new(model: &RobotModel, task: TaskSpace, gains: ControlGains, cfg: ImpactConfig) -> Result<Self, ApproxError> {
        Ok(Self { gains, state: ApproxState::new(model, task, cfg)? })
    }
}

impl TorqueController for GatedController {
    fn task_space(&self) -> &TaskSpace {
        self.state.task_space()
    }

    fn torque(
        &mut self,
        model: &RobotModel,
        state: &JointState,
        reference: &Reference,
    ) -> Result<DVector<f64>, ControlError> {
        let blocks = self.state.blocks(model, state).map_err(|e| match e {
            ApproxError::Dynamics(d) => ControlError::Dynamics(d),
            ApproxError::Control(c) => c,
            other => ControlError::InvalidGains(other.to_string()),
        })?;
        Ok(torque_from_blocks(&blocks, &self.gains, self.state.task_space(), &state.theta_dot, reference))
    }

    fn work_fraction(&self) -> f64 {
        self.state.work_fraction()
    }
}

/// Max |M(θ + δ e_j) − M(θ)| over elements, for each joint `j` and delta `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub deltas: Vec<f64>,
    /// `rows[j][k]` is the change for joint `j` at `deltas[k]`.
    pub rows: Vec<Vec<f64>>,
}

impl SensitivityTable {
    /// Joint with the largest change at `deltas[k]`.
    pub fn most_sensitive_joint(&self, k: usize) -> usize {
        (0..self.rows.len()).max_by(|&a, &b| self.rows[a][k].total_cmp(&self.rows[b][k])).expect("joints")
    }
}

pub const SENSITIVITY_DELTAS: [f64; 3] = [0.1, 0.3, 0.5];
/// Base configuration of the shipped 7-DoF arm for the sensitivity experiment.
pub const SENSITIVITY_POSE: [f64; 7] = [0.0, 0.25, 0.0, -1.6, 0.0, 1.85, std::f64::consts::FRAC_PI_4];

pub fn mass_sensitivity_experiment(
    model: &RobotModel,
    base: &DVector<f64>,
    deltas: &[f64],
) -> Result<SensitivityTable, ApproxError> {
    if base.len() != model.dof() {
        return Err(ApproxError::DimensionMismatch { expected: model.dof(), got: base.len() });
    }
    if !deltas.iter().all(|d| d.is_finite() && *d >= 0.0) {
        return Err(ApproxError::InvalidConfig("deltas must be non-negative".into()));
    }
    let mass = |theta: &DVector<f64>| composite_rigid_body(model, &LinkFrames::compute(model, theta));
    let reference = mass(base);
    let rows = (0..model.dof())
        .map(|j| {
            deltas
                .iter()
                .map(|&d| {
                    let mut theta = base.clone();
                    theta[j] += d;
                    (mass(&theta) - &reference).amax()
                })
                .collect()
        })
        .collect();
    Ok(SensitivityTable { deltas: deltas.to_vec(), rows })
}

/// Per-joint impact factors from central-difference sensitivities of the
/// governed blocks over `states`.
///
/// For each block, the element-wise max rate of change per joint is averaged
/// over the states and normalized so its largest joint is 1; the normalized
/// rows are summed across blocks and the result is scaled so the largest
/// factor is 1.
pub fn calibrate_factors(
    model: &RobotModel,
    task: &TaskSpace,
    states: &[JointState],
    targets: &BTreeSet<Block>,
) -> Result<Vec<f64>, ApproxError> {
    if states.is_empty() {
        return Err(ApproxError::EmptyCorpus);
    }
    let n = model.dof();
    let h = CALIBRATION_STEP;
    let mut sensitivity = vec![vec![0.0; n]; 5];
    let eval = |theta: &DVector<f64>, theta_dot: &DVector<f64>| {
        let mut ws = DynamicsWorkspace::new(model, task.clone());
        control_blocks(model, &JointState::new(theta.clone(), theta_dot.clone()), &mut ws)
    };
    for state in states {
        for j in 0..n {
            let mut plus = state.theta.clone();
            plus[j] += h;
            let mut minus = state.theta.clone();
            minus[j] -= h;
            let (bp, bm) = (eval(&plus, &state.theta_dot)?, eval(&minus, &state.theta_dot)?);
            for block in targets {
                let rate = block
                    .values(&bp)
                    .iter()
                    .zip(block.values(&bm))
                    .map(|(a, b)| (a - b).abs() / (2.0 * h))
                    .fold(0.0, f64::max);
                sensitivity[block.index()][j] += rate / states.len() as f64;
            }
        }
    }
    let mut factors = vec![0.0; n];
    for block in targets {
        let row = &sensitivity[block.index()];
        let peak = row.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            for (f, s) in factors.iter_mut().zip(row) {
                *f += s / peak;
            }
        }
    }
    let peak = factors.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for f in &mut factors {
            *f /= peak;
        }
    }
    Ok(factors)
}

/// One benchmark trajectory with the state tracking starts from.
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub name: String,
    pub trajectory: CubicTrajectory,
    pub initial: JointState,
}

/// Comparison of a gated run against the exact controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub skip_fraction: f64,
    /// Largest per-trajectory ratio of gated to exact position RMSE.
    pub rmse_ratio: f64,
    pub max_torque_dev: f64,
}

/// A model, controller settings and trajectory cases to compare gated and
/// exact tracking on.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub model: RobotModel,
    pub task: TaskSpace,
    pub gains: ControlGains,
    pub sim: SimulationConfig,
    pub cases: Vec<BenchmarkCase>,
}

impl Benchmark {
    pub fn exact_runs(&self) -> Result<Vec<TrackingLog>, ApproxError> {
        self.cases
            .iter()
            .map(|c| {
                let mut ctl = ExactController::new(&self.model, self.task.clone(), self.gains);
                Ok(simulate_tracking(&self.model, &mut ctl, &c.trajectory, &self.sim, &c.initial)?)
            })
            .collect()
    }

    /// Gated runs for every case and the skip fraction over all of them.
    pub fn gated_runs(&self, cfg: &ImpactConfig) -> Result<(Vec<TrackingLog>, f64), ApproxError> {
        let mut logs = Vec::with_capacity(self.cases.len());
        let (mut skips, mut total) = (0u64, 0u64);
        for c in &self.cases {
            let mut ctl = GatedController::new(&self.model, self.task.clone(), self.gains, cfg.clone())?;
            logs.push(simulate_tracking(&self.model, &mut ctl, &c.trajectory, &self.sim, &c.initial)?);
            let (s, u) = ctl.state.decisions();
            skips += s;
            total += s + u;
        }
        let skip = if total == 0 { 0.0 } else { skips as f64 / total as f64 };
        Ok((logs, skip))
    }

    /// Factors calibrated on the states of `exact`, sampled every `stride` cycles.
    pub fn calibrate(
        &self,
        exact: &[TrackingLog],
        stride: usize,
        targets: &BTreeSet<Block>,
    ) -> Result<Vec<f64>, ApproxError> {
        calibrate_factors(&self.model, &self.task, &corpus_states(exact, stride), targets)
    }

    /// One row per threshold comparing gated runs against `exact`.
    pub fn sweep(
        &self,
        factors: &[f64],
        targets: &BTreeSet<Block>,
        thresholds: &[f64],
        exact: &[TrackingLog],
    ) -> Result<Vec<SweepRow>, ApproxError> {
        if self.cases.is_empty() {
            return Err(ApproxError::EmptyCorpus);
        }
        thresholds
            .iter()
            .map(|&threshold| {
                let cfg = ImpactConfig { factors: factors.to_vec(), threshold, targets: targets.clone() };
                let (logs, skip_fraction) = self.gated_runs(&cfg)?;
                let mut rmse_ratio = 0.0f64;
                let mut max_torque_dev = 0.0f64;
                for (g, e) in logs.iter().zip(exact) {
                    rmse_ratio = rmse_ratio.max(g.position_rmse() / e.position_rmse());
                    max_torque_dev = max_torque_dev.max(g.max_torque_deviation(e));
                }
                Ok(SweepRow { threshold, skip_fraction, rmse_ratio, max_torque_dev })
            })
            .collect()
    }
}

/// Joint states visited by tracking runs, every `stride` cycles.
pub fn corpus_states(runs: &[TrackingLog], stride: usize) -> Vec<JointState> {
    runs.iter().flat_map(|log| log.states.iter().step_by(stride.max(1)).cloned()).collect()
}

/// `threshold,skip_fraction,rmse_ratio,max_torque_dev`.
pub fn write_sweep_csv<W: std::io::Write>(writer: W, rows: &[SweepRow]) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
