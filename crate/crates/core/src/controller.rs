//! Task-space computed-torque control and closed-loop tracking simulation.
//!
//! `τ = Jᵀ [M_x (ẍ_d + K_p e + K_v ė) + h_x]` with `e = x_d − x` and
//! `ė = ẋ_d − ẋ`, all restricted to the active task coordinates.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    control_blocks, forward_dynamics, forward_kinematics, inverse_kinematics, pose_error, ControlBlocks,
    DynamicsError, DynamicsWorkspace, TaskSpace,
};
use crate::model::{JointState, RobotModel};
use crate::trajectory::{CubicTrajectory, TrajectoryError, TrajectoryPoint};

/// Lowest control rate the loop accepts, Hz.
pub const MIN_CONTROL_HZ: f64 = 100.0;
/// Position error that aborts a simulation, meters.
pub const DIVERGENCE_LIMIT: f64 = 1.0;
/// Largest accepted distance between the initial and the reference start position, meters.
pub const START_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("control rate {0} Hz is below the {MIN_CONTROL_HZ} Hz minimum")]
    RateTooLow(f64),
    #[error("initial position is {distance} m from the trajectory start (limit {limit} m)")]
    StartTooFar { distance: f64, limit: f64 },
    #[error("position error {error} m at t = {t} s exceeds the divergence limit")]
    Diverged { t: f64, error: f64 },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("inverse kinematics did not converge (residual {0})")]
    NoInverseKinematics(f64),
}

/// Diagonal task-space gains, ordered x, y, z, alpha, beta, gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// 1/s².
    pub kp: [f64; 6],
    /// 1/s.
    pub kv: [f64; 6],
}

impl Default for ControlGains {
    fn default() -> Self {
        Self { kp: [100.0; 6], kv: [20.0; 6] }
    }
}

impl ControlGains {
    pub fn uniform(kp: f64, kv: f64) -> Self {
        Self { kp: [kp; 6], kv: [kv; 6] }
    }

    /// `K_v = 2 √K_p` element-wise.
    pub fn critically_damped(kp: f64) -> Self {
        Self::uniform(kp, 2.0 * kp.sqrt())
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = self.kp.iter().chain(&self.kv).all(|g| g.is_finite() && *g >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(ControlError::InvalidGains("diagonal entries must be finite and non-negative".into()))
        }
    }
}

/// Desired pose, velocity and acceleration in task coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub pose: Vector6<f64>,
    pub velocity: Vector6<f64>,
    pub acceleration: Vector6<f64>,
}

impl Reference {
    pub fn hold(pose: Vector6<f64>) -> Self {
        Self { pose, velocity: Vector6::zeros(), acceleration: Vector6::zeros() }
    }
}

impl From<&TrajectoryPoint> for Reference {
    fn from(p: &TrajectoryPoint) -> Self {
        Self { pose: p.pose, velocity: p.velocity, acceleration: p.acceleration }
    }
}

/// Control law evaluated on already computed blocks.
pub fn torque_from_blocks(
    blocks: &ControlBlocks,
    gains: &ControlGains,
    task: &TaskSpace,
    theta_dot: &DVector<f64>,
    reference: &Reference,
) -> DVector<f64> {
    let e = task.select(&pose_error(&reference.pose, &blocks.pose));
    let x_dot = &blocks.task_jacobian * theta_dot;
    let e_dot = task.select(&reference.velocity) - x_dot;
    let kp = task.select(&Vector6::from(gains.kp));
    let kv = task.select(&Vector6::from(gains.kv));
    let command = task.select(&reference.acceleration) + kp.component_mul(&e) + kv.component_mul(&e_dot);
    blocks.task_jacobian.transpose() * (&blocks.task_mass * command + &blocks.task_bias)
}

pub fn compute_torque(
    model: &RobotModel,
    gains: &ControlGains,
    state: &JointState,
    reference: &Reference,
    ws: &mut DynamicsWorkspace,
) -> Result<DVector<f64>, ControlError> {
    let blocks = control_blocks(model, state, ws)?;
    Ok(torque_from_blocks(&blocks, gains, &ws.task_space().clone(), &state.theta_dot, reference))
}

/// Anything that turns a state and a reference into joint torques.
pub trait TorqueController {
    fn task_space(&self) -> &TaskSpace;

    fn torque(
        &mut self,
        model: &RobotModel,
        state: &JointState,
        reference: &Reference,
    ) -> Result<DVector<f64>, ControlError>;

    /// Share of the full block computation performed by the last call.
    fn work_fraction(&self) -> f64 {
        1.0
    }
}

/// Recomputes every block each cycle.
#[derive(Debug, Clone)]
pub struct ExactController {
    pub gains: ControlGains,
    ws: DynamicsWorkspace,
}

impl ExactController {
    pub fn new(model: &RobotModel, task: TaskSpace, gains: ControlGains) -> Self {
        Self { gains, ws: DynamicsWorkspace::new(model, task) }
    }
}

impl TorqueController for ExactController {
    fn task_space(&self) -> &TaskSpace {
        self.ws.task_space()
    }

    fn torque(
        &mut self,
        model: &RobotModel,
        state: &JointState,
        reference: &Reference,
    ) -> Result<DVector<f64>, ControlError> {
        compute_torque(model, &self.gains, state, reference, &mut self.ws)
    }
}

/// How per-cycle compute latency is logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    /// Wall-clock time of the controller call.
    Measured,
    /// Fixed full-computation latency scaled by the controller's work fraction.
    Fixed { cycle_seconds: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        // Exact control latency divided by the accelerator speedup.
        LatencyModel::Fixed { cycle_seconds: 0.0102254 / 29.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub hz: f64,
    pub latency: LatencyModel,
    pub divergence_limit: f64,
    pub start_tolerance: f64,
}

impl SimulationConfig {
    pub fn at(hz: f64) -> Self {
        Self {
            hz,
            latency: LatencyModel::default(),
            divergence_limit: DIVERGENCE_LIMIT,
            start_tolerance: START_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingLog {
    pub task: TaskSpace,
    pub times: Vec<f64>,
    pub reference: Vec<Vector6<f64>>,
    pub actual: Vec<Vector6<f64>>,
    pub torques: Vec<DVector<f64>>,
    pub latencies: Vec<f64>,
    pub states: Vec<JointState>,
}

/// Euclidean norm of the active position components of `target − actual`.
pub fn position_error(task: &TaskSpace, target: &Vector6<f64>, actual: &Vector6<f64>) -> f64 {
    task.dims()
        .iter()
        .filter(|d| !d.is_angular())
        .map(|d| (target[d.index()] - actual[d.index()]).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl TrackingLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn position_errors(&self) -> Vec<f64> {
        self.reference.iter().zip(&self.actual).map(|(r, a)| position_error(&self.task, r, a)).collect()
    }

    pub fn position_rmse(&self) -> f64 {
        let e = self.position_errors();
        (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
    }

    pub fn max_position_error(&self) -> f64 {
        self.position_errors().into_iter().fold(0.0, f64::max)
    }

    pub fn max_torque_deviation(&self, other: &TrackingLog) -> f64 {
        self.torques.iter().zip(&other.torques).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }

    /// `t,ref_x..ref_gamma,act_x..act_gamma,tau_1..tau_n,cycle_latency_s`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let n = self.torques.first().map_or(0, |t| t.len());
        let names = crate::trajectory::DIM_NAMES;
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().map(|d| format!("ref_{d}")));
        header.extend(names.iter().map(|d| format!("act_{d}")));
        header.extend((1..=n).map(|i| format!("tau_{i}")));
        header.push("cycle_latency_s".into());
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.reference[i].iter().map(f64::to_string));
            row.extend(self.actual[i].iter().map(f64::to_string));
            row.extend(self.torques[i].iter().map(f64::to_string));
            row.push(self.latencies[i].to_string());
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Closed-loop run: the controller computes torques at `cfg.hz` from
/// references sampled off `traj`, and the plant integrates with
/// semi-implicit Euler at the same rate.
pub fn simulate_tracking(
    model: &RobotModel,
    controller: &mut dyn TorqueController,
    traj: &CubicTrajectory,
    cfg: &SimulationConfig,
    initial: &JointState,
) -> Result<TrackingLog, ControlError> {
    if !(cfg.hz >= MIN_CONTROL_HZ) {
        return Err(ControlError::RateTooLow(cfg.hz));
    }
    let task = controller.task_space().clone();
    let dt = 1.0 / cfg.hz;
    let mut plant = DynamicsWorkspace::new(model, task.clone());
    let mut state = initial.clone();

    let start = forward_kinematics(model, &state, &mut plant)?;
    let distance = position_error(&task, &traj.pose_at(0.0)?, &start);
    if distance > cfg.start_tolerance {
        return Err(ControlError::StartTooFar { distance, limit: cfg.start_tolerance });
    }

    let cycles = (traj.duration() * cfg.hz + 1e-9).floor() as usize;
    let mut log = TrackingLog {
        task: task.clone(),
        times: Vec::with_capacity(cycles + 1),
        reference: Vec::with_capacity(cycles + 1),
        actual: Vec::with_capacity(cycles + 1),
        torques: Vec::with_capacity(cycles + 1),
        latencies: Vec::with_capacity(cycles + 1),
        states: Vec::with_capacity(cycles + 1),
    };
    for k in 0..=cycles {
        let t = (k as f64 * dt).min(traj.duration());
        let point = traj.eval(t)?;
        let reference = Reference::from(&point);
        let actual = forward_kinematics(model, &state, &mut plant)?;
        let error = position_error(&task, &reference.pose, &actual);
        if !(error <= cfg.divergence_limit) {
            return Err(ControlError::Diverged { t, error });
        }

        let clock = Instant::now();
        let tau = controller.torque(model, &state, &reference)?;
        let latency = match cfg.latency {
            LatencyModel::Measured => clock.elapsed().as_secs_f64(),
            LatencyModel::Fixed { cycle_seconds } => cycle_seconds * controller.work_fraction(),
        };

        log.times.push(t);
        log.reference.push(reference.pose);
        log.actual.push(actual);
        log.latencies.push(latency);
        log.states.push(state.clone());

        let qdd = forward_dynamics(model, &state, &tau, &mut plant)?;
        log.torques.push(tau);
        state.theta_dot += qdd * dt;
        state.theta += &state.theta_dot * dt;
    }
    Ok(log)
}

/// Joint state at rest whose end effector sits at `pose + offset` on the
/// active coordinates.
pub fn state_at_pose(
    model: &RobotModel,
    task: &TaskSpace,
    pose: &Vector6<f64>,
    offset: &Vector6<f64>,
    seed: &DVector<f64>,
) -> Result<JointState, ControlError> {
    let (theta, residual) = inverse_kinematics(model, &(pose + offset), task, seed, 1e-12, 500)?;
    if residual > 1e-9 {
        return Err(ControlError::NoInverseKinematics(residual));
    }
    Ok(JointState::new(theta, DVector::zeros(model.dof())))
}

/// Joint seed favoring an elbow-bent configuration.
pub fn default_seed(model: &RobotModel) -> DVector<f64> {
    if model.dof() == 7 {
        DVector::from_vec(vec![0.0, -0.3, 0.0, -2.2, 0.0, 2.0, 0.8])
    } else {
        DVector::from_fn(model.dof(), |i, _| if i == 0 { 0.3 } else { 0.8 })
    }
}
