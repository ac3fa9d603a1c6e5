//! Rigid-body kinematics and dynamics of a serial arm.
//!
//! The five blocks consumed by the task-space controller are computed here:
//! forward kinematics, the Jacobian, the joint-space mass matrix and bias
//! force, and their task-space projections. Every block is a pure function
//! of `(model, state)`; [`DynamicsWorkspace`] caches intermediate products
//! so that downstream blocks reuse upstream results:
//!
//! ```text
//! link poses ──► Jacobian ──► task Jacobian ──┐
//!     │    └───► link velocities ──► bias ────┼──► task bias
//!     └────────► mass matrix ─────────────────┴──► task mass ──┘
//! ```
//!
//! All quantities are expressed in the base frame. Task coordinates are the
//! end-effector position followed by Z-Y-X Euler angles; the controller works
//! with the analytic Jacobian, which maps joint rates to those coordinates.

pub mod euler;
pub mod oracle;

use nalgebra::{
    Cholesky, DMatrix, DVector, Dyn, Isometry3, Matrix3, Point3, SymmetricEigen, UnitQuaternion,
    Vector3, Vector6,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{JointState, RobotModel};
use euler::{euler_zyx, inverse_euler_rate_matrix, near_gimbal_lock};

/// Time step of the central difference used for `J̇ θ̇`, seconds.
pub const JDOT_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("state has {got} joints but the model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("end-effector pitch {beta} rad is inside the Euler-angle singularity guard")]
    RepresentationSingularity { beta: f64 },
    #[error("joint-space mass matrix is not positive definite")]
    SingularMassMatrix,
}

/// One of the six task-space coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskDim {
    X,
    Y,
    Z,
    Alpha,
    Beta,
    Gamma,
}

impl TaskDim {
    pub const ALL: [TaskDim; 6] =
        [TaskDim::X, TaskDim::Y, TaskDim::Z, TaskDim::Alpha, TaskDim::Beta, TaskDim::Gamma];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_angular(self) -> bool {
        self.index() >= 3
    }
}

/// Which task coordinates are controlled, and how the task-space inertia is
/// regularized near singular configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpace {
    dims: Vec<TaskDim>,
    /// Damping is `damping * trace(J M⁻¹ Jᵀ) / k`.
    pub damping: f64,
    /// Condition number of `J M⁻¹ Jᵀ` above which the configuration is flagged
    /// singular and damping is applied.
    pub condition_cap: f64,
}

impl Default for TaskSpace {
    fn default() -> Self {
        Self::full()
    }
}

impl TaskSpace {
    pub const DEFAULT_DAMPING: f64 = 1e-6;
    pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

    pub fn full() -> Self {
        Self::from_dims(&TaskDim::ALL)
    }

    /// Planar position control, for arms moving in the base x-y plane.
    pub fn planar_xy() -> Self {
        Self::from_dims(&[TaskDim::X, TaskDim::Y])
    }

    /// Full pose for arms with at least six joints, planar position otherwise.
    pub fn default_for(dof: usize) -> Self {
        match dof {
            0 | 1 => Self::from_dims(&[TaskDim::X]),
            2..=5 => Self::planar_xy(),
            _ => Self::full(),
        }
    }

    pub fn from_dims(dims: &[TaskDim]) -> Self {
        let mut dims = dims.to_vec();
        dims.sort_by_key(|d| d.index());
        dims.dedup();
        assert!(!dims.is_empty(), "task space needs at least one coordinate");
        Self {
            dims,
            damping: Self::DEFAULT_DAMPING,
            condition_cap: Self::DEFAULT_CONDITION_CAP,
        }
    }

    pub fn dims(&self) -> &[TaskDim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    fn has_angular(&self) -> bool {
        self.dims.iter().any(|d| d.is_angular())
    }

    /// Pick the active coordinates out of a full six-vector.
    pub fn select(&self, full: &Vector6<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.dims.iter().map(|d| full[d.index()]))
    }
}

/// End-effector pose `(x, y, z, alpha, beta, gamma)` and twist
/// `(v_x, v_y, v_z, omega_x, omega_y, omega_z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskState {
    pub pose: Vector6<f64>,
    pub twist: Vector6<f64>,
}

/// Base-frame placement of every link for one configuration.
#[derive(Debug, Clone)]
pub struct LinkFrames {
    /// Joint frames after applying the joint rotation.
    pub frames: Vec<Isometry3<f64>>,
    /// Joint axes.
    pub axes: Vec<Vector3<f64>>,
    /// Link centers of mass.
    pub coms: Vec<Vector3<f64>>,
    /// Link inertia about the center of mass, rotated into the base frame.
    pub inertias: Vec<Matrix3<f64>>,
    pub end_effector: Isometry3<f64>,
}

impl LinkFrames {
    pub fn compute(model: &RobotModel, theta: &DVector<f64>) -> Self {
        let n = model.dof();
        let mut frames = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut coms = Vec::with_capacity(n);
        let mut inertias = Vec::with_capacity(n);
        let mut parent = Isometry3::identity();
        for (joint, &angle) in model.joints.iter().zip(theta.iter()) {
            let mounted = parent * joint.parent_transform;
            axes.push(mounted.rotation * joint.axis.into_inner());
            let frame = mounted * UnitQuaternion::from_axis_angle(&joint.axis, angle);
            coms.push((frame * Point3::from(joint.link_com)).coords);
            let r = frame.rotation.to_rotation_matrix();
            inertias.push(r.matrix() * joint.link_inertia * r.matrix().transpose());
            frames.push(frame);
            parent = frame;
        }
        Self { frames, axes, coms, inertias, end_effector: parent * model.end_effector }
    }

    pub fn origin(&self, i: usize) -> Vector3<f64> {
        self.frames[i].translation.vector
    }

    /// Position followed by Z-Y-X Euler angles.
    pub fn pose(&self) -> Vector6<f64> {
        let p = self.end_effector.translation.vector;
        let e = euler_zyx(self.end_effector.rotation.to_rotation_matrix().matrix());
        Vector6::new(p.x, p.y, p.z, e.x, e.y, e.z)
    }

    /// Geometric Jacobian, linear rows first.
    pub fn geometric_jacobian(&self) -> DMatrix<f64> {
        let n = self.frames.len();
        let tip = self.end_effector.translation.vector;
        let mut jac = DMatrix::zeros(6, n);
        for i in 0..n {
            let z = self.axes[i];
            let linear = z.cross(&(tip - self.origin(i)));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        jac
    }

    /// Linear velocity of each joint origin and angular velocity of each link.
    pub fn link_velocities(&self, theta_dot: &DVector<f64>) -> Vec<Vector6<f64>> {
        let mut out = Vec::with_capacity(self.frames.len());
        let mut v = Vector3::zeros();
        let mut w = Vector3::zeros();
        let mut prev = Vector3::zeros();
        for i in 0..self.frames.len() {
            let origin = self.origin(i);
            v += w.cross(&(origin - prev));
            w += self.axes[i] * theta_dot[i];
            prev = origin;
            out.push(Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z));
        }
        out
    }
}

/// Analytic Jacobian restricted to the active task coordinates: angular rows
/// are mapped to Euler-angle rates.
pub fn analytic_jacobian(
    geometric: &DMatrix<f64>,
    pose: &Vector6<f64>,
    task: &TaskSpace,
) -> Result<DMatrix<f64>, DynamicsError> {
    let n = geometric.ncols();
    let rates = if task.has_angular() {
        let euler = pose.fixed_rows::<3>(3).into_owned();
        if near_gimbal_lock(euler.y) {
            return Err(DynamicsError::RepresentationSingularity { beta: euler.y });
        }
        Some(inverse_euler_rate_matrix(&euler) * geometric.rows(3, 3))
    } else {
        None
    };
    let mut out = DMatrix::zeros(task.len(), n);
    for (row, dim) in task.dims().iter().enumerate() {
        let i = dim.index();
        match &rates {
            Some(r) if i >= 3 => out.row_mut(row).copy_from(&r.row(i - 3)),
            _ => out.row_mut(row).copy_from(&geometric.row(i)),
        }
    }
    Ok(out)
}

/// Recursive Newton-Euler inverse dynamics with gravity.
///
/// `link_velocities` must come from [`LinkFrames::link_velocities`] for the
/// same `theta_dot`.
pub fn recursive_newton_euler(
    model: &RobotModel,
    links: &LinkFrames,
    link_velocities: &[Vector6<f64>],
    theta_dot: &DVector<f64>,
    theta_ddot: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> DVector<f64> {
    let n = model.dof();
    let mut forces = Vec::with_capacity(n);
    let mut moments = Vec::with_capacity(n);

    let mut omega_prev = Vector3::zeros();
    let mut alpha_prev = Vector3::zeros();
    let mut accel_prev = -gravity;
    let mut origin_prev = Vector3::zeros();
    for i in 0..n {
        let origin = links.origin(i);
        let z = links.axes[i];
        let r = origin - origin_prev;
        let accel = accel_prev + alpha_prev.cross(&r) + omega_prev.cross(&omega_prev.cross(&r));
        let omega = link_velocities[i].fixed_rows::<3>(3).into_owned();
        let alpha = alpha_prev + z * theta_ddot[i] + omega_prev.cross(&(z * theta_dot[i]));
        let c = links.coms[i] - origin;
        let accel_com = accel + alpha.cross(&c) + omega.cross(&omega.cross(&c));
        let inertia = &links.inertias[i];
        forces.push(accel_com * model.joints[i].link_mass);
        moments.push(inertia * alpha + omega.cross(&(inertia * omega)));

        omega_prev = omega;
        alpha_prev = alpha;
        accel_prev = accel;
        origin_prev = origin;
    }

    let mut tau = DVector::zeros(n);
    let mut force_next = Vector3::zeros();
    let mut moment_next = Vector3::zeros();
    for i in (0..n).rev() {
        let origin = links.origin(i);
        let lever_next = if i + 1 < n { links.origin(i + 1) - origin } else { Vector3::zeros() };
        let moment = moments[i]
            + (links.coms[i] - origin).cross(&forces[i])
            + moment_next
            + lever_next.cross(&force_next);
        let force = forces[i] + force_next;
        tau[i] = links.axes[i].dot(&moment);
        force_next = force;
        moment_next = moment;
    }
    tau
}

/// Joint-space mass matrix by the composite-rigid-body method.
pub fn composite_rigid_body(model: &RobotModel, links: &LinkFrames) -> DMatrix<f64> {
    let n = model.dof();
    let mut mass_matrix = DMatrix::zeros(n, n);
    // Composite of links i..n, accumulated tip to base: total mass, first
    // moment, and inertia about the base origin.
    let mut mass = 0.0;
    let mut first_moment = Vector3::zeros();
    let mut inertia_origin = Matrix3::zeros();
    for i in (0..n).rev() {
        let m = model.joints[i].link_mass;
        let c = links.coms[i];
        mass += m;
        first_moment += c * m;
        inertia_origin += links.inertias[i] + parallel_axis(m, &c);

        let com = first_moment / mass;
        let inertia_com = inertia_origin - parallel_axis(mass, &com);
        let z = links.axes[i];
        let force = z.cross(&(com - links.origin(i))) * mass;
        let spin = inertia_com * z;
        for j in 0..=i {
            let moment = spin + (com - links.origin(j)).cross(&force);
            let value = links.axes[j].dot(&moment);
            mass_matrix[(j, i)] = value;
            mass_matrix[(i, j)] = value;
        }
    }
    mass_matrix
}

fn parallel_axis(mass: f64, offset: &Vector3<f64>) -> Matrix3<f64> {
    (Matrix3::identity() * offset.norm_squared() - offset * offset.transpose()) * mass
}

/// Task-space inertia with its singularity diagnosis.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInertia {
    pub matrix: DMatrix<f64>,
    /// Condition number of the undamped `J M⁻¹ Jᵀ`.
    pub condition: f64,
    pub singular: bool,
}

/// `(J M⁻¹ Jᵀ + λ I)⁻¹`, damped only when the configuration is flagged singular.
pub fn task_inertia(
    task_jacobian: &DMatrix<f64>,
    mass_cholesky: &Cholesky<f64, Dyn>,
    task: &TaskSpace,
) -> TaskInertia {
    let k = task_jacobian.nrows();
    let mobility = task_jacobian * mass_cholesky.solve(&task_jacobian.transpose());
    let mobility = (&mobility + mobility.transpose()) * 0.5;
    let eigen = SymmetricEigen::new(mobility.clone());
    let (lo, hi) = (eigen.eigenvalues.min(), eigen.eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let singular = !(condition <= task.condition_cap);
    let lambda = if singular {
        let scaled = task.damping * mobility.trace() / k as f64;
        if scaled > 0.0 { scaled } else { task.damping }
    } else {
        0.0
    };
    let damped = mobility + DMatrix::identity(k, k) * lambda;
    let inverse = match Cholesky::new(damped.clone()) {
        Some(chol) => chol.inverse(),
        None => eigen_inverse(&damped, task.damping),
    };
    let matrix = (&inverse + inverse.transpose()) * 0.5;
    TaskInertia { matrix, condition, singular }
}

fn eigen_inverse(matrix: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eigen = SymmetricEigen::new(matrix.clone());
    let inv = eigen.eigenvalues.map(|v| 1.0 / v.max(floor));
    &eigen.eigenvectors * DMatrix::from_diagonal(&inv) * eigen.eigenvectors.transpose()
}

/// `J̇ θ̇` on the active task coordinates, by central difference of `J θ̇`
/// along `theta + t * theta_dot`.
pub fn jdot_qdot(
    model: &RobotModel,
    state: &JointState,
    task: &TaskSpace,
) -> Result<DVector<f64>, DynamicsError> {
    if state.theta_dot.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(task.len()));
    }
    let eval = |sign: f64| -> Result<DVector<f64>, DynamicsError> {
        let theta = &state.theta + &state.theta_dot * (sign * JDOT_STEP);
        let links = LinkFrames::compute(model, &theta);
        let jac = analytic_jacobian(&links.geometric_jacobian(), &links.pose(), task)?;
        Ok(jac * &state.theta_dot)
    };
    Ok((eval(1.0)? - eval(-1.0)?) / (2.0 * JDOT_STEP))
}

/// `J̄ᵀ h − M_x J̇ θ̇` with the dynamically consistent inverse `J̄ = M⁻¹ Jᵀ M_x`.
pub fn task_bias_from(
    task_jacobian: &DMatrix<f64>,
    mass_cholesky: &Cholesky<f64, Dyn>,
    bias: &DVector<f64>,
    task_mass: &DMatrix<f64>,
    jdot_qdot: &DVector<f64>,
) -> DVector<f64> {
    let projected = task_jacobian * mass_cholesky.solve(bias);
    task_mass * (projected - jdot_qdot)
}

pub fn mass_cholesky(mass: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, DynamicsError> {
    Cholesky::new(mass.clone()).ok_or(DynamicsError::SingularMassMatrix)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Validity {
    links: bool,
    velocities: bool,
    jacobian: bool,
    task_jacobian: bool,
    joint_mass: bool,
    bias: bool,
    task_mass: bool,
    task_bias: bool,
}

/// Cached intermediate products for one `(theta, theta_dot)`.
///
/// Products are tagged with the state they were computed at; passing a new
/// state invalidates only what depends on the changed part.
#[derive(Debug, Clone)]
pub struct DynamicsWorkspace {
    task: TaskSpace,
    theta: DVector<f64>,
    theta_dot: DVector<f64>,
    valid: Validity,
    links: Option<LinkFrames>,
    pose: Vector6<f64>,
    pub link_velocities: Vec<Vector6<f64>>,
    pub jacobian: DMatrix<f64>,
    pub task_jacobian: DMatrix<f64>,
    pub joint_mass: DMatrix<f64>,
    mass_cholesky: Option<Cholesky<f64, Dyn>>,
    pub bias: DVector<f64>,
    pub task_mass: DMatrix<f64>,
    pub task_bias: DVector<f64>,
    condition: f64,
    singular: bool,
}

impl DynamicsWorkspace {
    pub fn new(model: &RobotModel, task: TaskSpace) -> Self {
        let n = model.dof();
        let k = task.len();
        Self {
            task,
            theta: DVector::from_element(n, f64::NAN),
            theta_dot: DVector::from_element(n, f64::NAN),
            valid: Validity::default(),
            links: None,
            pose: Vector6::zeros(),
            link_velocities: Vec::new(),
            jacobian: DMatrix::zeros(6, n),
            task_jacobian: DMatrix::zeros(k, n),
            joint_mass: DMatrix::zeros(n, n),
            mass_cholesky: None,
            bias: DVector::zeros(n),
            task_mass: DMatrix::zeros(k, k),
            task_bias: DVector::zeros(k),
            condition: f64::NAN,
            singular: false,
        }
    }

    pub fn task_space(&self) -> &TaskSpace {
        &self.task
    }

    /// Link placements for the last synchronized configuration.
    pub fn link_frames(&self) -> Option<&LinkFrames> {
        self.valid.links.then_some(()).and(self.links.as_ref())
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    fn sync(&mut self, model: &RobotModel, state: &JointState) -> Result<(), DynamicsError> {
        let n = model.dof();
        for len in [state.theta.len(), state.theta_dot.len()] {
            if len != n {
                return Err(DynamicsError::DimensionMismatch { expected: n, got: len });
            }
        }
        if !bits_equal(&self.theta, &state.theta) {
            self.valid = Validity::default();
            self.theta.copy_from(&state.theta);
            self.theta_dot.copy_from(&state.theta_dot);
        } else if !bits_equal(&self.theta_dot, &state.theta_dot) {
            self.valid.velocities = false;
            self.valid.bias = false;
            self.valid.task_bias = false;
            self.theta_dot.copy_from(&state.theta_dot);
        }
        Ok(())
    }

    fn ensure_links(&mut self, model: &RobotModel) -> &LinkFrames {
        if !self.valid.links {
            let links = LinkFrames::compute(model, &self.theta);
            self.pose = links.pose();
            self.links = Some(links);
            self.valid.links = true;
        }
        self.links.as_ref().expect("links computed")
    }

    fn ensure_jacobian(&mut self, model: &RobotModel) {
        if !self.valid.jacobian {
            self.jacobian = self.ensure_links(model).geometric_jacobian();
            self.valid.jacobian = true;
        }
    }

    fn ensure_task_jacobian(&mut self, model: &RobotModel) -> Result<(), DynamicsError> {
        if !self.valid.task_jacobian {
            self.ensure_jacobian(model);
            self.task_jacobian = analytic_jacobian(&self.jacobian, &self.pose, &self.task)?;
            self.valid.task_jacobian = true;
        }
        Ok(())
    }

    fn ensure_velocities(&mut self, model: &RobotModel) {
        if !self.valid.velocities {
            let theta_dot = self.theta_dot.clone();
            self.link_velocities = self.ensure_links(model).link_velocities(&theta_dot);
            self.valid.velocities = true;
        }
    }

    fn ensure_joint_mass(&mut self, model: &RobotModel) -> Result<(), DynamicsError> {
        if !self.valid.joint_mass {
            let mass = composite_rigid_body(model, self.ensure_links(model));
            self.mass_cholesky = Some(mass_cholesky(&mass)?);
            self.joint_mass = mass;
            self.valid.joint_mass = true;
        }
        Ok(())
    }

    fn ensure_bias(&mut self, model: &RobotModel) {
        if !self.valid.bias {
            self.ensure_velocities(model);
            let links = self.links.as_ref().expect("links computed");
            let zero = DVector::zeros(model.dof());
            self.bias = recursive_newton_euler(
                model,
                links,
                &self.link_velocities,
                &self.theta_dot,
                &zero,
                &model.gravity,
            );
            self.valid.bias = true;
        }
    }

    fn ensure_task_mass(&mut self, model: &RobotModel) -> Result<(), DynamicsError> {
        if !self.valid.task_mass {
            self.ensure_task_jacobian(model)?;
            self.ensure_joint_mass(model)?;
            let chol = self.mass_cholesky.as_ref().expect("mass factorized");
            let inertia = task_inertia(&self.task_jacobian, chol, &self.task);
            self.task_mass = inertia.matrix;
            self.condition = inertia.condition;
            self.singular = inertia.singular;
            self.valid.task_mass = true;
        }
        Ok(())
    }

    fn ensure_task_bias(&mut self, model: &RobotModel) -> Result<(), DynamicsError> {
        if !self.valid.task_bias {
            self.ensure_task_mass(model)?;
            self.ensure_bias(model);
            let state = JointState::new(self.theta.clone(), self.theta_dot.clone());
            let jdq = jdot_qdot(model, &state, &self.task)?;
            let chol = self.mass_cholesky.as_ref().expect("mass factorized");
            self.task_bias =
                task_bias_from(&self.task_jacobian, chol, &self.bias, &self.task_mass, &jdq);
            self.valid.task_bias = true;
        }
        Ok(())
    }
}

fn bits_equal(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// End-effector pose for `state.theta`.
pub fn forward_kinematics(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<Vector6<f64>, DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_links(model);
    Ok(ws.pose)
}

/// Geometric Jacobian (linear rows first) and the end-effector twist `J θ̇`.
pub fn jacobian(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<(DMatrix<f64>, Vector6<f64>), DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_jacobian(model);
    let twist = &ws.jacobian * &state.theta_dot;
    Ok((ws.jacobian.clone(), Vector6::from_column_slice(twist.as_slice())))
}

pub fn task_state(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<TaskState, DynamicsError> {
    let (_, twist) = jacobian(model, state, ws)?;
    Ok(TaskState { pose: ws.pose, twist })
}

/// Analytic Jacobian on the active task coordinates.
pub fn task_jacobian(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<DMatrix<f64>, DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_task_jacobian(model)?;
    Ok(ws.task_jacobian.clone())
}

pub fn joint_mass_matrix(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<DMatrix<f64>, DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_joint_mass(model)?;
    Ok(ws.joint_mass.clone())
}

/// Coriolis, centrifugal and gravity torques at zero joint acceleration.
pub fn bias_force(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<DVector<f64>, DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_bias(model);
    Ok(ws.bias.clone())
}

pub fn task_space_mass_matrix(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<TaskInertia, DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_task_mass(model)?;
    Ok(TaskInertia { matrix: ws.task_mass.clone(), condition: ws.condition, singular: ws.singular })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskBias {
    pub vector: DVector<f64>,
    pub singular: bool,
}

pub fn task_space_bias(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<TaskBias, DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_task_bias(model)?;
    Ok(TaskBias { vector: ws.task_bias.clone(), singular: ws.singular })
}

/// Joint torques for a prescribed acceleration, gravity included.
pub fn inverse_dynamics(
    model: &RobotModel,
    state: &JointState,
    theta_ddot: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    let n = model.dof();
    if state.theta.len() != n || theta_ddot.len() != n {
        return Err(DynamicsError::DimensionMismatch { expected: n, got: state.theta.len() });
    }
    let links = LinkFrames::compute(model, &state.theta);
    let velocities = links.link_velocities(&state.theta_dot);
    Ok(recursive_newton_euler(model, &links, &velocities, &state.theta_dot, theta_ddot, &model.gravity))
}

/// Plant acceleration `M⁻¹ (τ − h)`.
pub fn forward_dynamics(
    model: &RobotModel,
    state: &JointState,
    tau: &DVector<f64>,
    ws: &mut DynamicsWorkspace,
) -> Result<DVector<f64>, DynamicsError> {
    if tau.len() != model.dof() {
        return Err(DynamicsError::DimensionMismatch { expected: model.dof(), got: tau.len() });
    }
    ws.sync(model, state)?;
    ws.ensure_joint_mass(model)?;
    ws.ensure_bias(model);
    let chol = ws.mass_cholesky.as_ref().expect("mass factorized");
    Ok(chol.solve(&(tau - &ws.bias)))
}

/// Everything the task-space control law consumes, for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBlocks {
    pub pose: Vector6<f64>,
    pub task_jacobian: DMatrix<f64>,
    pub joint_mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub task_mass: DMatrix<f64>,
    pub task_bias: DVector<f64>,
    pub singular: bool,
}

pub fn control_blocks(
    model: &RobotModel,
    state: &JointState,
    ws: &mut DynamicsWorkspace,
) -> Result<ControlBlocks, DynamicsError> {
    ws.sync(model, state)?;
    ws.ensure_task_bias(model)?;
    Ok(ControlBlocks {
        pose: ws.pose,
        task_jacobian: ws.task_jacobian.clone(),
        joint_mass: ws.joint_mass.clone(),
        bias: ws.bias.clone(),
        task_mass: ws.task_mass.clone(),
        task_bias: ws.task_bias.clone(),
        singular: ws.singular,
    })
}

/// Damped least-squares inverse kinematics on the active task coordinates.
/// Returns the joint angles reached and the final task-space error norm.
pub fn inverse_kinematics(
    model: &RobotModel,
    target: &Vector6<f64>,
    task: &TaskSpace,
    seed: &DVector<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(DVector<f64>, f64), DynamicsError> {
    let mut theta = seed.clone();
    let mut error_norm = f64::INFINITY;
    for _ in 0..max_iterations {
        let links = LinkFrames::compute(model, &theta);
        let error = task.select(&pose_error(target, &links.pose()));
        error_norm = error.norm();
        if error_norm < tolerance {
            break;
        }
        let jac = analytic_jacobian(&links.geometric_jacobian(), &links.pose(), task)?;
        let k = task.len();
        let damping = 1e-4;
        let jjt = &jac * jac.transpose() + DMatrix::identity(k, k) * damping;
        let step = jac.transpose()
            * jjt.cholesky().ok_or(DynamicsError::SingularMassMatrix)?.solve(&error);
        theta += step;
    }
    Ok((theta, error_norm))
}

/// `target − actual` with Euler differences wrapped to (−π, π].
pub fn pose_error(target: &Vector6<f64>, actual: &Vector6<f64>) -> Vector6<f64> {
    let mut e = target - actual;
    for i in 3..6 {
        e[i] = euler::wrap_angle(e[i]);
    }
    e
}
