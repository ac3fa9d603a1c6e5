//! Independent numerical references for the dynamics kernels.
//!
//! Everything here is built from link placements alone: Jacobians by finite
//! differences of forward kinematics, the mass matrix from the kinetic
//! energy of each link, and the bias force from the Euler-Lagrange equations
//! differentiated numerically.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    bias_force, jacobian, joint_mass_matrix, DynamicsError, DynamicsWorkspace, LinkFrames,
    TaskSpace,
};
use crate::model::{JointState, RobotModel};

/// Step of the central difference checked against the Jacobian.
pub const JACOBIAN_FD_STEP: f64 = 1e-6;
/// Step of the five-point stencils used by the energy-based references.
pub const ENERGY_FD_STEP: f64 = 1e-3;

fn five_point<T, F>(f: F, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    (f(-2.0 * h) - f(2.0 * h) + (f(h) - f(-h)) * 8.0) * (1.0 / (12.0 * h))
}

fn vee(skew: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (skew[(2, 1)] - skew[(1, 2)]),
        0.5 * (skew[(0, 2)] - skew[(2, 0)]),
        0.5 * (skew[(1, 0)] - skew[(0, 1)]),
    )
}

fn perturbed(theta: &DVector<f64>, j: usize, delta: f64) -> DVector<f64> {
    let mut t = theta.clone();
    t[j] += delta;
    t
}

/// Geometric Jacobian by central differences of the end-effector placement.
pub fn finite_difference_jacobian(model: &RobotModel, theta: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let n = model.dof();
    let mut jac = DMatrix::zeros(6, n);
    let rotation = LinkFrames::compute(model, theta).end_effector.rotation.to_rotation_matrix();
    for j in 0..n {
        let plus = LinkFrames::compute(model, &perturbed(theta, j, step)).end_effector;
        let minus = LinkFrames::compute(model, &perturbed(theta, j, -step)).end_effector;
        let dp = (plus.translation.vector - minus.translation.vector) / (2.0 * step);
        let dr = (plus.rotation.to_rotation_matrix().matrix() - minus.rotation.to_rotation_matrix().matrix())
            / (2.0 * step);
        let w = vee(&(dr * rotation.matrix().transpose()));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&dp);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&w);
    }
    jac
}

/// Mass matrix from `sum_i m_i Jv_iᵀ Jv_i + Jw_iᵀ I_i Jw_i` with per-link
/// Jacobians obtained numerically.
pub fn energy_mass_matrix(model: &RobotModel, theta: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dof();
    let h = ENERGY_FD_STEP;
    let base = LinkFrames::compute(model, theta);
    let shifted: Vec<[LinkFrames; 4]> = (0..n)
        .map(|j| [-2.0, -1.0, 1.0, 2.0].map(|s| LinkFrames::compute(model, &perturbed(theta, j, s * h))))
        .collect();
    let stencil = |v: [f64; 4]| (v[0] - v[3] + 8.0 * (v[2] - v[1])) / (12.0 * h);
    let mut mass = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut jv = DMatrix::zeros(3, n);
        let mut jw = DMatrix::zeros(3, n);
        let r_t = base.frames[i].rotation.to_rotation_matrix().matrix().transpose();
        for j in 0..n {
            let s = &shifted[j];
            for a in 0..3 {
                jv[(a, j)] = stencil([0, 1, 2, 3].map(|k| s[k].coms[i][a]));
            }
            let mut dr = Matrix3::zeros();
            for a in 0..3 {
                for b in 0..3 {
                    dr[(a, b)] = stencil(
                        [0, 1, 2, 3].map(|k| s[k].frames[i].rotation.to_rotation_matrix().matrix()[(a, b)]),
                    );
                }
            }
            let w = vee(&(dr * r_t));
            jw.fixed_view_mut::<3, 1>(0, j).copy_from(&w);
        }
        let m = model.joints[i].link_mass;
        mass += jv.transpose() * &jv * m + jw.transpose() * base.inertias[i] * &jw;
    }
    mass
}

/// Gravitational potential energy `−Σ m_i g·c_i`.
pub fn potential_energy(model: &RobotModel, theta: &DVector<f64>) -> f64 {
    let links = LinkFrames::compute(model, theta);
    model
        .joints
        .iter()
        .zip(&links.coms)
        .map(|(j, c)| -j.link_mass * model.gravity.dot(c))
        .sum()
}

/// `d/dt ∂L/∂θ̇ − ∂L/∂θ` at zero joint acceleration, with `L = ½ θ̇ᵀ M θ̇ − V`.
pub fn lagrangian_bias(model: &RobotModel, state: &JointState) -> DVector<f64> {
    let n = model.dof();
    let h = ENERGY_FD_STEP;
    let theta = &state.theta;
    let qd = &state.theta_dot;
    let m_dot = five_point(|s| energy_mass_matrix(model, &(theta + qd * s)), h);
    let mut bias = m_dot * qd;
    for k in 0..n {
        let dm = five_point(|s| energy_mass_matrix(model, &perturbed(theta, k, s)), h);
        let dv = five_point(|s| potential_energy(model, &perturbed(theta, k, s)), h);
        bias[k] += dv - 0.5 * qd.dot(&(dm * qd));
    }
    bias
}

/// Worst-case deviations of the kernels from the references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub model: String,
    pub seed: u64,
    pub configurations: usize,
    pub jacobian_max_rel_error: f64,
    pub mass_max_rel_error: f64,
    pub bias_max_abs_error: f64,
    pub mass_max_asymmetry: f64,
    pub mass_min_eigenvalue: f64,
    pub thresholds: CheckThresholds,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckThresholds {
    pub jacobian_rel: f64,
    pub mass_rel: f64,
    pub bias_abs: f64,
    pub mass_asymmetry: f64,
}

impl Default for CheckThresholds {
    fn default() -> Self {
        Self { jacobian_rel: 1e-5, mass_rel: 1e-6, bias_abs: 1e-6, mass_asymmetry: 1e-9 }
    }
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.norm();
    if scale == 0.0 {
        (a - b).norm()
    } else {
        (a - b).norm() / scale
    }
}

/// Uniform joint angles in (−π, π] and rates in [−1, 1], reproducible from `seed`.
pub fn random_states(n: usize, seed: u64, count: usize) -> Vec<JointState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let theta = DVector::from_fn(n, |_, _| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
            let theta_dot = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            JointState::new(theta, theta_dot)
        })
        .collect()
}

/// Compare the Jacobian, mass matrix and bias kernels against the references
/// over `count` seeded random states.
pub fn run_checks(model: &RobotModel, seed: u64, count: usize) -> Result<CheckReport, DynamicsError> {
    let thresholds = CheckThresholds::default();
    let mut ws = DynamicsWorkspace::new(model, TaskSpace::full());
    let mut report = CheckReport {
        model: model.name.clone(),
        seed,
        configurations: count,
        jacobian_max_rel_error: 0.0,
        mass_max_rel_error: 0.0,
        bias_max_abs_error: 0.0,
        mass_max_asymmetry: 0.0,
        mass_min_eigenvalue: f64::INFINITY,
        thresholds,
        failures: Vec::new(),
    };
    for state in random_states(model.dof(), seed, count) {
        let (jac, _) = jacobian(model, &state, &mut ws)?;
        let fd = finite_difference_jacobian(model, &state.theta, JACOBIAN_FD_STEP);
        report.jacobian_max_rel_error = report.jacobian_max_rel_error.max(relative(&jac, &fd));

        let mass = joint_mass_matrix(model, &state, &mut ws)?;
        let reference = energy_mass_matrix(model, &state.theta);
        report.mass_max_rel_error = report.mass_max_rel_error.max(relative(&mass, &reference));
        report.mass_max_asymmetry = report.mass_max_asymmetry.max((&mass - mass.transpose()).abs().max());
        let min_eig = mass.clone().symmetric_eigen().eigenvalues.min();
        report.mass_min_eigenvalue = report.mass_min_eigenvalue.min(min_eig);

        let bias = bias_force(model, &state, &mut ws)?;
        let reference = lagrangian_bias(model, &state);
        report.bias_max_abs_error = report.bias_max_abs_error.max((bias - reference).amax());
    }
    let checks = [
        ("jacobian", report.jacobian_max_rel_error, thresholds.jacobian_rel),
        ("mass_matrix", report.mass_max_rel_error, thresholds.mass_rel),
        ("bias_force", report.bias_max_abs_error, thresholds.bias_abs),
        ("mass_symmetry", report.mass_max_asymmetry, thresholds.mass_asymmetry),
    ];
    for (name, value, limit) in checks {
        if !(value < limit) {
            report.failures.push(format!("{name}: {value:e} exceeds {limit:e}"));
        }
    }
    if !(report.mass_min_eigenvalue > 0.0) {
        report.failures.push(format!("mass_positive_definite: minimum eigenvalue {:e}", report.mass_min_eigenvalue));
    }
    Ok(report)
}
