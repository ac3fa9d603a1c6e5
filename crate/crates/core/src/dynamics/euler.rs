//! Z-Y-X Euler angles: `R = Rz(alpha) * Ry(beta) * Rx(gamma)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Half-width of the excluded band around `|beta| = pi/2`.
pub const GIMBAL_GUARD: f64 = 1e-3;

/// Wrap an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Extract (alpha, beta, gamma), each wrapped to (−π, π].
pub fn euler_zyx(rotation: &Matrix3<f64>) -> Vector3<f64> {
    let r = rotation;
    let beta = (-r[(2, 0)]).atan2((r[(0, 0)].powi(2) + r[(1, 0)].powi(2)).sqrt());
    let alpha = r[(1, 0)].atan2(r[(0, 0)]);
    let gamma = r[(2, 1)].atan2(r[(2, 2)]);
    Vector3::new(wrap_angle(alpha), wrap_angle(beta), wrap_angle(gamma))
}

pub fn rotation_from_euler(euler: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), euler.x)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), euler.y)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), euler.z)
}

/// True when the rate map is too close to its singularity at `|beta| = pi/2`.
pub fn near_gimbal_lock(beta: f64) -> bool {
    (beta.abs() - FRAC_PI_2).abs() < GIMBAL_GUARD
}

/// Matrix mapping Euler rates to world angular velocity, `omega = E * euler_dot`.
pub fn euler_rate_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sa, ca) = euler.x.sin_cos();
    let (sb, cb) = euler.y.sin_cos();
    Matrix3::new(0.0, -sa, ca * cb, 0.0, ca, sa * cb, 1.0, 0.0, -sb)
}

/// Inverse of [`euler_rate_matrix`] in closed form. Callers check
/// [`near_gimbal_lock`] first.
pub fn inverse_euler_rate_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sa, ca) = euler.x.sin_cos();
    let (sb, cb) = euler.y.sin_cos();
    Matrix3::new(ca * sb, sa * sb, cb, -sa * cb, ca * cb, 0.0, ca, sa, 0.0) / cb
}
