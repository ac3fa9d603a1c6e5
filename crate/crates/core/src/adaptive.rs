//! Adaptive trajectory length: pick the earliest waypoint where the motion
//! becomes significant, either through a gripper event or through curvature.
//!
//! Waypoints `B..F` follow the anchor `A`. For each candidate `P` in `[B, F)`
//! the gripper is tested first, then every earlier point `p` in `(A, P]` is
//! tested against the triangle `A p P`: the interior angles at `A` and `P`
//! and the distance from `p` to the line `AP`. The first candidate that fires
//! is the endpoint; otherwise the trajectory runs to `F`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flops::{count_flops, Counted, Real, V3};
use crate::trajectory::{Waypoint, Waypoints};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptiveError {
    #[error("no waypoints")]
    Empty,
    #[error("anchor and endpoint coincide")]
    DegenerateChord,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// How gripper states end a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripperMode {
    /// Stop at `P` when the gripper is set at `P` or at its successor.
    #[default]
    Level,
    /// Stop at `P` when the gripper state differs between `P` and its successor.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    /// Meters.
    pub distance_threshold: f64,
    /// Radians.
    pub angle_threshold: f64,
    /// Waypoint spacing, seconds.
    pub step: f64,
    pub gripper_mode: GripperMode,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 0.01,
            angle_threshold: FRAC_PI_2,
            step: crate::trajectory::DEFAULT_STEP,
            gripper_mode: GripperMode::Level,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<(), AdaptiveError> {
        if !(self.distance_threshold.is_finite() && self.distance_threshold > 0.0) {
            return Err(AdaptiveError::InvalidConfig(format!(
                "distance_threshold must be positive, got {}",
                self.distance_threshold
            )));
        }
        if !(self.angle_threshold > 0.0 && self.angle_threshold < std::f64::consts::PI) {
            return Err(AdaptiveError::InvalidConfig(format!(
                "angle_threshold must lie in (0, pi), got {}",
                self.angle_threshold
            )));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(AdaptiveError::InvalidConfig(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

/// The test that ended the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Gripper,
    AngleA,
    AngleP,
    Distance,
    None,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trigger::Gripper => "gripper",
            Trigger::AngleA => "angle_a",
            Trigger::AngleP => "angle_p",
            Trigger::Distance => "distance",
            Trigger::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    /// Index into the waypoint list; 0 is the first waypoint after the anchor.
    pub index: usize,
    pub trigger: Trigger,
    /// Index of the point `p` that violated a curvature test.
    pub witness: Option<usize>,
}

/// Position and gripper state of one waypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointState {
    pub position: Vector3<f64>,
    pub gripper: bool,
}

impl WaypointState {
    pub fn new(position: [f64; 3], gripper: bool) -> Self {
        Self { position: Vector3::from(position), gripper }
    }
}

impl From<&Waypoint> for WaypointState {
    fn from(w: &Waypoint) -> Self {
        Self { position: w.pose.fixed_rows::<3>(0).into_owned(), gripper: w.gripper }
    }
}

/// Interior angles of the triangle `A p P` and the distance from `p` to line `AP`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureChecks {
    pub angle_at_anchor: f64,
    pub angle_at_endpoint: f64,
    pub distance: f64,
    pub anchor_violation: bool,
    pub endpoint_violation: bool,
    pub distance_violation: bool,
}

impl CurvatureChecks {
    pub fn any(&self) -> bool {
        self.anchor_violation || self.endpoint_violation || self.distance_violation
    }
}

fn angle_between(u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// A point coinciding with a vertex contributes a zero angle.
pub fn curvature_checks(
    anchor: &Vector3<f64>,
    p: &Vector3<f64>,
    endpoint: &Vector3<f64>,
    cfg: &AdaptiveConfig,
) -> Result<CurvatureChecks, AdaptiveError> {
    let chord = endpoint - anchor;
    if chord.norm_squared() == 0.0 {
        return Err(AdaptiveError::DegenerateChord);
    }
    let angle_at_anchor = angle_between(&(p - anchor), &chord);
    let angle_at_endpoint = angle_between(&(p - endpoint), &(-chord));
    let distance = (p - anchor).cross(&chord).norm() / chord.norm();
    Ok(CurvatureChecks {
        angle_at_anchor,
        angle_at_endpoint,
        distance,
        anchor_violation: angle_at_anchor > cfg.angle_threshold,
        endpoint_violation: angle_at_endpoint > cfg.angle_threshold,
        distance_violation: distance > cfg.distance_threshold,
    })
}

/// Curvature tests of every `p` in `(A, P]` against chord `AP`, short-circuiting.
///
/// Angles are compared through cosines, `angle > t ⇔ cos(angle) < cos(t)`, so
/// no inverse trigonometry runs in the scan.
fn scan_curvature<T: Real>(
    anchor: &V3<T>,
    prefix: &[V3<T>],
    cos_threshold: T,
    distance_sq: T,
) -> Option<(Trigger, usize)> {
    let endpoint = prefix.last().expect("non-empty prefix");
    let v = endpoint.sub(anchor);
    let vv = v.dot(&v);
    if vv == T::zero() {
        return None;
    }
    let v_norm = vv.sqrt();
    for (k, p) in prefix.iter().enumerate() {
        let u = p.sub(anchor);
        let uu = u.dot(&u);
        let uv = u.dot(&v);
        if uv < cos_threshold * uu.sqrt() * v_norm {
            return Some((Trigger::AngleA, k));
        }
        // With w = p − P: w·(A − P) = |v|² − u·v and |w|² = |u|² − 2 u·v + |v|².
        let wv = vv - uv;
        let ww = uu - T::from_f64(2.0) * uv + vv;
        if wv < cos_threshold * ww.sqrt() * v_norm {
            return Some((Trigger::AngleP, k));
        }
        if uu - uv * uv / vv > distance_sq {
            return Some((Trigger::Distance, k));
        }
    }
    None
}

fn gripper_fires(mode: GripperMode, here: bool, next: bool) -> bool {
    match mode {
        GripperMode::Level => here || next,
        GripperMode::Edge => here != next,
    }
}

/// Scan generic over the arithmetic type so that it can be instrumented.
pub fn select_endpoint_in<T: Real>(
    anchor: &Vector3<f64>,
    waypoints: &[WaypointState],
    cfg: &AdaptiveConfig,
) -> Result<Endpoint, AdaptiveError> {
    cfg.validate()?;
    if waypoints.is_empty() {
        return Err(AdaptiveError::Empty);
    }
    let anchor = V3::<T>::from_f64((*anchor).into());
    let points: Vec<V3<T>> = waypoints.iter().map(|w| V3::from_f64(w.position.into())).collect();
    let cos_threshold = T::from_f64(cfg.angle_threshold.cos());
    let d = T::from_f64(cfg.distance_threshold);
    let distance_sq = d * d;
    let last = waypoints.len() - 1;
    for i in 0..last {
        if gripper_fires(cfg.gripper_mode, waypoints[i].gripper, waypoints[i + 1].gripper) {
            return Ok(Endpoint { index: i, trigger: Trigger::Gripper, witness: None });
        }
        if let Some((trigger, k)) = scan_curvature(&anchor, &points[..=i], cos_threshold, distance_sq) {
            return Ok(Endpoint { index: i, trigger, witness: Some(k) });
        }
    }
    // The final waypoint is returned either way; its tests only label why.
    let (trigger, witness) = match scan_curvature(&anchor, &points, cos_threshold, distance_sq) {
        Some((t, k)) => (t, Some(k)),
        None => (Trigger::None, None),
    };
    Ok(Endpoint { index: last, trigger, witness })
}

pub fn select_endpoint(
    anchor: &Vector3<f64>,
    waypoints: &[WaypointState],
    cfg: &AdaptiveConfig,
) -> Result<Endpoint, AdaptiveError> {
    select_endpoint_in::<f64>(anchor, waypoints, cfg)
}

/// [`select_endpoint`] together with its floating-point operation count.
pub fn select_endpoint_counted(
    anchor: &Vector3<f64>,
    waypoints: &[WaypointState],
    cfg: &AdaptiveConfig,
) -> Result<(Endpoint, u64), AdaptiveError> {
    let (result, flops) = count_flops(|| select_endpoint_in::<Counted>(anchor, waypoints, cfg));
    result.map(|e| (e, flops))
}

/// Endpoint selection on waypoints extracted from a trajectory.
pub fn select_from_waypoints(waypoints: &Waypoints, cfg: &AdaptiveConfig) -> Result<Endpoint, AdaptiveError> {
    let anchor = waypoints.anchor.pose.fixed_rows::<3>(0).into_owned();
    let states: Vec<WaypointState> = waypoints.points.iter().map(WaypointState::from).collect();
    select_endpoint(&anchor, &states, cfg)
}
