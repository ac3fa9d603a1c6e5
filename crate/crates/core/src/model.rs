//! Serial-arm description shared by every dynamics computation.
//!
//! A [`RobotModel`] is a flat chain of revolute joints ordered base to tip.
//! Each joint carries the rigid transform from its parent frame (at zero
//! angle), its rotation axis in the local frame, and the inertial parameters
//! of the link it drives. Models are immutable once validated and can be
//! shared freely between threads.

use std::fs;
use std::path::Path;

use nalgebra::{
    DVector, Isometry3, Matrix3, Quaternion, SymmetricEigen, Translation3, Unit, UnitQuaternion,
    Vector3,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted deviation of an axis or quaternion norm from one.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;
/// Largest accepted element-wise asymmetry of a link inertia matrix.
pub const INERTIA_SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid joint {joint}: {reason}")]
    InvalidJoint { joint: usize, reason: String },
}

/// One revolute joint and the link it moves.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    /// Transform from the parent joint frame to this joint frame at zero angle.
    pub parent_transform: Isometry3<f64>,
    /// Revolute axis in the local frame.
    pub axis: Unit<Vector3<f64>>,
    /// Link mass in kg.
    pub link_mass: f64,
    /// Center of mass in the local frame, meters.
    pub link_com: Vector3<f64>,
    /// Rotational inertia about the center of mass, kg·m², local frame.
    pub link_inertia: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    /// Gravitational acceleration in the base frame, m/s².
    pub gravity: Vector3<f64>,
    pub joints: Vec<JointSpec>,
    /// Tool frame relative to the last joint frame.
    pub end_effector: Isometry3<f64>,
}

/// Joint angles and velocities of an n-joint arm.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub theta: DVector<f64>,
    pub theta_dot: DVector<f64>,
}

impl JointState {
    pub fn new(theta: DVector<f64>, theta_dot: DVector<f64>) -> Self {
        assert_eq!(theta.len(), theta_dot.len(), "theta and theta_dot differ in length");
        Self { theta, theta_dot }
    }

    pub fn from_slices(theta: &[f64], theta_dot: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(theta), DVector::from_column_slice(theta_dot))
    }

    /// Configuration at rest.
    pub fn at_rest(theta: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(theta), DVector::zeros(theta.len()))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(n))
    }

    pub fn dof(&self) -> usize {
        self.theta.len()
    }
}

impl RobotModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Check every model invariant, naming the first offending joint.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.joints.is_empty() {
            return Err(ModelError::Invalid("model has no joints".into()));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(ModelError::Invalid("gravity is not finite".into()));
        }
        check_transform(&self.end_effector)
            .map_err(|reason| ModelError::Invalid(format!("end effector: {reason}")))?;
        for (joint, spec) in self.joints.iter().enumerate() {
            spec.validate().map_err(|reason| ModelError::InvalidJoint { joint, reason })?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let model = Self::from(file);
        model.validate()?;
        Ok(model)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Planar two-link arm with point masses at the link tips, both axes +z.
    pub fn planar_two_link(l1: f64, l2: f64, m1: f64, m2: f64) -> Self {
        let point_link = |offset: f64, length: f64, mass: f64| JointSpec {
            parent_transform: Isometry3::translation(offset, 0.0, 0.0),
            axis: Vector3::z_axis(),
            link_mass: mass,
            link_com: Vector3::new(length, 0.0, 0.0),
            link_inertia: Matrix3::zeros(),
        };
        Self {
            name: "planar-2link".into(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            joints: vec![point_link(0.0, l1, m1), point_link(l1, l2, m2)],
            end_effector: Isometry3::translation(l2, 0.0, 0.0),
        }
    }

    /// Single link of mass `mass` with its center of mass at distance `length`
    /// along local x, rotating about −y so that positive angles raise the mass.
    pub fn pendulum(length: f64, mass: f64) -> Self {
        Self {
            name: "pendulum".into(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            joints: vec![JointSpec {
                parent_transform: Isometry3::identity(),
                axis: -Vector3::y_axis(),
                link_mass: mass,
                link_com: Vector3::new(length, 0.0, 0.0),
                link_inertia: Matrix3::zeros(),
            }],
            end_effector: Isometry3::translation(length, 0.0, 0.0),
        }
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }
}

/// Read and validate a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<RobotModel, ModelError> {
    let text = fs::read_to_string(path)?;
    RobotModel::from_json_str(&text)
}

impl JointSpec {
    fn validate(&self) -> Result<(), String> {
        check_transform(&self.parent_transform)?;
        if !(self.link_mass.is_finite() && self.link_mass > 0.0) {
            return Err(format!("mass must be positive, got {}", self.link_mass));
        }
        let axis_norm = self.axis.as_ref().norm();
        if !axis_norm.is_finite() || (axis_norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(format!("axis is not unit length (norm {axis_norm})"));
        }
        if !self.link_com.iter().all(|c| c.is_finite()) {
            return Err("center of mass is not finite".into());
        }
        let inertia = &self.link_inertia;
        if !inertia.iter().all(|v| v.is_finite()) {
            return Err("inertia is not finite".into());
        }
        let asymmetry = (inertia - inertia.transpose()).abs().max();
        if asymmetry > INERTIA_SYMMETRY_TOLERANCE {
            return Err(format!("inertia is asymmetric by {asymmetry}"));
        }
        let symmetric = (inertia + inertia.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(symmetric).eigenvalues.min();
        let scale = inertia.abs().max().max(1.0);
        if min_eig < -1e-12 * scale {
            return Err(format!("inertia is not positive semi-definite (eigenvalue {min_eig})"));
        }
        Ok(())
    }
}

fn check_transform(transform: &Isometry3<f64>) -> Result<(), String> {
    let q = transform.rotation.quaternion();
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(format!("rotation quaternion is not unit length (norm {norm})"));
    }
    if !transform.translation.vector.iter().all(|t| t.is_finite()) {
        return Err("translation is not finite".into());
    }
    Ok(())
}

// On-disk schema. Rotations are unit quaternions in (w, x, y, z) order and
// inertia is row-major. Values are carried through unchanged so that a
// load/save cycle is bit-exact.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    name: String,
    gravity: [f64; 3],
    joints: Vec<JointFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end_effector: Option<TransformFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointFile {
    rotation: [f64; 4],
    translation: [f64; 3],
    axis: [f64; 3],
    mass: f64,
    com: [f64; 3],
    inertia: [f64; 9],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformFile {
    rotation: [f64; 4],
    translation: [f64; 3],
}

fn isometry_from(rotation: [f64; 4], translation: [f64; 3]) -> Isometry3<f64> {
    let [w, x, y, z] = rotation;
    Isometry3::from_parts(
        Translation3::new(translation[0], translation[1], translation[2]),
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)),
    )
}

fn isometry_parts(iso: &Isometry3<f64>) -> ([f64; 4], [f64; 3]) {
    let q = iso.rotation.quaternion();
    let t = iso.translation.vector;
    ([q.w, q.i, q.j, q.k], [t.x, t.y, t.z])
}

impl From<ModelFile> for RobotModel {
    fn from(file: ModelFile) -> Self {
        let joints = file
            .joints
            .into_iter()
            .map(|j| JointSpec {
                parent_transform: isometry_from(j.rotation, j.translation),
                axis: Unit::new_unchecked(Vector3::from(j.axis)),
                link_mass: j.mass,
                link_com: Vector3::from(j.com),
                link_inertia: Matrix3::from_row_slice(&j.inertia),
            })
            .collect();
        let end_effector = file
            .end_effector
            .map(|t| isometry_from(t.rotation, t.translation))
            .unwrap_or_else(Isometry3::identity);
        RobotModel { name: file.name, gravity: Vector3::from(file.gravity), joints, end_effector }
    }
}

impl From<&RobotModel> for ModelFile {
    fn from(model: &RobotModel) -> Self {
        let joints = model
            .joints
            .iter()
            .map(|j| {
                let (rotation, translation) = isometry_parts(&j.parent_transform);
                let mut inertia = [0.0; 9];
                for r in 0..3 {
                    for c in 0..3 {
                        inertia[3 * r + c] = j.link_inertia[(r, c)];
                    }
                }
                JointFile {
                    rotation,
                    translation,
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    mass: j.link_mass,
                    com: [j.link_com.x, j.link_com.y, j.link_com.z],
                    inertia,
                }
            })
            .collect();
        let end_effector = (model.end_effector != Isometry3::identity()).then(|| {
            let (rotation, translation) = isometry_parts(&model.end_effector);
            TransformFile { rotation, translation }
        });
        ModelFile {
            name: model.name.clone(),
            gravity: [model.gravity.x, model.gravity.y, model.gravity.z],
            joints,
            end_effector,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LINK: &str = r#"{
        "name": "two",
        "gravity": [0, 0, -9.81],
        "joints": [
            {"rotation": [1,0,0,0], "translation": [0,0,0], "axis": [0,0,1],
             "mass": 1, "com": [1,0,0], "inertia": [0,0,0,0,0,0,0,0,0]},
            {"rotation": [1,0,0,0], "translation": [1,0,0], "axis": [0,0,1],
             "mass": 1, "com": [1,0,0], "inertia": [0,0,0,0,0,0,0,0,0]}
        ],
        "end_effector": {"rotation": [1,0,0,0], "translation": [1,0,0]}
    }"#;

    #[test]
    fn parses_minimal_two_link() {
        let model = RobotModel::from_json_str(TWO_LINK).unwrap();
        assert_eq!(model.dof(), 2);
        assert_eq!(model, RobotModel { name: "two".into(), ..RobotModel::planar_two_link(1.0, 1.0, 1.0, 1.0) });
    }

    fn with_edit(edit: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut value: serde_json::Value = serde_json::from_str(TWO_LINK).unwrap();
        edit(&mut value);
        value.to_string()
    }

    fn expect_joint_error(text: &str, expected_joint: usize) {
        match RobotModel::from_json_str(text) {
            Err(ModelError::InvalidJoint { joint, .. }) => assert_eq!(joint, expected_joint),
            other => panic!("expected joint error, got {other:?}"),
        }
    }

    #[test]
    fn zero_mass_names_joint_zero() {
        expect_joint_error(&with_edit(|v| v["joints"][0]["mass"] = 0.0.into()), 0);
    }

    #[test]
    fn rejects_bad_axis_negative_mass_and_asymmetric_inertia() {
        let text = with_edit(|v| v["joints"][1]["axis"] = serde_json::json!([0, 0, 1.00001]));
        expect_joint_error(&text, 1);
        let text = with_edit(|v| {
            v["joints"][0]["inertia"] = serde_json::json!([1, 1e-8, 0, 0, 1, 0, 0, 0, 1])
        });
        expect_joint_error(&text, 0);
        expect_joint_error(&with_edit(|v| v["joints"][1]["mass"] = (-2.0).into()), 1);
    }

    #[test]
    fn rejects_empty_chain_and_garbage() {
        let empty = r#"{"name": "x", "gravity": [0,0,0], "joints": []}"#;
        assert!(matches!(RobotModel::from_json_str(empty), Err(ModelError::Invalid(_))));
        assert!(matches!(RobotModel::from_json_str("{not json"), Err(ModelError::Parse(_))));
    }

    #[test]
    fn tolerates_small_asymmetry() {
        let text = with_edit(|v| {
            v["joints"][0]["inertia"] = serde_json::json!([1, 1e-10, 0, 0, 1, 0, 0, 0, 1])
        });
        assert!(RobotModel::from_json_str(&text).is_ok());
    }

    #[test]
    fn rejects_indefinite_inertia() {
        let text = with_edit(|v| {
            v["joints"][0]["inertia"] = serde_json::json!([1, 0, 0, 0, -1, 0, 0, 0, 1])
        });
        expect_joint_error(&text, 0);
    }
}
