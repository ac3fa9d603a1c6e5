//! Robot back end for embodied-AI control: serial-arm dynamics, cubic
//! trajectories with adaptive-length selection, task-space computed-torque
//! control, approximate matrix reuse, and a discrete-event model of the
//! inference/control pipeline.

pub mod adaptive;
pub mod approx;
pub mod controller;
pub mod dynamics;
pub mod flops;
pub mod model;
pub mod pipeline;
pub mod trajectory;

pub use model::{load_model, JointSpec, JointState, ModelError, RobotModel};

#[cfg(test)]
pub(crate) mod test_support {
    use std::path::PathBuf;

    use nalgebra::Isometry3;

    use crate::model::{load_model, RobotModel};

    pub fn data_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
    }

    pub fn panda() -> RobotModel {
        load_model(data_dir().join("panda.json")).expect("shipped panda model loads")
    }

    /// First six Panda joints, giving a square 6×6 task Jacobian.
    pub fn panda_six() -> RobotModel {
        let mut model = panda();
        let wrist = model.joints.pop().expect("seven joints").parent_transform;
        model.end_effector = wrist * Isometry3::translation(0.0, 0.0, 0.2104);
        model.name = "panda-6".into();
        model
    }

    pub fn two_link() -> RobotModel {
        RobotModel::planar_two_link(1.0, 1.0, 1.0, 1.0)
    }

    /// Two-link arm, the shipped regression trajectory, and a rest state 1 cm
    /// off its start along x.
    pub fn regression_case() -> (RobotModel, crate::trajectory::CubicTrajectory, crate::model::JointState) {
        use crate::controller::{default_seed, state_at_pose};
        use crate::dynamics::TaskSpace;
        use crate::trajectory::{fit_cubic, read_samples};
        let model = two_link();
        let samples = read_samples(data_dir().join("trajectories/regression.csv")).unwrap();
        let traj = fit_cubic(&samples).unwrap().trajectory;
        let offset = nalgebra::Vector6::new(0.01, 0.0, 0.0, 0.0, 0.0, 0.0);
        let start = traj.pose_at(0.0).unwrap();
        let state =
            state_at_pose(&model, &TaskSpace::planar_xy(), &start, &offset, &default_seed(&model)).unwrap();
        (model, traj, state)
    }
}
