//! Cubic end-effector trajectories.
//!
//! Each of the six task coordinates follows `a t³ + b t² + c t + d` over
//! `[0, duration]`; the gripper is a piecewise-constant binary schedule kept
//! outside the polynomial.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DIM_NAMES: [&str; 6] = ["x", "y", "z", "alpha", "beta", "gamma"];

/// Default waypoint spacing, seconds.
pub const DEFAULT_STEP: f64 = 3.3e-3;

pub type Coefficients = SMatrix<f64, 6, 4>;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("time {t} s is outside [0, {duration}] s")]
    OutOfDomain { t: f64, duration: f64 },
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("gripper breakpoints must be strictly increasing within [0, duration]")]
    InvalidGripper,
    #[error("fit needs at least 4 distinct sample times, got {0}")]
    RankDeficient(usize),
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("no samples")]
    Empty,
    #[error("waypoint step must satisfy 0 < step <= duration, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Vector6<f64>,
    pub gripper: bool,
}

/// Pose and its first two derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub pose: Vector6<f64>,
    pub velocity: Vector6<f64>,
    pub acceleration: Vector6<f64>,
    pub gripper: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicTrajectory {
    coeffs: Coefficients,
    duration: f64,
    gripper: Vec<(f64, bool)>,
}

impl CubicTrajectory {
    /// Rows of `coeffs` are task coordinates, columns are `(a, b, c, d)`.
    pub fn new(
        coeffs: Coefficients,
        duration: f64,
        gripper: Vec<(f64, bool)>,
    ) -> Result<Self, TrajectoryError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(TrajectoryError::InvalidDuration(duration));
        }
        let in_range = gripper.iter().all(|&(t, _)| (0.0..=duration).contains(&t));
        let increasing = gripper.windows(2).all(|w| w[0].0 < w[1].0);
        if !in_range || !increasing {
            return Err(TrajectoryError::InvalidGripper);
        }
        Ok(Self { coeffs, duration, gripper })
    }

    /// Hold `pose` for `duration` seconds.
    pub fn constant(pose: Vector6<f64>, duration: f64) -> Result<Self, TrajectoryError> {
        let mut coeffs = Coefficients::zeros();
        coeffs.set_column(3, &pose);
        Self::new(coeffs, duration, Vec::new())
    }

    /// Move from `start` to `end` with zero velocity at both ends.
    pub fn rest_to_rest(
        start: Vector6<f64>,
        end: Vector6<f64>,
        duration: f64,
    ) -> Result<Self, TrajectoryError> {
        let delta = end - start;
        let mut coeffs = Coefficients::zeros();
        coeffs.set_column(0, &(delta * (-2.0 / duration.powi(3))));
        coeffs.set_column(1, &(delta * (3.0 / duration.powi(2))));
        coeffs.set_column(3, &start);
        Self::new(coeffs, duration, Vec::new())
    }

    pub fn with_gripper(self, gripper: Vec<(f64, bool)>) -> Result<Self, TrajectoryError> {
        Self::new(self.coeffs, self.duration, gripper)
    }

    pub fn coeffs(&self) -> &Coefficients {
        &self.coeffs
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn gripper_breakpoints(&self) -> &[(f64, bool)] {
        &self.gripper
    }

    fn check_domain(&self, t: f64) -> Result<(), TrajectoryError> {
        if (0.0..=self.duration).contains(&t) {
            Ok(())
        } else {
            Err(TrajectoryError::OutOfDomain { t, duration: self.duration })
        }
    }

    pub fn gripper_at(&self, t: f64) -> bool {
        self.gripper.iter().take_while(|&&(bt, _)| bt <= t).last().is_some_and(|&(_, s)| s)
    }

    pub fn eval(&self, t: f64) -> Result<TrajectoryPoint, TrajectoryError> {
        self.check_domain(t)?;
        let powers = Vector4::new(t * t * t, t * t, t, 1.0);
        let rates = Vector4::new(3.0 * t * t, 2.0 * t, 1.0, 0.0);
        let curvature = Vector4::new(6.0 * t, 2.0, 0.0, 0.0);
        Ok(TrajectoryPoint {
            pose: self.coeffs * powers,
            velocity: self.coeffs * rates,
            acceleration: self.coeffs * curvature,
            gripper: self.gripper_at(t),
        })
    }

    pub fn pose_at(&self, t: f64) -> Result<Vector6<f64>, TrajectoryError> {
        Ok(self.eval(t)?.pose)
    }

    /// Samples every `dt` seconds from 0, plus the endpoint.
    pub fn sample(&self, dt: f64) -> Vec<TrajectorySample> {
        assert!(dt > 0.0, "sample spacing must be positive");
        let count = (self.duration / dt).floor() as usize;
        let mut times: Vec<f64> = (0..=count).map(|k| k as f64 * dt).filter(|&t| t < self.duration).collect();
        times.push(self.duration);
        times
            .into_iter()
            .map(|t| {
                let p = self.eval(t).expect("sample time in domain");
                TrajectorySample { t, pose: p.pose, gripper: p.gripper }
            })
            .collect()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&TrajectoryFile::from(self)).expect("trajectory serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, TrajectoryError> {
        let file: TrajectoryFile = serde_json::from_str(text)?;
        let coeffs = Coefficients::from_fn(|r, c| file.coeffs[r][c]);
        let gripper = file.gripper.into_iter().map(|b| (b.t, b.state)).collect();
        Self::new(coeffs, file.duration, gripper)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryFile {
    coeffs: [[f64; 4]; 6],
    duration: f64,
    gripper: Vec<Breakpoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Breakpoint {
    t: f64,
    state: bool,
}

impl From<&CubicTrajectory> for TrajectoryFile {
    fn from(traj: &CubicTrajectory) -> Self {
        let mut coeffs = [[0.0; 4]; 6];
        for (r, row) in coeffs.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = traj.coeffs[(r, c)];
            }
        }
        let gripper = traj.gripper.iter().map(|&(t, state)| Breakpoint { t, state }).collect();
        Self { coeffs, duration: traj.duration, gripper }
    }
}

/// Least-squares fit and its attained per-coordinate mean squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicFit {
    pub trajectory: CubicTrajectory,
    pub mse: [f64; 6],
}

impl CubicFit {
    /// Mean over samples of the squared six-dimensional residual.
    pub fn residual(&self) -> f64 {
        self.mse.iter().sum()
    }
}

/// Per-coordinate least-squares cubic through `samples`; the gripper schedule
/// switches at the sample times where the recorded state changes.
pub fn fit_cubic(samples: &[TrajectorySample]) -> Result<CubicFit, TrajectoryError> {
    if samples.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    for (index, s) in samples.iter().enumerate() {
        if !(s.t.is_finite() && s.t >= 0.0) {
            return Err(TrajectoryError::InvalidSample { index, reason: format!("time {} is not a finite non-negative value", s.t) });
        }
        if !s.pose.iter().all(|v| v.is_finite()) {
            return Err(TrajectoryError::InvalidSample { index, reason: "pose is not finite".into() });
        }
    }
    let mut ordered = samples.to_vec();
    ordered.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut distinct: Vec<f64> = ordered.iter().map(|s| s.t).collect();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(TrajectoryError::RankDeficient(distinct.len()));
    }

    let n = ordered.len();
    let design = DMatrix::from_fn(n, 4, |i, j| ordered[i].t.powi(3 - j as i32));
    let targets = DMatrix::from_fn(n, 6, |i, j| ordered[i].pose[j]);
    let svd = design.clone().svd(true, true);
    let solution = svd.solve(&targets, 1e-14).map_err(|_| TrajectoryError::RankDeficient(distinct.len()))?;
    let residuals = &design * &solution - &targets;
    let mut mse = [0.0; 6];
    for (j, m) in mse.iter_mut().enumerate() {
        *m = residuals.column(j).norm_squared() / n as f64;
    }
    let coeffs = Coefficients::from_fn(|r, c| solution[(c, r)]);

    let mut gripper = Vec::new();
    if ordered[0].gripper {
        gripper.push((0.0, true));
    }
    for w in ordered.windows(2) {
        if w[1].gripper != w[0].gripper {
            gripper.push((w[1].t, w[1].gripper));
        }
    }
    let duration = ordered[n - 1].t;
    Ok(CubicFit { trajectory: CubicTrajectory::new(coeffs, duration, gripper)?, mse })
}

fn position_distances(
    traj: &CubicTrajectory,
    samples: &[TrajectorySample],
) -> Result<DVector<f64>, TrajectoryError> {
    if samples.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let mut out = DVector::zeros(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let p = traj.pose_at(s.t)?;
        out[i] = (p.fixed_rows::<3>(0) - s.pose.fixed_rows::<3>(0)).norm();
    }
    Ok(out)
}

/// Root mean square of the Euclidean position error at the sample times.
pub fn mean_error(traj: &CubicTrajectory, samples: &[TrajectorySample]) -> Result<f64, TrajectoryError> {
    let d = position_distances(traj, samples)?;
    Ok((d.norm_squared() / d.len() as f64).sqrt())
}

/// Largest Euclidean position error at the sample times.
pub fn max_distance(traj: &CubicTrajectory, samples: &[TrajectorySample]) -> Result<f64, TrajectoryError> {
    Ok(position_distances(traj, samples)?.max())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub pose: Vector6<f64>,
    pub gripper: bool,
}

/// Start point and the waypoints after it, the last one being the endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoints {
    pub anchor: Waypoint,
    pub points: Vec<Waypoint>,
}

/// Waypoints at `step, 2 step, …` strictly before the endpoint, then the endpoint.
pub fn extract_waypoints(traj: &CubicTrajectory, step: f64) -> Result<Waypoints, TrajectoryError> {
    let duration = traj.duration();
    let eps = 1e-9 * duration;
    if !(step.is_finite() && step > 0.0 && step <= duration + eps) {
        return Err(TrajectoryError::InvalidStep(step));
    }
    let at = |t: f64| -> Waypoint {
        let p = traj.eval(t).expect("waypoint time in domain");
        Waypoint { t, pose: p.pose, gripper: p.gripper }
    };
    let mut points = Vec::new();
    let mut k = 1u64;
    loop {
        let t = k as f64 * step;
        if t >= duration - eps {
            break;
        }
        points.push(at(t));
        k += 1;
    }
    points.push(at(duration));
    Ok(Waypoints { anchor: at(0.0), points })
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    gripper: u8,
}

pub fn read_samples_from<R: Read>(reader: R) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (index, record) in csv.deserialize::<SampleRecord>().enumerate() {
        let r = record?;
        if r.gripper > 1 {
            return Err(TrajectoryError::InvalidSample { index, reason: format!("gripper must be 0 or 1, got {}", r.gripper) });
        }
        out.push(TrajectorySample {
            t: r.t,
            pose: Vector6::new(r.x, r.y, r.z, r.alpha, r.beta, r.gamma),
            gripper: r.gripper == 1,
        });
    }
    if out.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    Ok(out)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    read_samples_from(File::open(path)?)
}

pub fn write_samples_to<W: Write>(writer: W, samples: &[TrajectorySample]) -> Result<(), TrajectoryError> {
    let mut csv = csv::Writer::from_writer(writer);
    for s in samples {
        let p = s.pose;
        csv.serialize(SampleRecord {
            t: s.t,
            x: p[0],
            y: p[1],
            z: p[2],
            alpha: p[3],
            beta: p[4],
            gamma: p[5],
            gripper: s.gripper as u8,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[TrajectorySample]) -> Result<(), TrajectoryError> {
    write_samples_to(File::create(path)?, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(rng: &mut ChaCha8Rng) -> Coefficients {
        Coefficients::from_fn(|_, _| rng.random_range(-1.0..1.0))
    }

    fn sample_at(traj: &CubicTrajectory, times: &[f64]) -> Vec<TrajectorySample> {
        times
            .iter()
            .map(|&t| TrajectorySample { t, pose: traj.pose_at(t).unwrap(), gripper: traj.gripper_at(t) })
            .collect()
    }

    #[test]
    fn constant_row_has_no_motion() {
        let mut coeffs = Coefficients::zeros();
        coeffs[(2, 3)] = 0.4;
        let traj = CubicTrajectory::new(coeffs, 2.0, vec![]).unwrap();
        for t in [0.0, 0.7, 2.0] {
            let p = traj.eval(t).unwrap();
            assert_eq!(p.pose[2], 0.4);
            assert_eq!(p.velocity[2], 0.0);
            assert_eq!(p.acceleration[2], 0.0);
        }
    }

    #[test]
    fn polynomial_identities_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = CubicTrajectory::new(random_coeffs(&mut rng), 1.0, vec![]).unwrap();
        let p = traj.eval(0.0).unwrap();
        assert_eq!(p.velocity, traj.coeffs().column(2).into_owned());
        assert_eq!(p.acceleration, traj.coeffs().column(1) * 2.0);
    }

    #[test]
    fn polynomial_arithmetic() {
        let mut coeffs = Coefficients::zeros();
        coeffs.set_row(0, &nalgebra::RowVector4::new(1.0, -1.0, 0.5, 2.0));
        let traj = CubicTrajectory::new(coeffs, 3.0, vec![]).unwrap();
        assert_eq!(traj.pose_at(2.0).unwrap()[0], 7.0);
    }

    #[test]
    fn eval_rejects_out_of_domain() {
        let traj = CubicTrajectory::constant(Vector6::zeros(), 1.0).unwrap();
        assert!(matches!(traj.eval(1.0 + 1e-12), Err(TrajectoryError::OutOfDomain { .. })));
        assert!(matches!(traj.eval(-1e-12), Err(TrajectoryError::OutOfDomain { .. })));
    }

    #[test]
    fn construction_is_validated() {
        assert!(CubicTrajectory::constant(Vector6::zeros(), 0.0).is_err());
        let base = CubicTrajectory::constant(Vector6::zeros(), 1.0).unwrap();
        assert!(base.clone().with_gripper(vec![(0.5, true), (0.5, false)]).is_err());
        assert!(base.clone().with_gripper(vec![(1.5, true)]).is_err());
        let g = base.with_gripper(vec![(0.25, true), (0.75, false)]).unwrap();
        assert!(!g.gripper_at(0.2) && g.gripper_at(0.25) && g.gripper_at(0.5) && !g.gripper_at(0.9));
    }

    #[test]
    fn fit_recovers_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = CubicTrajectory::new(random_coeffs(&mut rng), 1.0, vec![]).unwrap();
        let samples = sample_at(&truth, &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let fit = fit_cubic(&samples).unwrap();
        assert!((fit.trajectory.coeffs() - truth.coeffs()).amax() < 1e-9);
        assert!(fit.residual() < 1e-18);
        assert_eq!(fit.trajectory.duration(), 1.0);
    }

    /// Normal equations solved independently by Gaussian elimination.
    fn normal_equation_mse(ts: &[f64], ys: &[f64]) -> f64 {
        let mut a = [[0.0; 5]; 4];
        for (&t, &y) in ts.iter().zip(ys) {
            let row = [t * t * t, t * t, t, 1.0];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] += row[i] * row[j];
                }
                a[i][4] += row[i] * y;
            }
        }
        for col in 0..4 {
            let pivot = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, pivot);
            for r in 0..4 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..5 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let coef: Vec<f64> = (0..4).map(|i| a[i][4] / a[i][i]).collect();
        ts.iter()
            .zip(ys)
            .map(|(&t, &y)| {
                let r = coef[0] * t * t * t + coef[1] * t * t + coef[2] * t + coef[3] - y;
                r * r
            })
            .sum::<f64>()
            / ts.len() as f64
    }

    #[test]
    fn fit_residual_matches_normal_equations_on_quartic() {
        let ts: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let ys: Vec<f64> = ts.iter().map(|t| t.powi(4)).collect();
        let samples: Vec<TrajectorySample> = ts
            .iter()
            .zip(&ys)
            .map(|(&t, &y)| TrajectorySample { t, pose: Vector6::new(y, 0.0, 0.0, 0.0, 0.0, 0.0), gripper: false })
            .collect();
        let fit = fit_cubic(&samples).unwrap();
        let oracle = normal_equation_mse(&ts, &ys);
        assert!((fit.mse[0] - oracle).abs() < 1e-10);
        assert!((fit.residual() - oracle).abs() < 1e-10);
        assert!(oracle > 1e-6);
    }

    #[test]
    fn fit_rejects_too_few_times() {
        let s = |t| TrajectorySample { t, pose: Vector6::zeros(), gripper: false };
        assert!(matches!(fit_cubic(&[s(0.0), s(0.5), s(1.0)]), Err(TrajectoryError::RankDeficient(3))));
        assert!(matches!(fit_cubic(&[s(0.0), s(0.5), s(0.5), s(1.0), s(1.0)]), Err(TrajectoryError::RankDeficient(3))));
        assert!(matches!(fit_cubic(&[]), Err(TrajectoryError::Empty)));
    }

    #[test]
    fn fit_copies_gripper_transitions() {
        let samples: Vec<TrajectorySample> = (0..6)
            .map(|i| TrajectorySample { t: i as f64 * 0.1, pose: Vector6::zeros(), gripper: (2..4).contains(&i) })
            .collect();
        let fit = fit_cubic(&samples).unwrap();
        let expected = [(0.2, true), (0.4, false)];
        let got = fit.trajectory.gripper_breakpoints();
        assert_eq!(got.len(), 2);
        for (g, e) in got.iter().zip(expected) {
            assert!((g.0 - e.0).abs() < 1e-15 && g.1 == e.1);
        }
    }

    #[test]
    fn error_metrics_basic_cases() {
        let truth = CubicTrajectory::rest_to_rest(Vector6::zeros(), Vector6::repeat(0.1), 1.0).unwrap();
        let mut samples = truth.sample(0.1);
        assert_eq!(mean_error(&truth, &samples).unwrap(), 0.0);
        assert_eq!(max_distance(&truth, &samples).unwrap(), 0.0);
        for s in samples.iter_mut() {
            s.pose[0] += 0.02;
        }
        assert!((mean_error(&truth, &samples).unwrap() - 0.02).abs() < 1e-15);
        let mut samples = truth.sample(0.1);
        samples[4].pose[1] += 0.3;
        assert!((max_distance(&truth, &samples).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(mean_error(&truth, &[]), Err(TrajectoryError::Empty)));
    }

    #[test]
    fn error_metrics_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let traj = CubicTrajectory::new(random_coeffs(&mut rng), 2.0, vec![]).unwrap();
        let samples: Vec<TrajectorySample> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.05;
                let noise = Vector6::from_fn(|_, _| rng.random_range(-0.05..0.05));
                TrajectorySample { t, pose: traj.pose_at(t).unwrap() + noise, gripper: false }
            })
            .collect();
        let mut squares = Vec::new();
        for s in &samples {
            let p = traj.pose_at(s.t).unwrap();
            squares.push((0..3).map(|k| (p[k] - s.pose[k]).powi(2)).sum::<f64>());
        }
        let rmse = (squares.iter().sum::<f64>() / squares.len() as f64).sqrt();
        let max = squares.iter().map(|v| v.sqrt()).fold(0.0, f64::max);
        assert!((mean_error(&traj, &samples).unwrap() - rmse).abs() < 1e-10);
        assert!((max_distance(&traj, &samples).unwrap() - max).abs() < 1e-10);
    }

    #[test]
    fn waypoint_stepping_rule() {
        let traj = CubicTrajectory::constant(Vector6::zeros(), 16.5e-3).unwrap();
        let w = extract_waypoints(&traj, 3.3e-3).unwrap();
        assert_eq!(w.points.len(), 5);
        assert_eq!(w.anchor.t, 0.0);
        assert_eq!(w.points[4].t, 16.5e-3);

        let traj = CubicTrajectory::constant(Vector6::zeros(), 10e-3).unwrap();
        let times: Vec<f64> = extract_waypoints(&traj, 3.3e-3).unwrap().points.iter().map(|p| p.t).collect();
        let expected = [3.3e-3, 6.6e-3, 9.9e-3, 10e-3];
        assert_eq!(times.len(), 4);
        for (t, e) in times.iter().zip(expected) {
            assert!((t - e).abs() < 1e-15);
        }

        let w = extract_waypoints(&traj, 10e-3).unwrap();
        assert_eq!(w.points.len(), 1);
        assert_eq!(w.points[0].t, 10e-3);
        assert!(extract_waypoints(&traj, 0.0).is_err());
        assert!(extract_waypoints(&traj, -1.0).is_err());
        assert!(extract_waypoints(&traj, 0.02).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let traj = CubicTrajectory::rest_to_rest(Vector6::zeros(), Vector6::repeat(0.2), 0.5)
            .unwrap()
            .with_gripper(vec![(0.3, true)])
            .unwrap();
        let samples = traj.sample(0.05);
        let mut buf = Vec::new();
        write_samples_to(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,y,z,alpha,beta,gamma,gripper\n"));
        assert_eq!(read_samples_from(buf.as_slice()).unwrap(), samples);
        assert!(read_samples_from("t,x,y,z,alpha,beta,gamma,gripper\n0,0,0,0,0,0,0,2\n".as_bytes()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traj = CubicTrajectory::new(random_coeffs(&mut rng), 0.8, vec![(0.1, true), (0.4, false)]).unwrap();
        assert_eq!(CubicTrajectory::from_json_str(&traj.to_json_string()).unwrap(), traj);
    }

    proptest! {
        #[test]
        fn eval_of_fit_reproduces_cubic_data(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = CubicTrajectory::new(random_coeffs(&mut rng), 1.0, vec![]).unwrap();
            let samples = truth.sample(0.1);
            let fit = fit_cubic(&samples).unwrap();
            for s in &samples {
                prop_assert!((fit.trajectory.pose_at(s.t).unwrap() - s.pose).amax() < 1e-9);
            }
        }

        #[test]
        fn velocity_matches_finite_difference(seed in any::<u64>(), t in 0.01f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = CubicTrajectory::new(random_coeffs(&mut rng), 1.0, vec![]).unwrap();
            let h = 1e-5;
            let fd = (traj.pose_at(t + h).unwrap() - traj.pose_at(t - h).unwrap()) / (2.0 * h);
            prop_assert!((traj.eval(t).unwrap().velocity - fd).amax() < 1e-6);
            let fd = (traj.eval(t + h).unwrap().velocity - traj.eval(t - h).unwrap().velocity) / (2.0 * h);
            prop_assert!((traj.eval(t).unwrap().acceleration - fd).amax() < 1e-6);
        }

        #[test]
        fn mean_error_bounded_by_max_distance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = CubicTrajectory::new(random_coeffs(&mut rng), 1.0, vec![]).unwrap();
            let other = CubicTrajectory::new(random_coeffs(&mut rng), 1.0, vec![]).unwrap();
            let samples = other.sample(0.07);
            prop_assert!(mean_error(&traj, &samples).unwrap() <= max_distance(&traj, &samples).unwrap() + 1e-15);
        }
    }
}
