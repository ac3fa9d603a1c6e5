use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::DVector;
use proptest::prelude::*;

use super::*;
use crate::test_support::{panda, regression_case};

fn base_pose() -> DVector<f64> {
    DVector::from_row_slice(&[0.0, -FRAC_PI_4, 0.0, -3.0 * FRAC_PI_4, 0.0, FRAC_PI_2, FRAC_PI_4])
}

fn panda_cfg(factors: Vec<f64>, threshold: f64) -> ImpactConfig {
    ImpactConfig::new(factors, threshold)
}

#[test]
fn probability_examples() {
    let cfg = panda_cfg(vec![0.3; 7], 0.5);
    assert_eq!(update_probability(&DVector::zeros(7), &cfg).unwrap(), 0.0);
    let zero = panda_cfg(vec![0.0; 7], 0.5);
    assert_eq!(update_probability(&DVector::from_element(7, 3.0), &zero).unwrap(), 0.0);
    let big = DVector::from_element(7, 10.0);
    assert_eq!(update_probability(&big, &cfg).unwrap(), 1.0);
    assert!(matches!(
        update_probability(&DVector::zeros(6), &cfg),
        Err(ApproxError::DimensionMismatch { expected: 7, got: 6 })
    ));
}

#[test]
fn unit_factor_on_joint_two_fires_the_gate() {
    let model = panda();
    let mut factors = vec![0.0; 7];
    factors[1] = 1.0;
    let cfg = panda_cfg(factors, 0.3);
    let mut delta = DVector::zeros(7);
    delta[1] = 0.5;
    let p = update_probability(&delta, &cfg).unwrap();
    assert_eq!(p, 0.5);

    let mut gate = ApproxState::new(&model, TaskSpace::full(), cfg).unwrap();
    let theta = base_pose();
    gate.blocks(&model, &JointState::new(theta.clone(), DVector::zeros(7))).unwrap();
    gate.blocks(&model, &JointState::new(&theta + &delta, DVector::zeros(7))).unwrap();
    assert_eq!(gate.counters(Block::JointMass), BlockCounters { updates: 2, skips: 0 });
}

#[test]
fn probability_costs_under_one_hundred_flops() {
    let cfg = panda_cfg(vec![0.7; 7], 0.1);
    let delta = DVector::from_row_slice(&[0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7]);
    let (p, flops) = update_probability_counted(&delta, &cfg).unwrap();
    assert_eq!(p, update_probability(&delta, &cfg).unwrap());
    assert!(flops > 0 && flops < 100, "{flops}");
}

#[test]
fn config_validation() {
    let model = panda();
    assert!(ApproxState::new(&model, TaskSpace::full(), panda_cfg(vec![0.1; 7], 1.5)).is_err());
    assert!(ApproxState::new(&model, TaskSpace::full(), panda_cfg(vec![-0.1; 7], 0.5)).is_err());
    assert!(ApproxState::new(&model, TaskSpace::full(), panda_cfg(vec![0.1; 6], 0.5)).is_err());
    assert!(ApproxState::new(&model, TaskSpace::full(), panda_cfg(vec![f64::NAN; 7], 0.5)).is_err());
}

fn regression_exact() -> (RobotModel, CubicTrajectory, JointState, TrackingLog) {
    let (model, traj, state) = regression_case();
    let mut ctl = ExactController::new(&model, TaskSpace::planar_xy(), ControlGains::default());
    let log = simulate_tracking(&model, &mut ctl, &traj, &SimulationConfig::at(1000.0), &state).unwrap();
    (model, traj, state, log)
}

#[test]
fn zero_threshold_is_bit_identical_to_exact() {
    let (model, traj, state, exact) = regression_exact();
    for targets in [&Block::ALL[..], &Block::JOINT_SPACE[..]] {
        let cfg = ImpactConfig::new(vec![1.0, 1.0], 0.0).with_targets(targets);
        let mut ctl = GatedController::new(&model, TaskSpace::planar_xy(), ControlGains::default(), cfg).unwrap();
        let log = simulate_tracking(&model, &mut ctl, &traj, &SimulationConfig::at(1000.0), &state).unwrap();
        assert_eq!(log.torques.len(), exact.torques.len());
        for (a, b) in log.torques.iter().zip(&exact.torques) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(ctl.state.skip_fraction(), 0.0);
    }
}

#[test]
fn zero_threshold_matches_exact_blocks_on_panda() {
    let model = panda();
    let cfg = ImpactConfig::new(vec![1.0; 7], 0.0).with_targets(&Block::ALL);
    let mut gate = ApproxState::new(&model, TaskSpace::full(), cfg).unwrap();
    let mut ws = DynamicsWorkspace::new(&model, TaskSpace::full());
    for k in 0..5 {
        let s = k as f64 * 0.01;
        let state = JointState::new(base_pose().add_scalar(s), DVector::from_element(7, 0.2 - s));
        let gated = gate.blocks(&model, &state).unwrap();
        let exact = control_blocks(&model, &state, &mut ws).unwrap();
        assert_eq!(gated, exact);
    }
}

#[test]
fn unchanged_angles_are_served_from_cache() {
    let model = panda();
    let cfg = ImpactConfig::new(vec![1.0; 7], 0.05).with_targets(&Block::ALL);
    let mut gate = ApproxState::new(&model, TaskSpace::full(), cfg).unwrap();
    let state = JointState::new(base_pose(), DVector::from_element(7, 0.1));
    let first = gate.blocks(&model, &state).unwrap();
    for _ in 0..3 {
        assert_eq!(gate.blocks(&model, &state).unwrap(), first);
    }
    for block in Block::ALL {
        assert_eq!(gate.counters(block), BlockCounters { updates: 1, skips: 3 });
    }
    assert!(gate.work_fraction() == 0.0);
}

#[test]
fn updated_jacobian_invalidates_task_space_blocks() {
    let model = panda();
    let cfg = ImpactConfig::new(vec![1.0; 7], 0.05).with_targets(&[Block::TaskMass, Block::TaskBias]);
    let mut gate = ApproxState::new(&model, TaskSpace::full(), cfg).unwrap();
    let theta = base_pose();
    gate.blocks(&model, &JointState::new(theta.clone(), DVector::zeros(7))).unwrap();
    gate.blocks(&model, &JointState::new(theta.add_scalar(1e-4), DVector::zeros(7))).unwrap();
    assert_eq!(gate.counters(Block::TaskMass).skips, 0);
    assert_eq!(gate.counters(Block::TaskBias).skips, 0);
}

#[test]
fn stale_cache_refreshes_after_slow_drift() {
    let model = panda();
    let cfg = ImpactConfig::new(vec![1.0; 7], 0.01);
    let mut gate = ApproxState::new(&model, TaskSpace::full(), cfg).unwrap();
    for k in 0..100 {
        let mut theta = base_pose();
        theta[1] += k as f64 * 1e-3;
        gate.blocks(&model, &JointState::new(theta, DVector::zeros(7))).unwrap();
    }
    let c = gate.counters(Block::JointMass);
    assert_eq!(c.updates, 10);
    assert_eq!(c.updates + c.skips, 100);
}

#[test]
fn sensitivity_ordering_on_panda() {
    let model = panda();
    let pose = DVector::from_row_slice(&SENSITIVITY_POSE);
    let table = mass_sensitivity_experiment(&model, &pose, &SENSITIVITY_DELTAS).unwrap();
    for k in 0..SENSITIVITY_DELTAS.len() {
        assert!(table.rows[0][k] < 1e-9, "{:?}", table.rows[0]);
        assert_eq!(table.most_sensitive_joint(k), 1, "{table:?}");
        assert!(table.rows[4][k] < 0.1 && table.rows[5][k] < 0.1);
        assert!(table.rows[6][k] < 0.01);
    }
    assert!((table.rows[1][0] - 0.17).abs() < 0.01, "{}", table.rows[1][0]);
    let zero = mass_sensitivity_experiment(&model, &base_pose(), &[0.0]).unwrap();
    assert!(zero.rows.iter().all(|r| r[0] == 0.0));
    assert!(mass_sensitivity_experiment(&model, &base_pose(), &[-0.1]).is_err());
    assert!(mass_sensitivity_experiment(&model, &DVector::zeros(6), &[0.1]).is_err());
}

fn near_base_states() -> Vec<JointState> {
    (0..5)
        .map(|k| {
            let mut theta = base_pose();
            theta[2] += 0.05 * k as f64;
            theta[4] -= 0.04 * k as f64;
            JointState::new(theta, DVector::from_element(7, 0.05))
        })
        .collect()
}

#[test]
fn calibrated_factors_rank_joint_two_over_joint_one() {
    let model = panda();
    let targets: BTreeSet<Block> = Block::JOINT_SPACE.into_iter().collect();
    let f = calibrate_factors(&model, &TaskSpace::full(), &near_base_states(), &targets).unwrap();
    assert!(f[1] > f[0]);
    assert!(f[0] < 0.01, "{f:?}");
    assert!((f.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
    let mass_only: BTreeSet<Block> = [Block::JointMass].into_iter().collect();
    let g = calibrate_factors(&model, &TaskSpace::full(), &near_base_states(), &mass_only).unwrap();
    assert!(g[1] > g[0] && g[0] < 0.01, "{g:?}");
}

#[test]
fn calibration_is_deterministic() {
    let model = panda();
    let targets: BTreeSet<Block> = Block::ALL.into_iter().collect();
    let single = [JointState::new(base_pose(), DVector::zeros(7))];
    let a = calibrate_factors(&model, &TaskSpace::full(), &single, &targets).unwrap();
    let b = calibrate_factors(&model, &TaskSpace::full(), &single, &targets).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(matches!(
        calibrate_factors(&model, &TaskSpace::full(), &[], &targets),
        Err(ApproxError::EmptyCorpus)
    ));
}

#[test]
fn pure_base_rotation_is_skipped() {
    let model = panda();
    let corpus: Vec<JointState> = (0..1000)
        .map(|k| {
            let mut theta = base_pose();
            theta[0] = -0.5 + k as f64 * 1e-3;
            JointState::new(theta, DVector::zeros(7))
        })
        .collect();
    let targets: BTreeSet<Block> = Block::JOINT_SPACE.into_iter().collect();
    let factors = calibrate_factors(&model, &TaskSpace::full(), &corpus[..10], &targets).unwrap();
    for threshold in [1e-3, 0.05, 0.5] {
        let mut gate = ApproxState::new(&model, TaskSpace::full(), ImpactConfig::new(factors.clone(), threshold)).unwrap();
        for s in &corpus {
            gate.blocks(&model, s).unwrap();
        }
        assert!(gate.skip_fraction() > 0.998, "{}", gate.skip_fraction());
    }
}

fn calibrated_regression() -> (Vec<f64>, TrackingLog, TrackingLog, f64) {
    let (model, traj, state, exact) = regression_exact();
    let targets: BTreeSet<Block> = Block::JOINT_SPACE.into_iter().collect();
    let factors = calibrate_factors(&model, &TaskSpace::planar_xy(), &corpus_states(&[exact.clone()], 10), &targets)
        .unwrap();
    let cfg = ImpactConfig::new(factors.clone(), DEFAULT_THRESHOLD);
    let mut ctl = GatedController::new(&model, TaskSpace::planar_xy(), ControlGains::default(), cfg).unwrap();
    let gated = simulate_tracking(&model, &mut ctl, &traj, &SimulationConfig::at(1000.0), &state).unwrap();
    (factors, exact, gated, ctl.state.skip_fraction())
}

#[test]
fn calibrated_gating_keeps_regression_accuracy() {
    let (_, exact, gated, skip) = calibrated_regression();
    let ratio = gated.position_rmse() / exact.position_rmse();
    assert!(ratio < 1.05, "ratio {ratio}");
    assert!(skip > 0.0);
}

#[test]
fn counters_are_conserved() {
    let (model, traj, state) = regression_case();
    let cfg = ImpactConfig::new(vec![0.2, 1.0], 0.01).with_targets(&Block::ALL);
    let mut ctl = GatedController::new(&model, TaskSpace::planar_xy(), ControlGains::default(), cfg).unwrap();
    let log = simulate_tracking(&model, &mut ctl, &traj, &SimulationConfig::at(1000.0), &state).unwrap();
    for block in Block::ALL {
        let c = ctl.state.counters(block);
        assert_eq!(c.updates + c.skips, log.len() as u64, "{block}");
    }
    assert!(log.latencies.iter().any(|&l| l < log.latencies[0]));
}

fn trace_skip(model: &RobotModel, trace: &[JointState], factors: &[f64], threshold: f64) -> f64 {
    let cfg = ImpactConfig::new(factors.to_vec(), threshold).with_targets(&Block::ALL);
    let mut gate = ApproxState::new(model, TaskSpace::planar_xy(), cfg).unwrap();
    for s in trace {
        gate.blocks(model, s).unwrap();
    }
    gate.skip_fraction()
}

#[test]
fn skip_fraction_grows_with_threshold_on_regression_trace() {
    let (model, _, _, exact) = regression_exact();
    let factors = [0.3, 1.0];
    let mut last = -1.0;
    for threshold in [0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 1.0] {
        let skip = trace_skip(&model, &exact.states, &factors, threshold);
        assert!(skip >= last, "{threshold}: {skip} < {last}");
        last = skip;
    }
}

#[test]
fn sweep_csv_header() {
    let rows = [SweepRow { threshold: 0.0, skip_fraction: 0.0, rmse_ratio: 1.0, max_torque_dev: 0.0 }];
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "threshold,skip_fraction,rmse_ratio,max_torque_dev");
    assert_eq!(text.lines().nth(1).unwrap(), "0.0,0.0,1.0,0.0");
}

#[test]
fn benchmark_sweep_zero_threshold_row_is_exact() {
    let (model, traj, state) = regression_case();
    let bench = Benchmark {
        model,
        task: TaskSpace::planar_xy(),
        gains: ControlGains::default(),
        sim: SimulationConfig::at(500.0),
        cases: vec![BenchmarkCase { name: "regression".into(), trajectory: traj, initial: state }],
    };
    let exact = bench.exact_runs().unwrap();
    let targets: BTreeSet<Block> = Block::JOINT_SPACE.into_iter().collect();
    let factors = bench.calibrate(&exact, 10, &targets).unwrap();
    let rows = bench.sweep(&factors, &targets, &[0.0, 0.01], &exact).unwrap();
    assert_eq!(rows[0].rmse_ratio, 1.0);
    assert_eq!(rows[0].skip_fraction, 0.0);
    assert_eq!(rows[0].max_torque_dev, 0.0);
    assert!(rows[1].skip_fraction >= rows[0].skip_fraction);
}

fn monotone_trace(start: Vec<f64>, steps: Vec<Vec<f64>>) -> Vec<JointState> {
    let mut theta = DVector::from_vec(start);
    let mut out = vec![JointState::new(theta.clone(), DVector::zeros(2))];
    for step in steps {
        theta += DVector::from_vec(step);
        out.push(JointState::new(theta.clone(), DVector::zeros(2)));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probability_is_bounded(
        delta in prop::collection::vec(-4.0f64..4.0, 7),
        factors in prop::collection::vec(0.0f64..2.0, 7),
    ) {
        let cfg = ImpactConfig::new(factors, 0.5);
        let p = update_probability(&DVector::from_vec(delta), &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn skip_fraction_is_monotone_on_monotone_traces(
        start in prop::collection::vec(-1.0f64..1.0, 2),
        steps in prop::collection::vec(prop::collection::vec(0.0f64..0.02, 2), 5..60),
        signs in prop::collection::vec(prop::bool::ANY, 2),
        factors in prop::collection::vec(0.0f64..1.0, 2),
        t in 0.0f64..0.2,
        dt in 0.0f64..0.2,
    ) {
        let steps: Vec<Vec<f64>> = steps
            .into_iter()
            .map(|s| s.iter().zip(&signs).map(|(v, &neg)| if neg { -v } else { *v }).collect())
            .collect();
        let model = crate::test_support::two_link();
        let trace = monotone_trace(start, steps);
        let low = trace_skip(&model, &trace, &factors, t);
        let high = trace_skip(&model, &trace, &factors, t + dt);
        prop_assert!(high >= low, "{} < {}", high, low);
    }
}

