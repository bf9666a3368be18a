//! Closed-loop behavior of the predictive controller and the baseline law.

use funnel_mpc::chain::StageCostConfig;
use funnel_mpc::fmpc::{self, FmpcConfig};
use funnel_mpc::funnel::{FunnelParams, FunnelTrajectory};
use funnel_mpc::funnel_controller::FunnelController;
use funnel_mpc::ocp::OcpConfig;
use funnel_mpc::ode::IntegratorOptions;
use funnel_mpc::plant::{MassOnCar, MassOnCarParams};
use funnel_mpc::reference::CosineReference;

fn benchmark_funnel() -> FunnelTrajectory<f64> {
    FunnelTrajectory::solve(
        FunnelParams::new(
            vec![1.5, 1.35],
            vec![0.15, 0.675],
            vec![1.1],
            vec![4.1, 2.0],
        )
        .unwrap(),
    )
}

#[test]
fn predictive_loop_stays_feasible_over_ten_stages() {
    let plant = MassOnCar::new(MassOnCarParams::benchmark()).unwrap();
    let funnel = benchmark_funnel();
    let reference = CosineReference::unit();
    let config = FmpcConfig {
        t_start: 0.0,
        t_end: 0.4,
        initial_state: vec![0.0; 4],
        ocp: OcpConfig::default(),
    };
    let result = fmpc::run(&plant, &funnel, &reference, &config).unwrap();

    assert_eq!(result.steps.len(), 10);
    assert!(result.summary.max_abs_input <= 15.0);
    assert!(result.summary.min_funnel_margin > 0.0);
    assert!(result.summary.min_tube_margin.unwrap() >= -1e-9);
    for step in &result.steps[1..] {
        assert_eq!(
            step.stats.restart_index, 0,
            "step {} fell back off the warm start",
            step.index
        );
    }

    let report = fmpc::check_recursive_feasibility(
        &result.trajectory,
        &plant,
        &funnel,
        &reference,
        &[0.94, 0.99],
        0.04,
        1e-9,
    );
    assert!(report.is_feasible(), "violations: {:?}", report.violations);
    assert_eq!(report.tube_times_checked, 11);
}

#[test]
fn span_end_off_the_grid_is_clipped() {
    let plant = MassOnCar::new(MassOnCarParams::benchmark()).unwrap();
    let funnel = benchmark_funnel();
    let reference = CosineReference::unit();
    let config = FmpcConfig {
        t_start: 0.0,
        t_end: 0.1,
        initial_state: vec![0.0; 4],
        ocp: OcpConfig::default(),
    };
    let result = fmpc::run(&plant, &funnel, &reference, &config).unwrap();
    assert_eq!(result.steps.len(), 3);
    let end = result.trajectory.points.last().unwrap().time;
    assert!((end - 0.1).abs() < 1e-12, "run ended at {end}");
    // The stored input still covers whole control steps.
    assert_eq!(result.applied.as_ref().unwrap().len(), 3);
}

#[test]
fn baseline_law_tracks_inside_the_funnel_for_four_seconds() {
    let plant = MassOnCar::new(MassOnCarParams::benchmark()).unwrap();
    let funnel = benchmark_funnel();
    let reference = CosineReference::unit();
    let fc = FunnelController::new(&plant, &funnel, &reference, None).unwrap();
    let traj = fc
        .run_closed_loop(
            &[0.0; 4],
            (0.0, 4.0),
            0.02,
            &IntegratorOptions::default(),
            &StageCostConfig::default(),
        )
        .unwrap();
    assert_eq!(traj.points.len(), 201);
    let mut worst = (0.0f64, 0.0f64);
    for p in &traj.points {
        for &sq in &p.ratios {
            if sq > worst.0 {
                worst = (sq, p.time);
            }
        }
    }
    assert!(
        worst.0 < 1.0,
        "baseline left the funnel: squared ratio {} at t = {}",
        worst.0,
        worst.1
    );

    let summary = fmpc::summarize(&traj);
    assert!(summary.input_energy.is_finite());
    assert!(summary.max_abs_input.is_finite());
    assert_eq!(summary.max_ratios.len(), 2);
}
