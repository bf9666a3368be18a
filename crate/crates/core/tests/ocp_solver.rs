//! Solver quality checks against brute-force and monotonicity oracles.

use funnel_mpc::funnel::{FunnelParams, FunnelTrajectory};
use funnel_mpc::ocp::{self, OcpConfig, OcpSpec};
use funnel_mpc::ode::ControlSequence;
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

/// Exhaustive search over a two-step input grid, refined once around the
/// best coarse point, as an independent optimum for the solver.
#[test]
fn two_step_solution_matches_a_refined_grid_search() {
    let plant = MassOnCar::new(MassOnCarParams::benchmark()).unwrap();
    let funnel = benchmark_funnel();
    let reference = CosineReference::unit();
    let mut config = OcpConfig::<f64>::default();
    config.horizon = 0.08; // two control steps
    let spec = OcpSpec::new(&plant, &funnel, &reference, 0.0, vec![0.0; 4], config).unwrap();

    let bound = 15.0;
    let trial = |u0: f64, u1: f64| -> Option<f64> {
        let control = ControlSequence::new(0.0, 0.04, 1, vec![u0, u1]).unwrap();
        let eval = ocp::evaluate(&spec, &control).ok()?;
        eval.tube_feasible(1e-9).then_some(eval.cost)
    };

    // Coarse pass at spacing 0.5.
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let coarse: Vec<f64> = (0..=60).map(|i| -bound + 0.5 * i as f64).collect();
    for &u0 in &coarse {
        for &u1 in &coarse {
            if let Some(cost) = trial(u0, u1) {
                if cost < best.0 {
                    best = (cost, u0, u1);
                }
            }
        }
    }
    assert!(best.0.is_finite(), "the coarse grid found no feasible point");

    // One refinement at spacing 0.05 around the coarse winner.
    let (_, c0, c1) = best;
    for i in -10..=10 {
        for j in -10..=10 {
            let u0 = (c0 + 0.05 * i as f64).clamp(-bound, bound);
            let u1 = (c1 + 0.05 * j as f64).clamp(-bound, bound);
            if let Some(cost) = trial(u0, u1) {
                if cost < best.0 {
                    best = (cost, u0, u1);
                }
            }
        }
    }

    let sol = ocp::solve(&spec, None).unwrap();
    assert!(
        (sol.cost - best.0).abs() <= 1e-3,
        "solver cost {} vs refined grid {} at ({}, {})",
        sol.cost,
        best.0,
        best.1,
        best.2
    );
    assert!(sol.terminal_margins.iter().all(|&m| m >= -1e-9));
    assert!(sol.control.values().iter().all(|u| u.abs() <= 15.0));
}

/// Re-solving with a feasible warm start can never come back worse.
#[test]
fn warm_started_solve_dominates_its_warm_start() {
    let plant = MassOnCar::new(MassOnCarParams::benchmark()).unwrap();
    let funnel = benchmark_funnel();
    let reference = CosineReference::unit();
    let spec = OcpSpec::new(
        &plant,
        &funnel,
        &reference,
        0.0,
        vec![0.0; 4],
        OcpConfig::default(),
    )
    .unwrap();

    let first = ocp::solve(&spec, None).unwrap();
    let again = ocp::solve(&spec, Some(&first.control)).unwrap();
    assert!(
        again.cost <= first.cost + 1e-12,
        "warm re-solve worsened the cost: {} -> {}",
        first.cost,
        again.cost
    );
}

/// A warm start of the wrong shape is ignored rather than trusted.
#[test]
fn incompatible_warm_start_is_ignored() {
    let plant = MassOnCar::new(MassOnCarParams::benchmark()).unwrap();
    let funnel = benchmark_funnel();
    let reference = CosineReference::unit();
    let spec = OcpSpec::new(
        &plant,
        &funnel,
        &reference,
        0.0,
        vec![0.0; 4],
        OcpConfig::default(),
    )
    .unwrap();

    let cold = ocp::solve(&spec, None).unwrap();
    // Wrong length and wrong start time.
    let bogus = ControlSequence::new(3.0, 0.04, 1, vec![1.0, 2.0]).unwrap();
    let with_bogus = ocp::solve(&spec, Some(&bogus)).unwrap();
    assert_eq!(cold.cost, with_bogus.cost);
    assert_eq!(cold.control, with_bogus.control);
}

/// Raising the input weight must not increase the input energy the solution
/// spends.
#[test]
fn heavier_input_weight_spends_less_input_energy() {
    let plant = MassOnCar::new(MassOnCarParams::benchmark()).unwrap();
    let funnel = benchmark_funnel();
    let reference = CosineReference::unit();

    let solve_with = |weight: f64| -> f64 {
        let mut config = OcpConfig::<f64>::default();
        config.cost.input_weight = weight;
        let spec =
            OcpSpec::new(&plant, &funnel, &reference, 0.0, vec![0.0; 4], config).unwrap();
        let sol = ocp::solve(&spec, None).unwrap();
        sol.control.values().iter().map(|u| u * u).sum::<f64>() * 0.04
    };

    let cheap_input = solve_with(0.001);
    let dear_input = solve_with(0.1);
    assert!(
        dear_input <= cheap_input + 1e-9,
        "energy with weight 0.1 ({dear_input}) exceeds energy with 0.001 ({cheap_input})"
    );
}
