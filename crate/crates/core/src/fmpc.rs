//! Receding-horizon funnel control.
//!
//! The loop repeatedly solves the finite-horizon problem from the current
//! state, applies the first `delta` seconds of the optimal input, advances
//! the plant, and warm-starts the next problem with the shifted remainder.
//! The terminal tube condition of each problem guarantees that the next one
//! starts strictly inside the funnel, so a run that starts feasibly never
//! gets stuck -- a property [`check_recursive_feasibility`] re-verifies on
//! the simulated trajectory after the fact.

use thiserror::Error;

use crate::chain::{chain, stage_cost};
use crate::funnel::FunnelTrajectory;
use crate::linalg;
use crate::ocp::{self, OcpConfig, OcpError, OcpSpec, SolveStats};
use crate::ode::{
    ControlSequence, CostAnnotation, OdeError, Trajectory, TrajectoryPoint,
};
use crate::plant::Plant;
use crate::reference::ReferenceSignal;
use crate::scalar::Scalar;

/// Closed-loop run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FmpcConfig<S> {
    pub t_start: S,
    pub t_end: S,
    pub initial_state: Vec<S>,
    pub ocp: OcpConfig<S>,
}

/// Closed-loop failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FmpcError {
    #[error("invalid closed-loop configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("problem at step {step} (t = {t_hat}) failed")]
    Ocp {
        step: usize,
        t_hat: f64,
        #[source]
        source: OcpError,
    },
    #[error(transparent)]
    Integration(#[from] OdeError),
}

/// Per-step solver record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics<S> {
    pub index: usize,
    pub t_hat: S,
    /// Exact barrier cost of the applied solution.
    pub cost: S,
    /// Smallest tube margin of the applied solution.
    pub min_tube_margin: S,
    pub stats: SolveStats,
}

/// Aggregates of one simulated run (predictive or baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary<S> {
    /// Solver steps taken (zero for a baseline run).
    pub steps: usize,
    pub duration: S,
    /// Per-level maxima of `|e_i| / psi_i` over all samples.
    pub max_ratios: Vec<S>,
    /// Per-level maxima of the output chain magnitudes `|zeta_i|`.
    pub max_chain_levels: Vec<S>,
    pub max_abs_input: S,
    /// Trapezoid integral of `|u|^2` over the run.
    pub input_energy: S,
    /// Trapezoid integral of the barrier stage cost over the run.
    pub stage_cost_integral: S,
    /// Smallest relative distance to the funnel boundary, `1 - max ratio`.
    pub min_funnel_margin: S,
    /// Smallest tube margin across all solved problems, when any were solved.
    pub min_tube_margin: Option<S>,
}

/// Result of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult<S> {
    pub trajectory: Trajectory<S>,
    /// The concatenated applied input, `None` when the span was empty.
    pub applied: Option<ControlSequence<S>>,
    pub steps: Vec<StepDiagnostics<S>>,
    pub summary: RunSummary<S>,
}

/// Runs the receding-horizon loop over `[t_start, t_end]`.
pub fn run<S: Scalar>(
    plant: &dyn Plant<S>,
    funnel: &FunnelTrajectory<S>,
    reference: &dyn ReferenceSignal<S>,
    config: &FmpcConfig<S>,
) -> Result<ClosedLoopResult<S>, FmpcError> {
    if !(config.t_end >= config.t_start) {
        return Err(FmpcError::InvalidConfig("time span must be ordered"));
    }
    let m = plant.input_dim();
    let r = plant.relative_degree();
    let snap = config.ocp.control_dt * S::of(1e-6);

    let mut t_hat = config.t_start;
    let mut x_hat = config.initial_state.clone();
    let mut warm: Option<ControlSequence<S>> = None;
    let mut trajectory = Trajectory::default();
    let mut steps: Vec<StepDiagnostics<S>> = Vec::new();
    let mut applied_values: Vec<S> = Vec::new();
    let mut min_tube: Option<S> = None;
    let mut delta_steps;

    if config.t_end - config.t_start <= snap {
        // Empty span: validate the configuration and report the single
        // initial sample without applying any input.
        let spec = OcpSpec::new(
            plant,
            funnel,
            reference,
            t_hat,
            x_hat.clone(),
            config.ocp.clone(),
        )
        .map_err(|source| FmpcError::Ocp {
            step: 0,
            t_hat: t_hat.approx_f64(),
            source,
        })?;
        drop(spec);
        let mut zeta = vec![S::zero(); r * m];
        plant.output_chain(&x_hat, &mut zeta);
        let state = chain(t_hat, &zeta, funnel, reference);
        let input = vec![S::zero(); m];
        let cost = stage_cost(&state, &input, &config.ocp.cost);
        trajectory.points.push(TrajectoryPoint {
            time: t_hat,
            state: x_hat,
            chain: zeta,
            input,
            ratios: state.ratios,
            stage_cost: Some(cost),
        });
        let summary = summarize(&trajectory);
        return Ok(ClosedLoopResult {
            trajectory,
            applied: None,
            steps,
            summary,
        });
    }

    loop {
        let spec = OcpSpec::new(
            plant,
            funnel,
            reference,
            t_hat,
            x_hat.clone(),
            config.ocp.clone(),
        )
        .map_err(|source| FmpcError::Ocp {
            step: steps.len(),
            t_hat: t_hat.approx_f64(),
            source,
        })?;
        delta_steps = spec.delta_steps();
        let sol = ocp::solve(&spec, warm.as_ref()).map_err(|source| FmpcError::Ocp {
            step: steps.len(),
            t_hat: t_hat.approx_f64(),
            source,
        })?;

        // Apply the first `delta` seconds (clipped at the end of the run).
        let full_end = sol.control.step_start(delta_steps);
        let seg_end = if config.t_end < full_end - snap {
            config.t_end
        } else {
            full_end
        };
        let annotation = CostAnnotation {
            funnel,
            reference,
            cost: config.ocp.cost,
        };
        let segment = crate::ode::integrate(
            plant,
            &x_hat,
            &sol.control,
            (t_hat, seg_end),
            &config.ocp.integrator,
            Some(&annotation),
        )?;
        x_hat = segment
            .last_state()
            .expect("a non-empty span yields samples")
            .to_vec();
        trajectory.append(segment);
        for k in 0..delta_steps {
            applied_values.extend_from_slice(sol.control.step(k));
        }

        let step_min_margin = sol
            .terminal_margins
            .iter()
            .copied()
            .fold(S::infinity(), S::min);
        min_tube = Some(match min_tube {
            Some(current) => current.min(step_min_margin),
            None => step_min_margin,
        });
        steps.push(StepDiagnostics {
            index: steps.len(),
            t_hat,
            cost: sol.cost,
            min_tube_margin: step_min_margin,
            stats: sol.stats,
        });

        warm = Some(ocp::shift_warm_start(&sol.control, delta_steps));
        t_hat = full_end;
        if config.t_end - t_hat <= snap {
            break;
        }
    }

    let applied = ControlSequence::new(
        config.t_start,
        config.ocp.control_dt,
        m,
        applied_values,
    )
    .expect("applied values accumulate in valid shape");
    debug_assert_eq!(applied.len(), steps.len() * delta_steps);

    let mut summary = summarize(&trajectory);
    summary.steps = steps.len();
    summary.min_tube_margin = min_tube;
    Ok(ClosedLoopResult {
        trajectory,
        applied: Some(applied),
        steps,
        summary,
    })
}

/// Computes the aggregate summary of an annotated trajectory.
pub fn summarize<S: Scalar>(trajectory: &Trajectory<S>) -> RunSummary<S> {
    let mut max_sq_ratios: Vec<S> = Vec::new();
    let mut max_chain_levels: Vec<S> = Vec::new();
    let mut max_abs_input = S::zero();
    let mut input_energy = S::zero();
    let mut stage_cost_integral = S::zero();
    let mut prev: Option<(S, S, S)> = None; // (time, |u|^2, stage cost)
    let half = S::of(0.5);

    for point in &trajectory.points {
        for (i, &sq) in point.ratios.iter().enumerate() {
            if max_sq_ratios.len() <= i {
                max_sq_ratios.resize(i + 1, S::zero());
            }
            max_sq_ratios[i] = max_sq_ratios[i].max(sq);
        }
        let m = point.input.len().max(1);
        let levels = point.chain.len() / m;
        for i in 0..levels {
            if max_chain_levels.len() <= i {
                max_chain_levels.resize(i + 1, S::zero());
            }
            let mag = linalg::norm(&point.chain[i * m..(i + 1) * m]);
            max_chain_levels[i] = max_chain_levels[i].max(mag);
        }
        let u_sq = linalg::dot(&point.input, &point.input);
        max_abs_input = max_abs_input.max(linalg::max_abs(&point.input));
        let cost = point.stage_cost.unwrap_or_else(S::zero);
        if let Some((t_prev, u_prev, c_prev)) = prev {
            let h = point.time - t_prev;
            input_energy = input_energy + (u_prev + u_sq) * half * h;
            stage_cost_integral = stage_cost_integral + (c_prev + cost) * half * h;
        }
        prev = Some((point.time, u_sq, cost));
    }

    let duration = match (trajectory.points.first(), trajectory.points.last()) {
        (Some(first), Some(last)) => last.time - first.time,
        _ => S::zero(),
    };
    let max_ratios: Vec<S> = max_sq_ratios.iter().map(|&sq| sq.sqrt()).collect();
    let worst = max_ratios.iter().copied().fold(S::zero(), S::max);
    RunSummary {
        steps: 0,
        duration,
        max_ratios,
        max_chain_levels,
        max_abs_input,
        input_energy,
        stage_cost_integral,
        min_funnel_margin: S::one() - worst,
        min_tube_margin: None,
    }
}

/// What a feasibility violation broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// An error reached or crossed its funnel radius.
    FunnelBoundary,
    /// A tube margin at a `delta`-grid time fell below the tolerance.
    TerminalTube,
}

/// One violation found by the post-hoc feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityViolation<S> {
    pub time: S,
    /// Zero-based chain level.
    pub level: usize,
    /// The failing margin (funnel: `psi - |e|`; tube: `eps psi - |e|`).
    pub margin: S,
    pub kind: ViolationKind,
}

/// Outcome of the post-hoc feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport<S> {
    pub samples_checked: usize,
    pub tube_times_checked: usize,
    /// Smallest funnel margin `psi_i - |e_i|` over all samples and levels.
    pub min_funnel_margin: S,
    /// Smallest tube margin over the `delta`-grid samples, if any were hit.
    pub min_tube_margin: Option<S>,
    pub violations: Vec<FeasibilityViolation<S>>,
}

impl<S: Scalar> FeasibilityReport<S> {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-verifies a simulated trajectory from its raw states: every error must
/// stay strictly inside its funnel radius at every sample, and on the
/// `delta`-grid (including the start time) every error must lie inside the
/// `eps`-shrunk tube within `tol`. The chain is recomputed from the plant
/// states, independently of any annotations the run recorded.
pub fn check_recursive_feasibility<S: Scalar>(
    trajectory: &Trajectory<S>,
    plant: &dyn Plant<S>,
    funnel: &FunnelTrajectory<S>,
    reference: &dyn ReferenceSignal<S>,
    eps: &[S],
    delta: S,
    tol: S,
) -> FeasibilityReport<S> {
    let r = plant.relative_degree();
    let m = plant.input_dim();
    assert_eq!(eps.len(), r, "one tube factor per chain level");
    let t0 = trajectory.points.first().map_or(S::zero(), |p| p.time);
    let grid_tol = S::of(1e-6);

    let mut zeta = vec![S::zero(); r * m];
    let mut radii = vec![S::zero(); r];
    let mut min_funnel = S::infinity();
    let mut min_tube: Option<S> = None;
    let mut tube_times = 0usize;
    let mut violations = Vec::new();

    for point in &trajectory.points {
        plant.output_chain(&point.state, &mut zeta);
        let state = chain(point.time, &zeta, funnel, reference);
        funnel.radii_into(point.time, &mut radii);
        let levels = state.errors.len();
        let on_grid = {
            let steps = (point.time - t0) / delta;
            (steps - (steps + S::of(0.5)).floor()).abs() <= grid_tol
        };
        if on_grid {
            tube_times += 1;
        }
        for i in 0..levels {
            let norm = state.error_norm(i);
            let margin = radii[i] - norm;
            min_funnel = min_funnel.min(margin);
            if margin <= S::zero() {
                violations.push(FeasibilityViolation {
                    time: point.time,
                    level: i,
                    margin,
                    kind: ViolationKind::FunnelBoundary,
                });
            }
            if on_grid {
                let tube_margin = eps[i] * radii[i] - norm;
                min_tube = Some(match min_tube {
                    Some(current) => current.min(tube_margin),
                    None => tube_margin,
                });
                if tube_margin < -tol {
                    violations.push(FeasibilityViolation {
                        time: point.time,
                        level: i,
                        margin: tube_margin,
                        kind: ViolationKind::TerminalTube,
                    });
                }
            }
        }
    }

    FeasibilityReport {
        samples_checked: trajectory.points.len(),
        tube_times_checked: tube_times,
        min_funnel_margin: min_funnel,
        min_tube_margin: min_tube,
        violations,
    }
}
