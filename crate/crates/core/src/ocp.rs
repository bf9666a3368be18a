//! Finite-horizon optimal control with a funnel barrier stage cost.
//!
//! One problem instance minimizes the integrated stage cost of a
//! zero-order-hold input over a fixed horizon, subject to a hard input bound
//! and a terminal tube condition: a short time `delta` into the horizon every
//! chain error must sit inside its funnel radius shrunk by a per-level factor
//! `eps`. Feasible inputs keep the whole predicted trajectory strictly inside
//! the funnel (the barrier diverges at the boundary), and the terminal tube
//! is what lets the next problem in a receding-horizon loop start feasibly.
//!
//! The tube condition is enforced by a quadratic penalty homotopy (a short
//! schedule of increasing weights) around a projected BFGS iteration with
//! finite-difference gradients; the returned control is the best exactly
//! tube-feasible iterate encountered, which in particular can never be worse
//! than a tube-feasible warm start.

use thiserror::Error;

use std::ops::ControlFlow;

use crate::chain::{chain, stage_cost, StageCostConfig};
use crate::funnel::FunnelTrajectory;
use crate::funnel_controller::FunnelController;
use crate::linalg;
use crate::ode::{self, ControlSequence, IntegratorOptions, OdeError};
use crate::plant::Plant;
use crate::reference::ReferenceSignal;
use crate::scalar::Scalar;

/// Problem construction and solve failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    /// The problem data are inconsistent.
    #[error("invalid problem specification: {0}")]
    InvalidSpec(&'static str),
    /// The initial state already violates the funnel at chain level `index`
    /// (zero-based); no input can repair this.
    #[error("initial state violates the funnel at chain level {index} by {violation}")]
    InfeasibleStart { index: usize, violation: f64 },
    /// Every restart strategy failed to produce a tube-feasible input.
    #[error("no tube-feasible input found for the problem starting at t = {t_hat}")]
    NoFeasiblePoint { t_hat: f64 },
}

/// Knobs of the penalty/BFGS solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions<S> {
    /// Increasing weights of the quadratic tube penalty.
    pub penalty_weights: Vec<S>,
    /// Slack allowed when checking the tube margins exactly.
    pub terminal_tol: S,
    /// Projected-gradient stationarity tolerance (relative to the cost).
    pub grad_tol: S,
    /// Iteration cap per penalty stage.
    pub max_iterations: usize,
    /// Relative finite-difference step for gradients.
    pub fd_step: S,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo_c: S,
    /// Smallest admissible line-search step.
    pub min_step: S,
}

impl<S: Scalar> Default for SolverOptions<S> {
    fn default() -> Self {
        Self {
            penalty_weights: vec![S::of(1e2), S::of(1e4), S::of(1e6)],
            terminal_tol: S::of(1e-9),
            grad_tol: S::of(1e-8),
            max_iterations: 500,
            fd_step: S::of(1e-6),
            armijo_c: S::of(1e-4),
            min_step: S::of(1e-12),
        }
    }
}

/// Parameters shared by every problem of a receding-horizon run.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig<S> {
    /// Horizon length `T` (a multiple of `control_dt`).
    pub horizon: S,
    /// Tube time offset `delta` (a multiple of `control_dt`, at most `T`).
    pub delta: S,
    /// Zero-order-hold step of the input parameterization.
    pub control_dt: S,
    /// Hard bound `|u_i| <= input_bound` (component-wise).
    pub input_bound: S,
    /// Per-level funnel shrink factors of the terminal tube, each in (0, 1).
    pub feasibility_eps: Vec<S>,
    pub cost: StageCostConfig<S>,
    pub integrator: IntegratorOptions<S>,
    pub solver: SolverOptions<S>,
}

impl<S: Scalar> Default for OcpConfig<S> {
    /// Defaults match the mass-on-car benchmark scenario.
    fn default() -> Self {
        Self {
            horizon: S::of(0.6),
            delta: S::of(0.04),
            control_dt: S::of(0.04),
            input_bound: S::of(15.0),
            feasibility_eps: vec![S::of(0.94), S::of(0.99)],
            cost: StageCostConfig::default(),
            integrator: IntegratorOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// One validated problem instance: plant, funnel, reference, start point and
/// shared configuration.
pub struct OcpSpec<'a, S: Scalar> {
    plant: &'a dyn Plant<S>,
    funnel: &'a FunnelTrajectory<S>,
    reference: &'a dyn ReferenceSignal<S>,
    t_hat: S,
    x_hat: Vec<S>,
    config: OcpConfig<S>,
    horizon_steps: usize,
    delta_steps: usize,
}

/// Rounds `span / dt` to an integer grid count, rejecting non-multiples.
fn grid_steps<S: Scalar>(span: S, dt: S, what: &'static str) -> Result<usize, OcpError> {
    if !(span > S::zero()) || !span.is_finite() {
        return Err(OcpError::InvalidSpec(what));
    }
    let ratio = span / dt;
    let rounded = (ratio + S::of(0.5)).floor();
    let steps = rounded.to_usize().ok_or(OcpError::InvalidSpec(what))?;
    if steps == 0 || (ratio - rounded).abs() > S::of(1e-6) * ratio.max(S::one()) {
        return Err(OcpError::InvalidSpec(what));
    }
    Ok(steps)
}

impl<'a, S: Scalar> OcpSpec<'a, S> {
    pub fn new(
        plant: &'a dyn Plant<S>,
        funnel: &'a FunnelTrajectory<S>,
        reference: &'a dyn ReferenceSignal<S>,
        t_hat: S,
        x_hat: Vec<S>,
        config: OcpConfig<S>,
    ) -> Result<Self, OcpError> {
        let r = plant.relative_degree();
        if funnel.params().relative_degree() != r {
            return Err(OcpError::InvalidSpec(
                "funnel depth must equal the plant's relative degree",
            ));
        }
        if reference.dim() != plant.input_dim() {
            return Err(OcpError::InvalidSpec(
                "reference dimension must equal the plant's input dimension",
            ));
        }
        if x_hat.len() != plant.state_dim() {
            return Err(OcpError::InvalidSpec("initial state dimension"));
        }
        if !t_hat.is_finite() || x_hat.iter().any(|v| !v.is_finite()) {
            return Err(OcpError::InvalidSpec("initial point must be finite"));
        }
        if !(config.control_dt > S::zero()) || !config.control_dt.is_finite() {
            return Err(OcpError::InvalidSpec("control step must be positive"));
        }
        if !(config.input_bound >= S::zero()) || !config.input_bound.is_finite() {
            return Err(OcpError::InvalidSpec("input bound must be non-negative"));
        }
        let horizon_steps = grid_steps(
            config.horizon,
            config.control_dt,
            "horizon must be a positive multiple of the control step",
        )?;
        let delta_steps = grid_steps(
            config.delta,
            config.control_dt,
            "tube offset must be a positive multiple of the control step",
        )?;
        if delta_steps > horizon_steps {
            return Err(OcpError::InvalidSpec(
                "tube offset must not exceed the horizon",
            ));
        }
        if config.feasibility_eps.len() != r {
            return Err(OcpError::InvalidSpec(
                "one tube shrink factor is required per chain level",
            ));
        }
        if config
            .feasibility_eps
            .iter()
            .any(|&e| !(e > S::zero()) || !(e < S::one()))
        {
            return Err(OcpError::InvalidSpec(
                "tube shrink factors must lie strictly between 0 and 1",
            ));
        }
        let s = &config.solver;
        if s.penalty_weights.is_empty() || s.penalty_weights.iter().any(|&w| !(w > S::zero())) {
            return Err(OcpError::InvalidSpec(
                "penalty schedule must be non-empty and positive",
            ));
        }
        if !(s.fd_step > S::zero())
            || !(s.min_step > S::zero())
            || !(s.terminal_tol >= S::zero())
            || !(s.armijo_c > S::zero() && s.armijo_c < S::one())
            || s.max_iterations == 0
        {
            return Err(OcpError::InvalidSpec("solver options out of range"));
        }
        if !(config.cost.input_weight >= S::zero()) {
            return Err(OcpError::InvalidSpec("input weight must be non-negative"));
        }
        Ok(Self {
            plant,
            funnel,
            reference,
            t_hat,
            x_hat,
            config,
            horizon_steps,
            delta_steps,
        })
    }

    pub fn plant(&self) -> &dyn Plant<S> {
        self.plant
    }

    pub fn funnel(&self) -> &FunnelTrajectory<S> {
        self.funnel
    }

    pub fn reference(&self) -> &dyn ReferenceSignal<S> {
        self.reference
    }

    pub fn t_hat(&self) -> S {
        self.t_hat
    }

    pub fn x_hat(&self) -> &[S] {
        &self.x_hat
    }

    pub fn config(&self) -> &OcpConfig<S> {
        &self.config
    }

    /// Number of zero-order-hold steps on the horizon.
    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    /// Number of control steps from the start to the tube time.
    pub fn delta_steps(&self) -> usize {
        self.delta_steps
    }

    /// Zero input of the right shape for this problem.
    pub fn zero_control(&self) -> ControlSequence<S> {
        ControlSequence::zeros(
            self.t_hat,
            self.config.control_dt,
            self.plant.input_dim(),
            self.horizon_steps,
        )
    }

    fn control_from(&self, values: &[S]) -> ControlSequence<S> {
        ControlSequence::new(
            self.t_hat,
            self.config.control_dt,
            self.plant.input_dim(),
            values.to_vec(),
        )
        .expect("flat control storage has validated shape")
    }
}

/// Objective value of one input candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpEvaluation<S> {
    /// Integrated barrier stage cost; infinite when the predicted trajectory
    /// touches the funnel boundary.
    pub cost: S,
    /// Tube margins `eps_i psi_i - |e_i|` at the tube time, `None` when the
    /// trajectory saturated before reaching it.
    pub terminal_margins: Option<Vec<S>>,
    /// Predicted state at the end of the horizon.
    pub end_state: Vec<S>,
}

impl<S: Scalar> OcpEvaluation<S> {
    /// Whether all tube margins are met within `tol`.
    pub fn tube_feasible(&self, tol: S) -> bool {
        self.cost.is_finite()
            && self
                .terminal_margins
                .as_ref()
                .is_some_and(|ms| ms.iter().all(|&m| m >= -tol))
    }
}

/// Integrates the predicted trajectory under `control` and accumulates the
/// stage cost by the composite trapezoid rule on the integrator's sample
/// grid. Saturation anywhere on the grid makes the cost infinite.
pub fn evaluate<S: Scalar>(
    spec: &OcpSpec<'_, S>,
    control: &ControlSequence<S>,
) -> Result<OcpEvaluation<S>, OdeError> {
    let plant = spec.plant;
    let r = plant.relative_degree();
    let m = plant.input_dim();
    let q = spec.config.integrator.samples_per_interval.max(1);
    let h_sub = control.dt() / S::from_usize(q).unwrap();
    let half = S::of(0.5);
    let tube_node = spec.delta_steps * q;

    let mut zeta = vec![S::zero(); r * m];
    let mut radii = vec![S::zero(); r];
    let mut running = S::zero();
    let mut prev = S::zero();
    let mut saturated = false;
    let mut margins: Option<Vec<S>> = None;

    let span = (spec.t_hat, control.end());
    let (end_state, _) = ode::integrate_zoh_with(
        plant,
        &spec.x_hat,
        control,
        span,
        &spec.config.integrator,
        |sample| {
            plant.output_chain(sample.state, &mut zeta);
            let state = chain(sample.time, &zeta, spec.funnel, spec.reference);
            if state.is_saturated() {
                saturated = true;
                return ControlFlow::Break(());
            }
            let cost = stage_cost(&state, sample.input, &spec.config.cost);
            if sample.node == 0 {
                prev = cost;
            } else {
                running = running + (prev + cost) * half * h_sub;
                prev = cost;
            }
            if margins.is_none() && sample.interval * q + sample.node == tube_node {
                spec.funnel.radii_into(sample.time, &mut radii);
                let tube = (0..r)
                    .map(|i| spec.config.feasibility_eps[i] * radii[i] - state.error_norm(i))
                    .collect();
                margins = Some(tube);
            }
            ControlFlow::Continue(())
        },
    )?;
    Ok(OcpEvaluation {
        cost: if saturated { S::infinity() } else { running },
        terminal_margins: if saturated { None } else { margins },
        end_state,
    })
}

/// Penalized objective: barrier cost plus `weight` times the squared hinge of
/// each tube margin. Infinite whenever the barrier cost is.
pub fn total_cost<S: Scalar>(eval: &OcpEvaluation<S>, weight: S) -> S {
    if !eval.cost.is_finite() {
        return S::infinity();
    }
    let Some(margins) = &eval.terminal_margins else {
        return S::infinity();
    };
    let mut penalty = S::zero();
    for &m in margins {
        let v = (-m).max(S::zero());
        penalty = penalty + v * v;
    }
    eval.cost + weight * penalty
}

/// Work counters of one solve call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    /// BFGS iterations across all penalty stages.
    pub iterations: u64,
    /// Objective evaluations (each integrates the horizon once).
    pub cost_evaluations: u64,
    /// Finite-difference gradient evaluations.
    pub gradient_evaluations: u64,
    /// Which restart produced the answer: 0 = warm start (or the first
    /// strategy when no warm start was given).
    pub restart_index: u32,
}

/// A solved problem: the input, its exact objective value and tube margins.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution<S> {
    pub control: ControlSequence<S>,
    pub cost: S,
    pub terminal_margins: Vec<S>,
    pub end_state: Vec<S>,
    pub stats: SolveStats,
}

/// Shifts a horizon input forward by `shift_steps` control steps, repeating
/// the final value to refill the tail. The shifted start time reproduces the
/// original grid arithmetic bit for bit.
pub fn shift_warm_start<S: Scalar>(
    control: &ControlSequence<S>,
    shift_steps: usize,
) -> ControlSequence<S> {
    let m = control.dim();
    let n = control.len();
    let mut values = Vec::with_capacity(n * m);
    for step in 0..n {
        values.extend_from_slice(control.step((step + shift_steps).min(n - 1)));
    }
    ControlSequence::new(control.step_start(shift_steps), control.dt(), m, values)
        .expect("shifting preserves a valid shape")
}

/// Solves the problem, trying the warm start first and falling back to a
/// zero input and then to a sampled funnel-controller rollout. Returns the
/// first restart that yields a tube-feasible answer.
pub fn solve<S: Scalar>(
    spec: &OcpSpec<'_, S>,
    warm: Option<&ControlSequence<S>>,
) -> Result<OcpSolution<S>, OcpError> {
    let plant = spec.plant;
    let r = plant.relative_degree();
    let m = plant.input_dim();

    // The chain at the start point does not depend on the input; if it is
    // already saturated the problem has no feasible input at all.
    let mut zeta = vec![S::zero(); r * m];
    plant.output_chain(&spec.x_hat, &mut zeta);
    let start_chain = chain(spec.t_hat, &zeta, spec.funnel, spec.reference);
    if let Some(level) = start_chain.saturated {
        let radius = spec.funnel.radius(level, spec.t_hat);
        return Err(OcpError::InfeasibleStart {
            index: level,
            violation: (start_chain.error_norm(level) - radius).approx_f64(),
        });
    }

    let dims = spec.horizon_steps * m;
    let mut candidates: Vec<Vec<S>> = Vec::with_capacity(3);
    if let Some(w) = warm {
        let snap = spec.config.control_dt * S::of(1e-9);
        let compatible = w.dim() == m
            && w.len() == spec.horizon_steps
            && (w.start() - spec.t_hat).abs() <= snap
            && (w.dt() - spec.config.control_dt).abs() <= snap;
        if compatible {
            candidates.push(w.values().to_vec());
        }
    }
    candidates.push(vec![S::zero(); dims]);
    if plant.normal_form().is_some() {
        if let Ok(fc) = FunnelController::new(plant, spec.funnel, spec.reference, None) {
            if let Ok(rollout) = fc.zoh_rollout(
                &spec.x_hat,
                spec.t_hat,
                spec.horizon_steps,
                spec.config.control_dt,
                &spec.config.integrator,
            ) {
                candidates.push(rollout.into_values());
            }
        }
    }

    let mut stats = SolveStats::default();
    for (index, mut start) in candidates.into_iter().enumerate() {
        project(&mut start, spec.config.input_bound);
        if let Some((values, eval)) = optimize_from(spec, &start, &mut stats) {
            stats.restart_index = index as u32;
            return Ok(OcpSolution {
                control: spec.control_from(&values),
                cost: eval.cost,
                terminal_margins: eval.terminal_margins.expect("feasible answers carry margins"),
                end_state: eval.end_state,
                stats,
            });
        }
    }
    Err(OcpError::NoFeasiblePoint {
        t_hat: spec.t_hat.approx_f64(),
    })
}

fn project<S: Scalar>(z: &mut [S], bound: S) {
    for v in z.iter_mut() {
        *v = (*v).min(bound).max(-bound);
    }
}

fn exact_eval<S: Scalar>(
    spec: &OcpSpec<'_, S>,
    z: &[S],
    stats: &mut SolveStats,
) -> Option<OcpEvaluation<S>> {
    stats.cost_evaluations += 1;
    evaluate(spec, &spec.control_from(z)).ok()
}

fn penalized_cost<S: Scalar>(
    spec: &OcpSpec<'_, S>,
    z: &[S],
    weight: S,
    stats: &mut SolveStats,
) -> S {
    match exact_eval(spec, z, stats) {
        Some(eval) => total_cost(&eval, weight),
        None => S::infinity(),
    }
}

/// Runs the full penalty schedule from one start point and picks the best
/// exactly tube-feasible iterate seen (the start itself, or any stage end).
fn optimize_from<S: Scalar>(
    spec: &OcpSpec<'_, S>,
    start: &[S],
    stats: &mut SolveStats,
) -> Option<(Vec<S>, OcpEvaluation<S>)> {
    let start_eval = exact_eval(spec, start, stats)?;
    if !start_eval.cost.is_finite() {
        return None;
    }
    let mut pool: Vec<(Vec<S>, OcpEvaluation<S>)> = vec![(start.to_vec(), start_eval.clone())];
    let mut z = start.to_vec();
    let mut z_eval = start_eval.clone();
    for &weight in &spec.config.solver.penalty_weights.clone() {
        // Anchor each stage at whichever of the carried iterate and the
        // original start is better under the new weight.
        if total_cost(&start_eval, weight) < total_cost(&z_eval, weight) {
            z.copy_from_slice(start);
        }
        bfgs_stage(spec, &mut z, weight, stats);
        z_eval = exact_eval(spec, &z, stats)?;
        pool.push((z.clone(), z_eval.clone()));
    }
    let tol = spec.config.solver.terminal_tol;
    let mut best: Option<usize> = None;
    for (i, (_, eval)) in pool.iter().enumerate() {
        if eval.tube_feasible(tol) && best.is_none_or(|b| eval.cost < pool[b].1.cost) {
            best = Some(i);
        }
    }
    best.map(|i| pool.swap_remove(i))
}

/// Forward finite-difference gradient with a backward fallback where the
/// forward probe is blocked by the bound or lands on an infinite cost.
fn fd_gradient<S: Scalar>(
    spec: &OcpSpec<'_, S>,
    z: &[S],
    fz: S,
    weight: S,
    stats: &mut SolveStats,
) -> Vec<S> {
    stats.gradient_evaluations += 1;
    let bound = spec.config.input_bound;
    let rel = spec.config.solver.fd_step;
    let mut g = vec![S::zero(); z.len()];
    let mut probe = z.to_vec();
    for i in 0..z.len() {
        let h = rel * z[i].abs().max(S::one());
        let fwd = (z[i] + h).min(bound);
        if fwd > z[i] {
            probe[i] = fwd;
            let fp = penalized_cost(spec, &probe, weight, stats);
            probe[i] = z[i];
            if fp.is_finite() {
                g[i] = (fp - fz) / (fwd - z[i]);
                continue;
            }
        }
        let bwd = (z[i] - h).max(-bound);
        if bwd < z[i] {
            probe[i] = bwd;
            let fm = penalized_cost(spec, &probe, weight, stats);
            probe[i] = z[i];
            if fm.is_finite() {
                g[i] = (fz - fm) / (z[i] - bwd);
            }
        }
    }
    g
}

/// Minimizes the penalized objective at one weight by projected BFGS with a
/// backtracking line search along the projected path.
fn bfgs_stage<S: Scalar>(spec: &OcpSpec<'_, S>, z: &mut Vec<S>, weight: S, stats: &mut SolveStats) {
    let dims = z.len();
    let opts = spec.config.solver.clone();
    let bound = spec.config.input_bound;
    let edge = S::of(16.0) * S::epsilon() * bound.max(S::one());

    let mut fz = penalized_cost(spec, z, weight, stats);
    if !fz.is_finite() {
        return;
    }
    let mut g = fd_gradient(spec, z, fz, weight, stats);
    let mut h_inv = identity::<S>(dims);
    let mut dir = vec![S::zero(); dims];
    let mut z_new = vec![S::zero(); dims];
    let mut s = vec![S::zero(); dims];
    let mut y = vec![S::zero(); dims];
    let mut hy = vec![S::zero(); dims];

    for _ in 0..opts.max_iterations {
        stats.iterations += 1;

        // Projected stationarity: gradient components that only push against
        // an active bound do not count.
        let mut pg = S::zero();
        for i in 0..dims {
            let gi = g[i];
            let blocked_low = z[i] <= -bound + edge && gi > S::zero();
            let blocked_high = z[i] >= bound - edge && gi < S::zero();
            if !(blocked_low || blocked_high) {
                pg = pg.max(gi.abs());
            }
        }
        if pg <= opts.grad_tol * (S::one() + fz.abs()) {
            break;
        }

        linalg::mat_vec(&h_inv, &g, &mut dir, dims, dims);
        for d in dir.iter_mut() {
            *d = -*d;
        }
        if linalg::dot(&dir, &g) >= S::zero() {
            // The approximation lost positive definiteness; restart it.
            h_inv = identity::<S>(dims);
            for i in 0..dims {
                dir[i] = -g[i];
            }
        }

        let mut alpha = S::one();
        let mut accepted = false;
        let mut f_new = fz;
        while alpha >= opts.min_step {
            let mut moved = false;
            let mut slope = S::zero();
            for i in 0..dims {
                z_new[i] = (z[i] + alpha * dir[i]).min(bound).max(-bound);
                let step = z_new[i] - z[i];
                moved |= step != S::zero();
                slope = slope + g[i] * step;
            }
            if !moved {
                break;
            }
            if slope < S::zero() {
                f_new = penalized_cost(spec, &z_new, weight, stats);
                if f_new <= fz + opts.armijo_c * slope {
                    accepted = true;
                    break;
                }
            }
            alpha = alpha * S::of(0.5);
        }
        if !accepted {
            break;
        }

        let g_new = fd_gradient(spec, &z_new, f_new, weight, stats);
        for i in 0..dims {
            s[i] = z_new[i] - z[i];
            y[i] = g_new[i] - g[i];
        }
        let sy = linalg::dot(&s, &y);
        if sy > S::of(1e-12) * linalg::norm(&s) * linalg::norm(&y) && sy > S::zero() {
            // Inverse BFGS update.
            linalg::mat_vec(&h_inv, &y, &mut hy, dims, dims);
            let yhy = linalg::dot(&y, &hy);
            let rho = S::one() / sy;
            let c1 = (sy + yhy) * rho * rho;
            for i in 0..dims {
                for j in 0..dims {
                    h_inv[i * dims + j] = h_inv[i * dims + j] + c1 * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        z.copy_from_slice(&z_new);
        fz = f_new;
        g = g_new;
    }
}

fn identity<S: Scalar>(n: usize) -> Vec<S> {
    let mut m = vec![S::zero(); n * n];
    for i in 0..n {
        m[i * n + i] = S::one();
    }
    m
}
