//! Adaptive integration of controlled dynamics.
//!
//! Closed loops here are driven by piecewise-constant (zero-order-hold)
//! inputs, so the solution is classical on every control interval and only
//! the derivative jumps at breakpoints. The integrator therefore restarts at
//! every breakpoint and never steps across one, and produces samples on a
//! uniform sub-grid of each control interval (`samples_per_interval` nodes
//! per interval) by landing on the sample times exactly.
//!
//! The stepper is an embedded Dormand-Prince 5(4) pair with PI step-size
//! control and the first-same-as-last optimization. A fixed-step mode (no
//! error control) exists for convergence-order measurements.

use std::ops::ControlFlow;

use thiserror::Error;

use crate::chain::{chain, stage_cost, StageCostConfig};
use crate::funnel::FunnelTrajectory;
use crate::plant::Plant;
use crate::reference::ReferenceSignal;
use crate::scalar::Scalar;

/// Integration failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    /// The error controller pushed the step below the resolution floor.
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    /// The step budget for one integration segment was exhausted.
    #[error("step budget exhausted at t = {t}")]
    MaxStepsExceeded { t: f64 },
    /// The right-hand side refused to evaluate (e.g. a feedback law whose
    /// gains are undefined at the current state).
    #[error("right-hand side aborted integration at t = {t}")]
    Aborted { t: f64 },
    /// The state left the representable range.
    #[error("state became non-finite near t = {t}")]
    NonFiniteState { t: f64 },
    /// The requested span is not covered by the control sequence.
    #[error("integration span not covered by the control sequence")]
    Coverage,
    /// Malformed arguments.
    #[error("invalid integration input: {0}")]
    InvalidInput(&'static str),
}

/// Zero-order-hold input signal: value `k` applies on the right-open interval
/// `[start + k dt, start + (k+1) dt)`; the final breakpoint evaluates to the
/// last value.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence<S> {
    start: S,
    dt: S,
    dim: usize,
    values: Vec<S>,
}

impl<S: Scalar> ControlSequence<S> {
    /// Builds a sequence of `values.len() / dim >= 1` steps.
    pub fn new(start: S, dt: S, dim: usize, values: Vec<S>) -> Result<Self, OdeError> {
        if !(dt > S::zero()) || !dt.is_finite() || !start.is_finite() {
            return Err(OdeError::InvalidInput("control grid must be finite with dt > 0"));
        }
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return Err(OdeError::InvalidInput(
                "control values must be a non-empty multiple of the input dimension",
            ));
        }
        Ok(Self {
            start,
            dt,
            dim,
            values,
        })
    }

    /// All-zero sequence with `steps` steps.
    pub fn zeros(start: S, dt: S, dim: usize, steps: usize) -> Self {
        Self::new(start, dt, dim, vec![S::zero(); dim * steps.max(1)])
            .expect("zero sequence parameters are valid")
    }

    /// Number of steps `N`.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    /// A sequence always holds at least one step.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> S {
        self.dt
    }

    pub fn start(&self) -> S {
        self.start
    }

    /// Coverage end `start + N dt`.
    pub fn end(&self) -> S {
        self.step_start(self.len())
    }

    /// Breakpoint `start + k dt` (also defined for `k == N`).
    pub fn step_start(&self, k: usize) -> S {
        self.start + S::from_usize(k).unwrap() * self.dt
    }

    /// Value held on step `k`.
    pub fn step(&self, k: usize) -> &[S] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Flat value storage (`N * dim`, step-major).
    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Step index active at `t`, snapping to the grid within a relative
    /// `1e-9` of `dt`; `None` outside the coverage.
    pub fn index_at(&self, t: S) -> Option<usize> {
        let rel = (t - self.start) / self.dt;
        let tol = S::of(1e-9);
        if rel < -tol || !rel.is_finite() {
            return None;
        }
        let steps = S::from_usize(self.len()).unwrap();
        if rel > steps + tol {
            return None;
        }
        let floor = rel.floor();
        let mut idx = floor.to_usize().unwrap_or(0);
        if rel - floor > S::one() - tol {
            idx += 1;
        }
        Some(idx.min(self.len() - 1))
    }

    /// Value applied at `t` under the right-open convention.
    pub fn value_at(&self, t: S) -> Option<&[S]> {
        self.index_at(t).map(|k| self.step(k))
    }
}

/// Tolerances and sampling density for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions<S> {
    pub abs_tol: S,
    pub rel_tol: S,
    /// Samples per control interval (`q`); the sub-grid spacing is `dt / q`.
    pub samples_per_interval: usize,
    /// Step budget per integration segment.
    pub max_steps: usize,
    /// Disables error control and forces this step size (testing only).
    pub fixed_step: Option<S>,
}

impl<S: Scalar> Default for IntegratorOptions<S> {
    fn default() -> Self {
        Self {
            abs_tol: S::default_tolerance(),
            rel_tol: S::default_tolerance(),
            samples_per_interval: 4,
            max_steps: 100_000,
            fixed_step: None,
        }
    }
}

/// Work counters for one integration call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub rhs_evaluations: u64,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
}

impl IntegrationStats {
    pub fn absorb(&mut self, other: IntegrationStats) {
        self.rhs_evaluations += other.rhs_evaluations;
        self.accepted_steps += other.accepted_steps;
        self.rejected_steps += other.rejected_steps;
    }
}

/// One recorded sample of a simulated closed or open loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint<S> {
    pub time: S,
    pub state: Vec<S>,
    /// Output chain `chi(x)` at the sample.
    pub chain: Vec<S>,
    /// Input applied at the sample (right-continuous at breakpoints).
    pub input: Vec<S>,
    /// Squared funnel ratios, filled when the run was annotated.
    pub ratios: Vec<S>,
    /// Barrier stage cost, filled when the run was annotated.
    pub stage_cost: Option<S>,
}

/// Time-ordered samples plus integrator work counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory<S> {
    pub points: Vec<TrajectoryPoint<S>>,
    pub stats: IntegrationStats,
}

impl<S: Scalar> Trajectory<S> {
    pub fn last_state(&self) -> Option<&[S]> {
        self.points.last().map(|p| p.state.as_slice())
    }

    /// Appends a continuation segment; if it starts at this trajectory's last
    /// sample time, the boundary sample is replaced by the continuation's
    /// (which carries the input applied from that time on).
    pub fn append(&mut self, mut other: Trajectory<S>) {
        if let (Some(last), Some(first)) = (self.points.last(), other.points.first()) {
            if last.time == first.time {
                self.points.pop();
            } else {
                debug_assert!(first.time > last.time, "segments must be time-ordered");
            }
        }
        self.points.append(&mut other.points);
        self.stats.absorb(other.stats);
    }
}

/// Context for annotating samples with funnel ratios and stage costs.
pub struct CostAnnotation<'a, S: Scalar> {
    pub funnel: &'a FunnelTrajectory<S>,
    pub reference: &'a dyn ReferenceSignal<S>,
    pub cost: StageCostConfig<S>,
}

/// Sample handed to the streaming integration callback.
#[derive(Debug)]
pub struct ZohSample<'a, S> {
    pub time: S,
    pub state: &'a [S],
    pub input: &'a [S],
    /// Control interval index within the sequence.
    pub interval: usize,
    /// Node index on the interval's sub-grid (`0..=q`); interval boundaries
    /// are emitted twice, as node `q` of one interval and node `0` of the
    /// next, with the respective held inputs.
    pub node: usize,
}

// Dormand-Prince 5(4) tableau.
const STAGES: usize = 7;
const DP_C: [f64; STAGES] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Difference between the 5th- and 4th-order weights.
const DP_ERR: [f64; STAGES] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Clone, Copy, PartialEq)]
enum RejectReason {
    NonFinite,
    Abort,
}

/// Adaptive stepper state reused across the segments of one integration call.
struct Stepper<S: Scalar> {
    a: [[S; 6]; STAGES],
    c: [S; STAGES],
    err_w: [S; STAGES],
    k: Vec<Vec<S>>,
    y_stage: Vec<S>,
    y_next: Vec<S>,
    h: S,
    err_old: S,
    /// Whether `k[0]` currently holds the derivative at `(t, x)`.
    fsal: bool,
    abs_tol: S,
    rel_tol: S,
    fixed: Option<S>,
    max_steps: usize,
    stats: IntegrationStats,
}

impl<S: Scalar> Stepper<S> {
    fn new(dim: usize, opts: &IntegratorOptions<S>) -> Self {
        let mut a = [[S::zero(); 6]; STAGES];
        let mut c = [S::zero(); STAGES];
        let mut err_w = [S::zero(); STAGES];
        for s in 0..STAGES {
            c[s] = S::of(DP_C[s]);
            err_w[s] = S::of(DP_ERR[s]);
            for j in 0..6 {
                a[s][j] = S::of(DP_A[s][j]);
            }
        }
        Self {
            a,
            c,
            err_w,
            k: (0..STAGES).map(|_| vec![S::zero(); dim]).collect(),
            y_stage: vec![S::zero(); dim],
            y_next: vec![S::zero(); dim],
            h: S::zero(),
            err_old: S::of(1e-4),
            fsal: false,
            abs_tol: opts.abs_tol,
            rel_tol: opts.rel_tol,
            fixed: opts.fixed_step,
            max_steps: opts.max_steps.max(16),
            stats: IntegrationStats::default(),
        }
    }

    /// Marks the cached derivative stale (the input or RHS changed).
    fn invalidate_fsal(&mut self) {
        self.fsal = false;
    }

    /// Resolution floor below which a step cannot make progress.
    fn floor_at(t: S) -> S {
        S::of(16.0) * S::epsilon() * t.abs().max(S::one())
    }

    /// Attempts one step of size `h` from `(t, x)`; fills `y_next` and
    /// returns the scaled error estimate, or the reason the attempt failed.
    fn try_step<R>(&mut self, rhs: &mut R, t: S, x: &[S], h: S) -> Result<S, RejectReason>
    where
        R: FnMut(S, &[S], &mut [S]) -> bool,
    {
        let n = x.len();
        for s in 1..STAGES {
            for i in 0..n {
                let mut acc = S::zero();
                for j in 0..s {
                    let a = self.a[s][j];
                    if a != S::zero() {
                        acc = acc + a * self.k[j][i];
                    }
                }
                self.y_stage[i] = x[i] + h * acc;
            }
            if s == STAGES - 1 {
                // The last stage sits on the 5th-order solution itself.
                self.y_next.copy_from_slice(&self.y_stage);
            }
            let ts = t + self.c[s] * h;
            let arg = if s == STAGES - 1 {
                &self.y_next
            } else {
                &self.y_stage
            };
            self.stats.rhs_evaluations += 1;
            if !rhs(ts, arg, &mut self.k[s]) {
                return Err(RejectReason::Abort);
            }
        }
        let mut acc = S::zero();
        let mut finite = true;
        for i in 0..n {
            let mut e = S::zero();
            for j in 0..STAGES {
                let w = self.err_w[j];
                if w != S::zero() {
                    e = e + w * self.k[j][i];
                }
            }
            e = e * h;
            let sc = self.abs_tol + self.rel_tol * x[i].abs().max(self.y_next[i].abs());
            let q = e / sc;
            acc = acc + q * q;
            finite &= self.y_next[i].is_finite();
        }
        let err = (acc / S::from_usize(n).unwrap()).sqrt();
        if !finite || !err.is_finite() {
            return Err(RejectReason::NonFinite);
        }
        Ok(err)
    }

    /// Ensures `k[0] = f(t, x)`; an abort here happens at an already accepted
    /// state, so it is terminal.
    fn prime<R>(&mut self, rhs: &mut R, t: S, x: &[S]) -> Result<(), OdeError>
    where
        R: FnMut(S, &[S], &mut [S]) -> bool,
    {
        if !self.fsal {
            self.stats.rhs_evaluations += 1;
            if !rhs(t, x, &mut self.k[0]) {
                return Err(OdeError::Aborted { t: t.approx_f64() });
            }
            self.fsal = true;
        }
        Ok(())
    }

    /// Integrates from `*t` to exactly `target`, mutating `x` in place.
    fn advance<R>(&mut self, rhs: &mut R, t: &mut S, x: &mut [S], target: S) -> Result<(), OdeError>
    where
        R: FnMut(S, &[S], &mut [S]) -> bool,
    {
        if target == *t {
            return Ok(());
        }
        if target < *t {
            return Err(OdeError::InvalidInput("integration must move forward"));
        }
        // PI controller constants (safety factor, ratio clamps, PI exponents).
        let safe = S::of(0.9);
        let fac_max = S::of(5.0);
        let fac_min = S::of(0.1);
        let expo = S::of(0.17);
        let beta = S::of(0.04);

        let mut attempts = 0usize;
        loop {
            let floor = Self::floor_at(*t);
            let remaining = target - *t;
            if remaining <= floor {
                *t = target;
                return Ok(());
            }
            attempts += 1;
            if attempts > self.max_steps {
                return Err(OdeError::MaxStepsExceeded { t: t.approx_f64() });
            }

            if let Some(hf) = self.fixed {
                let landing = hf >= remaining - floor;
                let h = if landing { remaining } else { hf };
                self.prime(rhs, *t, x)?;
                match self.try_step(rhs, *t, x, h) {
                    Ok(_) => {}
                    Err(RejectReason::Abort) => {
                        return Err(OdeError::Aborted { t: t.approx_f64() })
                    }
                    Err(RejectReason::NonFinite) => {
                        return Err(OdeError::NonFiniteState { t: t.approx_f64() })
                    }
                }
                self.accept(t, x, h, target, landing);
                continue;
            }

            if self.h <= S::zero() || !self.h.is_finite() {
                self.h = remaining;
            }
            let landing = self.h >= remaining - floor;
            let h = if landing { remaining } else { self.h };
            if h < floor {
                return Err(OdeError::StepSizeUnderflow { t: t.approx_f64() });
            }
            self.prime(rhs, *t, x)?;
            match self.try_step(rhs, *t, x, h) {
                Ok(err) if err <= S::one() => {
                    // Accepted: PI update based on this and the previous error.
                    let fac11 = err.max(S::of(1e-10)).powf(expo);
                    let fac = (fac11 / self.err_old.powf(beta) / safe)
                        .max(fac_min)
                        .min(fac_max);
                    self.err_old = err.max(S::of(1e-4));
                    self.h = h / fac;
                    self.accept(t, x, h, target, landing);
                }
                Ok(err) => {
                    self.stats.rejected_steps += 1;
                    let fac11 = err.powf(expo);
                    self.h = h / (fac11 / safe).min(S::one() / fac_min);
                    if self.h < floor {
                        return Err(OdeError::StepSizeUnderflow { t: t.approx_f64() });
                    }
                }
                Err(reason) => {
                    self.stats.rejected_steps += 1;
                    self.h = h * S::of(0.5);
                    if self.h < floor {
                        return Err(match reason {
                            RejectReason::Abort => OdeError::Aborted { t: t.approx_f64() },
                            RejectReason::NonFinite => {
                                OdeError::NonFiniteState { t: t.approx_f64() }
                            }
                        });
                    }
                }
            }
        }
    }

    fn accept(&mut self, t: &mut S, x: &mut [S], h: S, target: S, landing: bool) {
        self.stats.accepted_steps += 1;
        x.copy_from_slice(&self.y_next);
        self.k.swap(0, STAGES - 1); // first-same-as-last
        *t = if landing { target } else { *t + h };
    }
}

/// Integrates `x' = f(x) + g(x) u(t)` over `span` under the zero-order-hold
/// input `control`, invoking `on_sample` at every sub-grid node (interval
/// boundaries are visited twice, once with each held input). Returns the
/// final state; breaking from the callback stops the integration early and
/// returns the state reached so far.
pub fn integrate_zoh_with<S: Scalar, F>(
    plant: &dyn Plant<S>,
    x0: &[S],
    control: &ControlSequence<S>,
    span: (S, S),
    opts: &IntegratorOptions<S>,
    mut on_sample: F,
) -> Result<(Vec<S>, IntegrationStats), OdeError>
where
    F: FnMut(&ZohSample<'_, S>) -> ControlFlow<()>,
{
    let n = plant.state_dim();
    if x0.len() != n {
        return Err(OdeError::InvalidInput("initial state dimension"));
    }
    if control.dim() != plant.input_dim() {
        return Err(OdeError::InvalidInput("control dimension"));
    }
    let (t_begin, t_final) = span;
    if !(t_final >= t_begin) {
        return Err(OdeError::InvalidInput("span must be ordered"));
    }
    let snap = control.dt() * S::of(1e-9);
    if t_begin < control.start() - snap || t_final > control.end() + snap {
        return Err(OdeError::Coverage);
    }
    let q = opts.samples_per_interval.max(1);
    let h_sub = control.dt() / S::from_usize(q).unwrap();

    let mut stepper = Stepper::new(n, opts);
    let mut x = x0.to_vec();
    let mut t = t_begin;
    let mut interval = control.index_at(t_begin).ok_or(OdeError::Coverage)?;

    loop {
        let u = control.step(interval);
        let mut rhs = |_t: S, xx: &[S], dxx: &mut [S]| {
            plant.rhs(xx, u, dxx);
            true
        };
        if on_sample(&ZohSample {
            time: t,
            state: &x,
            input: u,
            interval,
            node: 0,
        })
        .is_break()
        {
            return Ok((x, stepper.stats));
        }
        if t_final - t <= snap {
            break;
        }
        stepper.invalidate_fsal();
        let base = control.step_start(interval);
        let next_breakpoint = control.step_start(interval + 1);
        let seg_end = if t_final < next_breakpoint - snap {
            t_final
        } else {
            next_breakpoint
        };
        for node in 1..=q {
            let mut node_t = if node == q {
                next_breakpoint
            } else {
                base + h_sub * S::from_usize(node).unwrap()
            };
            let mut last = node == q;
            if node_t >= seg_end - snap {
                node_t = seg_end;
                last = true;
            }
            if node_t <= t {
                continue;
            }
            stepper.advance(&mut rhs, &mut t, &mut x, node_t)?;
            if on_sample(&ZohSample {
                time: t,
                state: &x,
                input: u,
                interval,
                node,
            })
            .is_break()
            {
                return Ok((x, stepper.stats));
            }
            if last {
                break;
            }
        }
        if t_final - t <= snap || interval + 1 >= control.len() {
            break;
        }
        interval += 1;
    }
    Ok((x, stepper.stats))
}

/// Integrates and records the full sampled trajectory. When `annotation` is
/// given, every sample carries its funnel ratios and barrier stage cost.
pub fn integrate<S: Scalar>(
    plant: &dyn Plant<S>,
    x0: &[S],
    control: &ControlSequence<S>,
    span: (S, S),
    opts: &IntegratorOptions<S>,
    annotation: Option<&CostAnnotation<'_, S>>,
) -> Result<Trajectory<S>, OdeError> {
    let r = plant.relative_degree();
    let m = plant.input_dim();
    let mut points: Vec<TrajectoryPoint<S>> = Vec::new();
    let mut zeta = vec![S::zero(); r * m];
    let (_, stats) = integrate_zoh_with(plant, x0, control, span, opts, |sample| {
        plant.output_chain(sample.state, &mut zeta);
        let (ratios, cost) = match annotation {
            Some(ann) => {
                let state = chain(sample.time, &zeta, ann.funnel, ann.reference);
                let cost = stage_cost(&state, sample.input, &ann.cost);
                (state.ratios, Some(cost))
            }
            None => (Vec::new(), None),
        };
        let point = TrajectoryPoint {
            time: sample.time,
            state: sample.state.to_vec(),
            chain: zeta.clone(),
            input: sample.input.to_vec(),
            ratios,
            stage_cost: cost,
        };
        match points.last_mut() {
            // A breakpoint is emitted twice; keep the emission carrying the
            // input applied from that time on (right-continuity).
            Some(last) if last.time == point.time => *last = point,
            _ => points.push(point),
        }
        ControlFlow::Continue(())
    })?;
    Ok(Trajectory { points, stats })
}

/// Integrates a free-form right-hand side over `span`, sampling the solution
/// on the uniform grid with spacing `sample_dt` (plus the span end). The RHS
/// returns `false` to veto a state it cannot evaluate; the stepper treats a
/// veto at a trial state as a step rejection and only fails once the step
/// size underflows.
pub fn solve_ivp<S: Scalar, F>(
    mut rhs: F,
    x0: &[S],
    span: (S, S),
    sample_dt: S,
    opts: &IntegratorOptions<S>,
) -> Result<(Vec<(S, Vec<S>)>, IntegrationStats), OdeError>
where
    F: FnMut(S, &[S], &mut [S]) -> bool,
{
    if !(sample_dt > S::zero()) {
        return Err(OdeError::InvalidInput("sample spacing must be positive"));
    }
    if !(span.1 >= span.0) {
        return Err(OdeError::InvalidInput("span must be ordered"));
    }
    let snap = sample_dt * S::of(1e-9);
    let mut stepper = Stepper::new(x0.len(), opts);
    let mut t = span.0;
    let mut x = x0.to_vec();
    let mut samples = vec![(t, x.clone())];
    let mut j = 1usize;
    while span.1 - t > snap {
        let mut target = span.0 + sample_dt * S::from_usize(j).unwrap();
        if target >= span.1 - snap {
            target = span.1;
        }
        stepper.advance(&mut rhs, &mut t, &mut x, target)?;
        samples.push((t, x.clone()));
        j += 1;
    }
    Ok((samples, stepper.stats))
}
