//! High-gain funnel feedback for plants in input-output normal form.
//!
//! The law reads the cascaded tracking errors and their funnel gains and
//! pushes against the deepest error through the inverted input coupling
//! matrix: `u = -k_r G(x)^{-1} e_r`. The gains blow up as any error nears its
//! funnel radius, which is what keeps the loop inside the funnel without any
//! model of the drift. It needs no optimization and serves both as a
//! comparison baseline and as a feasibility fallback for the predictive
//! controller.

use std::ops::ControlFlow;

use thiserror::Error;

use crate::chain::{chain, stage_cost, ErrorChainState, StageCostConfig};
use crate::funnel::FunnelTrajectory;
use crate::linalg;
use crate::ode::{
    self, ControlSequence, IntegrationStats, IntegratorOptions, OdeError, Trajectory,
    TrajectoryPoint,
};
use crate::plant::Plant;
use crate::reference::ReferenceSignal;
use crate::scalar::Scalar;

/// Failures of the feedback law or of a closed-loop run under it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    /// The plant does not expose its input coupling matrix.
    #[error("plant does not expose an input-output normal form")]
    MissingNormalForm,
    /// The saturation level must be positive when given.
    #[error("saturation level must be positive")]
    InvalidSaturation,
    /// A tracking error reached its funnel radius; the gains are undefined.
    #[error("tracking error reached the funnel boundary at t = {t}")]
    SaturatedChain { t: f64 },
    /// The input coupling matrix lost rank.
    #[error("input coupling matrix became singular at t = {t}")]
    SingularGain { t: f64 },
    /// The underlying integration failed for a reason other than the law.
    #[error(transparent)]
    Integration(OdeError),
}

/// The funnel feedback law bound to one plant, funnel and reference.
pub struct FunnelController<'a, S: Scalar> {
    plant: &'a dyn Plant<S>,
    funnel: &'a FunnelTrajectory<S>,
    reference: &'a dyn ReferenceSignal<S>,
    saturation: Option<S>,
}

impl<'a, S: Scalar> FunnelController<'a, S> {
    /// Binds the law; `saturation` optionally clamps each input component.
    pub fn new(
        plant: &'a dyn Plant<S>,
        funnel: &'a FunnelTrajectory<S>,
        reference: &'a dyn ReferenceSignal<S>,
        saturation: Option<S>,
    ) -> Result<Self, ControllerError> {
        if plant.normal_form().is_none() {
            return Err(ControllerError::MissingNormalForm);
        }
        if let Some(s) = saturation {
            if !(s > S::zero()) {
                return Err(ControllerError::InvalidSaturation);
            }
        }
        assert_eq!(
            funnel.params().relative_degree(),
            plant.relative_degree(),
            "funnel depth must equal the plant's relative degree"
        );
        assert_eq!(
            reference.dim(),
            plant.input_dim(),
            "reference dimension must equal the input dimension"
        );
        Ok(Self {
            plant,
            funnel,
            reference,
            saturation,
        })
    }

    /// Applies the law to an already evaluated error chain.
    pub fn feedback_from_chain(
        &self,
        t: S,
        state: &ErrorChainState<S>,
        x: &[S],
    ) -> Result<Vec<S>, ControllerError> {
        if state.is_saturated() {
            return Err(ControllerError::SaturatedChain { t: t.approx_f64() });
        }
        let r = self.plant.relative_degree();
        let m = self.plant.input_dim();
        let normal_form = self
            .plant
            .normal_form()
            .ok_or(ControllerError::MissingNormalForm)?;
        let mut gamma = vec![S::zero(); m * m];
        normal_form.gamma(x, &mut gamma);
        let mut u: Vec<S> = state.errors[r - 1].clone();
        if !linalg::solve_in_place(&mut gamma, &mut u, m) {
            return Err(ControllerError::SingularGain { t: t.approx_f64() });
        }
        let k_r = state.gains[r - 1];
        for v in u.iter_mut() {
            *v = -k_r * *v;
            if let Some(s) = self.saturation {
                *v = (*v).min(s).max(-s);
            }
        }
        Ok(u)
    }

    /// Evaluates the law at `(t, x)`.
    pub fn feedback(&self, t: S, x: &[S]) -> Result<Vec<S>, ControllerError> {
        let r = self.plant.relative_degree();
        let m = self.plant.input_dim();
        let mut zeta = vec![S::zero(); r * m];
        self.plant.output_chain(x, &mut zeta);
        let state = chain(t, &zeta, self.funnel, self.reference);
        self.feedback_from_chain(t, &state, x)
    }

    /// Integrates the closed loop over `span`, sampling every `sample_dt`.
    /// Every sample carries the applied input, funnel ratios and stage cost.
    pub fn run_closed_loop(
        &self,
        x0: &[S],
        span: (S, S),
        sample_dt: S,
        opts: &IntegratorOptions<S>,
        cost: &StageCostConfig<S>,
    ) -> Result<Trajectory<S>, ControllerError> {
        if x0.len() != self.plant.state_dim() {
            return Err(ControllerError::Integration(OdeError::InvalidInput(
                "initial state dimension",
            )));
        }
        let mut failure: Option<ControllerError> = None;
        let mut dx_u = vec![S::zero(); self.plant.input_dim()];
        let rhs = |t: S, x: &[S], dx: &mut [S]| match self.feedback(t, x) {
            Ok(u) => {
                dx_u.copy_from_slice(&u);
                self.plant.rhs(x, &dx_u, dx);
                true
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        };
        let (samples, stats) = match ode::solve_ivp(rhs, x0, span, sample_dt, opts) {
            Ok(out) => out,
            Err(err) => {
                // A veto at an accepted state surfaces as an abort; report
                // the law's own diagnosis when one was recorded.
                return Err(match (err, failure) {
                    (OdeError::Aborted { .. }, Some(reason)) => reason,
                    (other, _) => ControllerError::Integration(other),
                });
            }
        };
        self.annotate(samples, stats, cost)
    }

    fn annotate(
        &self,
        samples: Vec<(S, Vec<S>)>,
        stats: IntegrationStats,
        cost: &StageCostConfig<S>,
    ) -> Result<Trajectory<S>, ControllerError> {
        let r = self.plant.relative_degree();
        let m = self.plant.input_dim();
        let mut points = Vec::with_capacity(samples.len());
        let mut zeta = vec![S::zero(); r * m];
        for (t, x) in samples {
            self.plant.output_chain(&x, &mut zeta);
            let state = chain(t, &zeta, self.funnel, self.reference);
            let input = self.feedback_from_chain(t, &state, &x)?;
            let cost_value = stage_cost(&state, &input, cost);
            points.push(TrajectoryPoint {
                time: t,
                state: x,
                chain: zeta.clone(),
                input,
                ratios: state.ratios,
                stage_cost: Some(cost_value),
            });
        }
        Ok(Trajectory { points, stats })
    }

    /// Samples the law on a zero-order-hold grid: on each step the input is
    /// frozen at the feedback value of the step's start state. The result is
    /// a valid horizon input for the predictive controller and serves as its
    /// model-based restart.
    pub fn zoh_rollout(
        &self,
        x0: &[S],
        t_start: S,
        steps: usize,
        dt: S,
        opts: &IntegratorOptions<S>,
    ) -> Result<ControlSequence<S>, ControllerError> {
        if steps == 0 || !(dt > S::zero()) {
            return Err(ControllerError::Integration(OdeError::InvalidInput(
                "rollout needs a positive step count and spacing",
            )));
        }
        let m = self.plant.input_dim();
        let mut values = Vec::with_capacity(steps * m);
        let mut x = x0.to_vec();
        for k in 0..steps {
            let t_k = t_start + S::from_usize(k).unwrap() * dt;
            let u = self.feedback(t_k, &x)?;
            values.extend_from_slice(&u);
            let hold = ControlSequence::new(t_k, dt, m, u)
                .map_err(ControllerError::Integration)?;
            let (end, _) = ode::integrate_zoh_with(
                self.plant,
                &x,
                &hold,
                (t_k, hold.end()),
                opts,
                |_| ControlFlow::Continue(()),
            )
            .map_err(ControllerError::Integration)?;
            x = end;
        }
        ControlSequence::new(t_start, dt, m, values).map_err(ControllerError::Integration)
    }
}
