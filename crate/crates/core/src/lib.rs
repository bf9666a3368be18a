//! Funnel model predictive control for nonlinear systems with a known
//! relative degree.
//!
//! The crate simulates output tracking inside prescribed performance
//! funnels: time-varying radii `psi_i(t)` around a reference signal that the
//! cascaded tracking errors must never touch. Two controllers are provided.
//!
//! * [`fmpc`] runs a receding-horizon loop: each step solves a
//!   finite-horizon problem ([`ocp`]) whose stage cost diverges at the
//!   funnel boundary and whose terminal tube condition makes the next step
//!   feasible by construction.
//! * [`funnel_controller`] is the model-free high-gain feedback law used as
//!   a baseline and as a feasibility fallback.
//!
//! Supporting modules: [`funnel`] evaluates the funnel cascade in closed
//! form, [`chain`] builds the cascaded errors, gains and barrier stage cost,
//! [`plant`] defines the system interface plus the mass-on-car benchmark,
//! [`reference`] the tracked signals, and [`ode`] the adaptive integrator
//! for zero-order-hold inputs.
//!
//! All numerics are generic over the floating-point type through
//! [`scalar::Scalar`]; the `*64` aliases at the crate root fix `f64` for
//! everyday use.

pub mod chain;
pub mod fmpc;
pub mod funnel;
pub mod funnel_controller;
pub mod linalg;
pub mod ocp;
pub mod ode;
pub mod plant;
pub mod reference;
pub mod scalar;

pub use chain::{ErrorChainState, StageCostConfig};
pub use fmpc::{ClosedLoopResult, FeasibilityReport, FmpcConfig, FmpcError, RunSummary};
pub use funnel::{FunnelParamError, FunnelParams, FunnelTrajectory};
pub use funnel_controller::{ControllerError, FunnelController};
pub use ocp::{OcpConfig, OcpError, OcpSolution, OcpSpec, SolverOptions};
pub use ode::{ControlSequence, IntegratorOptions, OdeError, Trajectory, TrajectoryPoint};
pub use plant::{MassOnCar, MassOnCarParams, NormalForm, Plant, PlantError};
pub use reference::{ConstantReference, CosineReference, PolynomialReference, ReferenceSignal};
pub use scalar::Scalar;

/// Double-precision aliases for the main types.
pub type FunnelParams64 = FunnelParams<f64>;
pub type FunnelTrajectory64 = FunnelTrajectory<f64>;
pub type ControlSequence64 = ControlSequence<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type IntegratorOptions64 = IntegratorOptions<f64>;
pub type StageCostConfig64 = StageCostConfig<f64>;
pub type OcpConfig64 = OcpConfig<f64>;
pub type SolverOptions64 = SolverOptions<f64>;
pub type FmpcConfig64 = FmpcConfig<f64>;
pub type MassOnCar64 = MassOnCar<f64>;
pub type MassOnCarParams64 = MassOnCarParams<f64>;
pub type CosineReference64 = CosineReference<f64>;
