//! Scenario files: JSON descriptions of a plant, funnel, reference and run
//! settings. Every field has a default taken from the mass-on-car benchmark,
//! so `{}` is a complete scenario and the built-in preset is just the default
//! value of [`ScenarioConfig`].

use serde::{Deserialize, Serialize};

use funnel_mpc::chain::StageCostConfig;
use funnel_mpc::fmpc::FmpcConfig;
use funnel_mpc::funnel::{FunnelParams, FunnelTrajectory};
use funnel_mpc::ocp::{OcpConfig, SolverOptions};
use funnel_mpc::ode::IntegratorOptions;
use funnel_mpc::plant::{MassOnCar, MassOnCarParams};
use funnel_mpc::reference::{ConstantReference, CosineReference, ReferenceSignal};

/// A full scenario; see the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub plant: PlantConfig,
    pub reference: ReferenceConfig,
    pub funnel: FunnelConfig,
    /// Plant start state `(z, s, z', s')`.
    pub initial_state: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
    /// Sample spacing of the baseline controller's trace.
    pub sample_dt: f64,
    pub ocp: OcpSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            reference: ReferenceConfig::default(),
            funnel: FunnelConfig::default(),
            initial_state: vec![0.0; 4],
            t_start: 0.0,
            t_end: 10.0,
            sample_dt: 0.01,
            ocp: OcpSettings::default(),
        }
    }
}

/// Mass-on-car parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub car_mass: f64,
    pub load_mass: f64,
    pub spring: f64,
    pub damping: f64,
    /// Ramp angle in radians.
    pub angle: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = MassOnCarParams::<f64>::benchmark();
        Self {
            car_mass: p.car_mass,
            load_mass: p.load_mass,
            spring: p.spring,
            damping: p.damping,
            angle: p.angle,
        }
    }
}

/// Reference signal selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceConfig {
    /// `a cos(omega t + phase)`.
    Cosine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// A constant vector.
    Constant { value: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self::Cosine {
            amplitude: 1.0,
            omega: 1.0,
            phase: 0.0,
        }
    }
}

/// Funnel cascade parameters, one entry per chain level (`coupling` has one
/// fewer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunnelConfig {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub coupling: Vec<f64>,
    pub psi0: Vec<f64>,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        Self {
            alpha: vec![1.5, 1.35],
            beta: vec![0.15, 0.675],
            coupling: vec![1.1],
            psi0: vec![4.1, 2.0],
        }
    }
}

/// Horizon problem and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpSettings {
    pub horizon: f64,
    pub delta: f64,
    pub control_dt: f64,
    pub input_bound: f64,
    pub feasibility_eps: Vec<f64>,
    pub input_weight: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub samples_per_interval: usize,
    pub penalty_weights: Vec<f64>,
    pub terminal_tol: f64,
    pub grad_tol: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub armijo_c: f64,
    pub min_step: f64,
}

impl Default for OcpSettings {
    fn default() -> Self {
        let ocp = OcpConfig::<f64>::default();
        let solver = SolverOptions::<f64>::default();
        let integrator = IntegratorOptions::<f64>::default();
        Self {
            horizon: ocp.horizon,
            delta: ocp.delta,
            control_dt: ocp.control_dt,
            input_bound: ocp.input_bound,
            feasibility_eps: ocp.feasibility_eps,
            input_weight: ocp.cost.input_weight,
            abs_tol: integrator.abs_tol,
            rel_tol: integrator.rel_tol,
            samples_per_interval: integrator.samples_per_interval,
            penalty_weights: solver.penalty_weights,
            terminal_tol: solver.terminal_tol,
            grad_tol: solver.grad_tol,
            max_iterations: solver.max_iterations,
            fd_step: solver.fd_step,
            armijo_c: solver.armijo_c,
            min_step: solver.min_step,
        }
    }
}

/// Everything a runner needs, built and validated from a scenario.
pub struct Scenario {
    pub plant: MassOnCar<f64>,
    pub funnel: FunnelTrajectory<f64>,
    pub reference: Box<dyn ReferenceSignal<f64>>,
    pub fmpc: FmpcConfig<f64>,
    pub sample_dt: f64,
}

impl ScenarioConfig {
    /// Parses a scenario from JSON text.
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("invalid scenario: {e}"))
    }

    /// Builds and validates the runtime objects.
    pub fn build(&self) -> Result<Scenario, String> {
        let plant = MassOnCar::new(MassOnCarParams {
            car_mass: self.plant.car_mass,
            load_mass: self.plant.load_mass,
            spring: self.plant.spring,
            damping: self.plant.damping,
            angle: self.plant.angle,
        })
        .map_err(|e| format!("invalid plant: {e}"))?;

        let params = FunnelParams::new(
            self.funnel.alpha.clone(),
            self.funnel.beta.clone(),
            self.funnel.coupling.clone(),
            self.funnel.psi0.clone(),
        )
        .map_err(|e| format!("invalid funnel: {e}"))?;
        let funnel = FunnelTrajectory::solve(params);

        let reference: Box<dyn ReferenceSignal<f64>> = match &self.reference {
            ReferenceConfig::Cosine {
                amplitude,
                omega,
                phase,
            } => Box::new(CosineReference {
                amplitude: *amplitude,
                omega: *omega,
                phase: *phase,
            }),
            ReferenceConfig::Constant { value } => {
                Box::new(ConstantReference {
                    value: value.clone(),
                })
            }
        };

        if !(self.sample_dt > 0.0) {
            return Err("sample_dt must be positive".into());
        }
        if !(self.t_end >= self.t_start) {
            return Err("t_end must not precede t_start".into());
        }

        let ocp = OcpConfig {
            horizon: self.ocp.horizon,
            delta: self.ocp.delta,
            control_dt: self.ocp.control_dt,
            input_bound: self.ocp.input_bound,
            feasibility_eps: self.ocp.feasibility_eps.clone(),
            cost: StageCostConfig {
                input_weight: self.ocp.input_weight,
            },
            integrator: IntegratorOptions {
                abs_tol: self.ocp.abs_tol,
                rel_tol: self.ocp.rel_tol,
                samples_per_interval: self.ocp.samples_per_interval,
                ..IntegratorOptions::default()
            },
            solver: SolverOptions {
                penalty_weights: self.ocp.penalty_weights.clone(),
                terminal_tol: self.ocp.terminal_tol,
                grad_tol: self.ocp.grad_tol,
                max_iterations: self.ocp.max_iterations,
                fd_step: self.ocp.fd_step,
                armijo_c: self.ocp.armijo_c,
                min_step: self.ocp.min_step,
            },
        };
        Ok(Scenario {
            plant,
            funnel,
            reference,
            fmpc: FmpcConfig {
                t_start: self.t_start,
                t_end: self.t_end,
                initial_state: self.initial_state.clone(),
                ocp,
            },
            sample_dt: self.sample_dt,
        })
    }
}
