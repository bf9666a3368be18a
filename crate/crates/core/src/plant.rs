//! Control-affine plants and the mass-on-car benchmark.
//!
//! A plant is `x' = f(x) + g(x) u`, `y = h(x)` with `m` inputs, `m` outputs
//! and a known relative degree `r`: differentiating the output `r` times is
//! the first time the input shows up, so the stacked output chain
//! `chi(x) = (h, h', ..., h^(r-1))` evolves as
//! `y^(r) = p(x) + gamma(x) u` with invertible `gamma`.

use thiserror::Error;

use crate::scalar::Scalar;

/// Errors for plant construction and checked evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlantError {
    /// A physical parameter that must be positive was not.
    #[error("plant parameter `{0}` must be positive and finite")]
    NonPositiveParameter(&'static str),
    /// The generalized mass matrix is not invertible.
    #[error("mass matrix is numerically singular")]
    SingularMassMatrix,
    /// The input-to-top-derivative coupling `gamma` is not invertible, so the
    /// output does not have the advertised relative degree.
    #[error("input coupling gamma is numerically singular")]
    DegenerateInputCoupling,
    /// A state or input slice had the wrong length.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Input-output normal form data of a plant: the top output derivative
/// satisfies `y^(r) = p(x) + gamma(x) u`.
pub trait NormalForm<S: Scalar>: Send + Sync {
    /// Writes the `m x m` coupling matrix `gamma(x)` (row-major) into `out`.
    fn gamma(&self, x: &[S], out: &mut [S]);

    /// Writes the drift term `p(x)` of the top output derivative into `out`.
    fn top_drift(&self, x: &[S], out: &mut [S]);
}

/// Control-affine plant with known relative degree.
pub trait Plant<S: Scalar>: Send + Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;

    /// Input (and output) dimension `m`.
    fn input_dim(&self) -> usize;

    /// Relative degree `r` of the output.
    fn relative_degree(&self) -> usize;

    /// Writes the drift `f(x)` into `dx`.
    fn drift(&self, x: &[S], dx: &mut [S]);

    /// Writes the input map `g(x)` (row-major `n x m`) into `out`.
    fn input_map(&self, x: &[S], out: &mut [S]);

    /// Writes the output `h(x)` into `y`.
    fn output(&self, x: &[S], y: &mut [S]);

    /// Writes the stacked output chain `chi(x)` (length `r * m`) into `zeta`.
    fn output_chain(&self, x: &[S], zeta: &mut [S]);

    /// Normal-form data, when available in closed form.
    fn normal_form(&self) -> Option<&dyn NormalForm<S>> {
        None
    }

    /// Writes `f(x) + g(x) u` into `dx`. The default assembles drift and
    /// input map; implementations on the hot path should override it.
    fn rhs(&self, x: &[S], u: &[S], dx: &mut [S]) {
        let n = self.state_dim();
        let m = self.input_dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(u.len(), m);
        debug_assert_eq!(dx.len(), n);
        self.drift(x, dx);
        let mut g = vec![S::zero(); n * m];
        self.input_map(x, &mut g);
        for i in 0..n {
            for j in 0..m {
                dx[i] = dx[i] + g[i * m + j] * u[j];
            }
        }
    }
}

/// Dimension-checked wrapper around [`Plant::rhs`].
pub fn rhs_checked<S: Scalar>(
    plant: &dyn Plant<S>,
    x: &[S],
    u: &[S],
) -> Result<Vec<S>, PlantError> {
    if x.len() != plant.state_dim() {
        return Err(PlantError::DimensionMismatch {
            expected: plant.state_dim(),
            got: x.len(),
        });
    }
    if u.len() != plant.input_dim() {
        return Err(PlantError::DimensionMismatch {
            expected: plant.input_dim(),
            got: u.len(),
        });
    }
    let mut dx = vec![S::zero(); plant.state_dim()];
    plant.rhs(x, u, &mut dx);
    Ok(dx)
}

/// Parameters of the mass-on-car system: a car of mass `m1` on a horizontal
/// track driven by the force `u`, carrying a mass `m2` on a ramp inclined by
/// `angle`, coupled through a spring-damper `(spring, damping)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassOnCarParams<S> {
    pub car_mass: S,
    pub load_mass: S,
    pub spring: S,
    pub damping: S,
    pub angle: S,
}

impl<S: Scalar> MassOnCarParams<S> {
    /// The reference parameter set: `m1 = 4`, `m2 = 1`, `k = 2`, `d = 1`,
    /// ramp angle `pi/4`.
    pub fn benchmark() -> Self {
        Self {
            car_mass: S::of(4.0),
            load_mass: S::one(),
            spring: S::of(2.0),
            damping: S::one(),
            angle: S::of(std::f64::consts::FRAC_PI_4),
        }
    }
}

/// Mass-on-car system in state coordinates `x = (z, s, z', s')`, where `z` is
/// the car position and `s` the relative ramp displacement. The measured
/// output is the horizontal load position `y = z + cos(angle) s`; it has
/// relative degree 2 with constant coupling
/// `gamma = sin^2(angle) / (m1 + m2 sin^2(angle))`.
#[derive(Debug, Clone)]
pub struct MassOnCar<S> {
    params: MassOnCarParams<S>,
    cos_angle: S,
    /// Determinant `m2 (m1 + m2 sin^2(angle))` of the mass matrix.
    det: S,
    /// Rows of the inverse mass matrix (2 x 2, row-major).
    inv_mass: [S; 4],
    gamma: S,
}

impl<S: Scalar> MassOnCar<S> {
    pub fn new(params: MassOnCarParams<S>) -> Result<Self, PlantError> {
        for (name, value) in [
            ("car_mass", params.car_mass),
            ("load_mass", params.load_mass),
            ("spring", params.spring),
            ("damping", params.damping),
        ] {
            if !(value > S::zero()) || !value.is_finite() {
                return Err(PlantError::NonPositiveParameter(name));
            }
        }
        if !params.angle.is_finite() {
            return Err(PlantError::NonPositiveParameter("angle"));
        }
        let (m1, m2) = (params.car_mass, params.load_mass);
        let cos_angle = params.angle.cos();
        let sin2 = params.angle.sin() * params.angle.sin();
        let det = m2 * (m1 + m2 * sin2);
        if det <= S::of(1e-12) {
            return Err(PlantError::SingularMassMatrix);
        }
        // M = [[m1 + m2, m2 c], [m2 c, m2]] with c = cos(angle).
        let inv_mass = [
            m2 / det,
            -(m2 * cos_angle) / det,
            -(m2 * cos_angle) / det,
            (m1 + m2) / det,
        ];
        let gamma = sin2 / (m1 + m2 * sin2);
        if gamma.abs() < S::of(1e-9) {
            return Err(PlantError::DegenerateInputCoupling);
        }
        Ok(Self {
            params,
            cos_angle,
            det,
            inv_mass,
            gamma,
        })
    }

    pub fn params(&self) -> &MassOnCarParams<S> {
        &self.params
    }

    /// Mass-matrix determinant (diagnostic).
    pub fn mass_determinant(&self) -> S {
        self.det
    }

    /// Constant input coupling of the output's second derivative.
    pub fn gamma_value(&self) -> S {
        self.gamma
    }

    /// Spring-damper force `k s + d s'`.
    fn coupling_force(&self, x: &[S]) -> S {
        self.params.spring * x[1] + self.params.damping * x[3]
    }
}

impl<S: Scalar> Plant<S> for MassOnCar<S> {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn relative_degree(&self) -> usize {
        2
    }

    fn drift(&self, x: &[S], dx: &mut [S]) {
        debug_assert_eq!(x.len(), 4);
        debug_assert_eq!(dx.len(), 4);
        let force = self.coupling_force(x);
        dx[0] = x[2];
        dx[1] = x[3];
        // Accelerations are M^{-1} (0, -force).
        dx[2] = -self.inv_mass[1] * force;
        dx[3] = -self.inv_mass[3] * force;
    }

    fn input_map(&self, _x: &[S], out: &mut [S]) {
        debug_assert_eq!(out.len(), 4);
        out[0] = S::zero();
        out[1] = S::zero();
        out[2] = self.inv_mass[0];
        out[3] = self.inv_mass[2];
    }

    fn output(&self, x: &[S], y: &mut [S]) {
        debug_assert_eq!(y.len(), 1);
        y[0] = x[0] + self.cos_angle * x[1];
    }

    fn output_chain(&self, x: &[S], zeta: &mut [S]) {
        debug_assert_eq!(zeta.len(), 2);
        zeta[0] = x[0] + self.cos_angle * x[1];
        zeta[1] = x[2] + self.cos_angle * x[3];
    }

    fn normal_form(&self) -> Option<&dyn NormalForm<S>> {
        Some(self)
    }

    fn rhs(&self, x: &[S], u: &[S], dx: &mut [S]) {
        debug_assert_eq!(x.len(), 4);
        debug_assert_eq!(u.len(), 1);
        debug_assert_eq!(dx.len(), 4);
        let force = self.coupling_force(x);
        dx[0] = x[2];
        dx[1] = x[3];
        dx[2] = self.inv_mass[0] * u[0] - self.inv_mass[1] * force;
        dx[3] = self.inv_mass[2] * u[0] - self.inv_mass[3] * force;
    }
}

impl<S: Scalar> NormalForm<S> for MassOnCar<S> {
    fn gamma(&self, _x: &[S], out: &mut [S]) {
        debug_assert_eq!(out.len(), 1);
        out[0] = self.gamma;
    }

    fn top_drift(&self, x: &[S], out: &mut [S]) {
        debug_assert_eq!(out.len(), 1);
        // y'' = gamma u - m1 cos(angle) (k s + d s') / det.
        out[0] = -(self.params.car_mass * self.cos_angle * self.coupling_force(x)) / self.det;
    }
}
