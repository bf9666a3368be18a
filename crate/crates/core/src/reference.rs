//! Reference signals with analytic derivatives.
//!
//! The error chain consumes `y_ref` together with its first `r - 1`
//! derivatives, and the output derivative bound needs a uniform sup-norm
//! bound on those derivatives, so references provide both analytically.

use crate::scalar::Scalar;

/// A sufficiently smooth reference trajectory `y_ref: R -> R^m`.
pub trait ReferenceSignal<S: Scalar>: Send + Sync {
    /// Output dimension `m`.
    fn dim(&self) -> usize;

    /// Writes the `order`-th time derivative of `y_ref` at `t` into `out`
    /// (`order == 0` is the signal itself; `out.len() == dim()`).
    fn derivative(&self, t: S, order: usize, out: &mut [S]);

    /// A bound `K` with `sup_t ||y_ref^(i)(t)|| <= K` for all
    /// `i = 0..=max_order`. May be infinite for signals that are not
    /// globally bounded.
    fn sup_bound(&self, max_order: usize) -> S;

    /// Convenience: the `order`-th derivative as a fresh vector.
    fn derivative_vec(&self, t: S, order: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim()];
        self.derivative(t, order, &mut out);
        out
    }
}

/// Scalar cosine reference `y_ref(t) = a cos(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineReference<S> {
    pub amplitude: S,
    pub omega: S,
    pub phase: S,
}

impl<S: Scalar> CosineReference<S> {
    /// Unit-amplitude, unit-frequency cosine `cos(t)`.
    pub fn unit() -> Self {
        Self {
            amplitude: S::one(),
            omega: S::one(),
            phase: S::zero(),
        }
    }
}

impl<S: Scalar> ReferenceSignal<S> for CosineReference<S> {
    fn dim(&self) -> usize {
        1
    }

    fn derivative(&self, t: S, order: usize, out: &mut [S]) {
        assert_eq!(out.len(), 1, "cosine reference is scalar");
        // d^k/dt^k cos(x) = cos(x + k pi/2), so each derivative is a phase
        // shift scaled by omega^k.
        let shift = S::of(std::f64::consts::FRAC_PI_2) * S::from_usize(order).unwrap();
        let scale = self.omega.powi(order as i32);
        out[0] = self.amplitude * scale * (self.omega * t + self.phase + shift).cos();
    }

    fn sup_bound(&self, max_order: usize) -> S {
        let peak = self.omega.max(S::one()).powi(max_order as i32);
        (self.amplitude * peak).abs()
    }
}

/// Constant reference `y_ref(t) = c`; all derivatives vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantReference<S> {
    pub value: Vec<S>,
}

impl<S: Scalar> ReferenceSignal<S> for ConstantReference<S> {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn derivative(&self, _t: S, order: usize, out: &mut [S]) {
        assert_eq!(out.len(), self.value.len());
        if order == 0 {
            out.copy_from_slice(&self.value);
        } else {
            out.fill(S::zero());
        }
    }

    fn sup_bound(&self, _max_order: usize) -> S {
        crate::linalg::norm(&self.value)
    }
}

/// Scalar polynomial reference `y_ref(t) = sum_k c_k t^k`; exact derivatives,
/// useful in tests because low-degree polynomials are annihilated by repeated
/// differentiation. Unbounded on `R` unless constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialReference<S> {
    pub coefficients: Vec<S>,
}

impl<S: Scalar> ReferenceSignal<S> for PolynomialReference<S> {
    fn dim(&self) -> usize {
        1
    }

    fn derivative(&self, t: S, order: usize, out: &mut [S]) {
        assert_eq!(out.len(), 1, "polynomial reference is scalar");
        let mut value = S::zero();
        for (k, &c) in self.coefficients.iter().enumerate().skip(order) {
            // k (k-1) ... (k-order+1) * c * t^{k-order}
            let mut factor = c;
            for step in 0..order {
                factor = factor * S::from_usize(k - step).unwrap();
            }
            value = value + factor * t.powi((k - order) as i32);
        }
        out[0] = value;
    }

    fn sup_bound(&self, _max_order: usize) -> S {
        if self.coefficients.len() <= 1 {
            self.coefficients.first().map_or(S::zero(), |c| c.abs())
        } else {
            S::infinity()
        }
    }
}
