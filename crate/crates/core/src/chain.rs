//! Auxiliary error chain, barrier stage cost, and the output derivative bound.
//!
//! Given the output chain `zeta = (y, y', ..., y^(r-1))`, the funnel radii
//! `psi_i(t)` and a reference `y_ref`, the chain recursion is
//!
//! ```text
//! e_1 = zeta_1 - y_ref(t),
//! e_{i+1} = zeta_{i+1} - y_ref^(i)(t) + k_i e_i,
//! k_i = 1 / (1 - ||e_i||^2 / psi_i(t)^2),
//! ```
//!
//! defined as long as every `||e_i|| < psi_i(t)`. The barrier stage cost
//!
//! ```text
//! l(t, zeta, u) = sum_i k_i - r + lambda_u ||u||^2
//! ```
//!
//! is finite exactly on that region and diverges as any error approaches its
//! funnel radius; states on or outside a radius map to `+inf` (an extended
//! real, never NaN).

use crate::funnel::FunnelTrajectory;
use crate::linalg;
use crate::reference::ReferenceSignal;
use crate::scalar::Scalar;

/// Weights of the stage cost; `input_weight` is the `lambda_u >= 0`
/// multiplying `||u||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCostConfig<S> {
    pub input_weight: S,
}

impl<S: Scalar> Default for StageCostConfig<S> {
    fn default() -> Self {
        Self {
            input_weight: S::of(0.01),
        }
    }
}

/// Error chain evaluated at one time instant.
///
/// For an unsaturated state all vectors have length `r` (the top gain `k_r`
/// is included; the funnel-controller feedback needs it). If `||e_i||` reaches
/// `psi_i`, the state is marked saturated at that 0-based index: `errors` and
/// `ratios` stop there (deeper entries would be meaningless) and `gains`
/// holds only the `i` gains that exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorChainState<S> {
    /// Evaluation time.
    pub time: S,
    /// Auxiliary errors `e_1..e_r`, each of length `m`.
    pub errors: Vec<Vec<S>>,
    /// Gains `k_1..k_r` (`k_i = (1 - ratio_i)^{-1}`).
    pub gains: Vec<S>,
    /// Squared funnel ratios `||e_i||^2 / psi_i(t)^2`.
    pub ratios: Vec<S>,
    /// First index whose error reached its funnel radius, if any.
    pub saturated: Option<usize>,
}

impl<S: Scalar> ErrorChainState<S> {
    /// Whether any error reached its funnel radius.
    pub fn is_saturated(&self) -> bool {
        self.saturated.is_some()
    }

    /// Euclidean norm of `e_{i+1}`.
    pub fn error_norm(&self, i: usize) -> S {
        linalg::norm(&self.errors[i])
    }
}

/// Evaluates the error chain at `(time, zeta)`.
///
/// `zeta` is the stacked output chain of length `r * m`, where `r` is the
/// funnel's relative degree and `m = reference.dim()`.
pub fn chain<S: Scalar>(
    time: S,
    zeta: &[S],
    funnel: &FunnelTrajectory<S>,
    reference: &dyn ReferenceSignal<S>,
) -> ErrorChainState<S> {
    let r = funnel.relative_degree();
    let m = reference.dim();
    assert_eq!(zeta.len(), r * m, "output chain must have length r * m");

    let mut radii = vec![S::zero(); r];
    funnel.radii_into(time, &mut radii);

    let mut errors: Vec<Vec<S>> = Vec::with_capacity(r);
    let mut gains = Vec::with_capacity(r);
    let mut ratios = Vec::with_capacity(r);
    let mut saturated = None;
    let mut ref_buf = vec![S::zero(); m];

    for i in 0..r {
        reference.derivative(time, i, &mut ref_buf);
        let block = &zeta[i * m..(i + 1) * m];
        let mut e: Vec<S> = block
            .iter()
            .zip(&ref_buf)
            .map(|(&z, &d)| z - d)
            .collect();
        if i > 0 {
            let k_prev = gains[i - 1];
            linalg::axpy(k_prev, &errors[i - 1], &mut e);
        }
        let radius = radii[i];
        let ratio = linalg::dot(&e, &e) / (radius * radius);
        errors.push(e);
        ratios.push(ratio);
        if ratio >= S::one() || !ratio.is_finite() {
            saturated = Some(i);
            break;
        }
        gains.push(S::one() / (S::one() - ratio));
    }

    ErrorChainState {
        time,
        errors,
        gains,
        ratios,
        saturated,
    }
}

/// Barrier stage cost at a chain state with input `u`.
///
/// Returns `+inf` when the state is saturated; otherwise
/// `sum_i k_i - r + lambda_u ||u||^2`, which is `0` exactly at perfect
/// tracking with zero input weight.
pub fn stage_cost<S: Scalar>(
    state: &ErrorChainState<S>,
    input: &[S],
    config: &StageCostConfig<S>,
) -> S {
    if state.is_saturated() {
        return S::infinity();
    }
    let r = S::from_usize(state.gains.len()).unwrap();
    let barrier: S = state.gains.iter().copied().sum();
    barrier - r + config.input_weight * linalg::dot(input, input)
}

/// A-priori bound `Y` on `||y^(i)(t)||` for `i = 0..r-1` along any closed
/// loop that keeps `||e_i(t)|| <= eps_i psi_i(t)` for `i < r` and every error
/// inside its funnel.
///
/// `eps` holds the `r - 1` tightening factors in `(0, 1)`; component `i` of
/// the bound is `psi_{i+1}(t0) + psi_i(t0) / (1 - eps_i^2) + K`, with the
/// `psi_0` term absent for `i = 0`, and `Y` is the maximum over components.
/// Requires the radii to be non-increasing from `t0` on, which holds whenever
/// they start at or above their transient peak.
pub fn derivative_bound<S: Scalar>(
    funnel: &FunnelTrajectory<S>,
    reference: &dyn ReferenceSignal<S>,
    t0: S,
    eps: &[S],
) -> S {
    let r = funnel.relative_degree();
    assert_eq!(eps.len(), r - 1, "one tightening factor per chained error");
    assert!(
        eps.iter().all(|&e| e > S::zero() && e < S::one()),
        "tightening factors must lie in (0, 1)"
    );
    let bound_ref = reference.sup_bound(r);
    let radii = funnel.radii(t0);
    let mut worst = S::neg_infinity();
    for i in 0..r {
        let mut y_i = radii[i] + bound_ref;
        if i > 0 {
            y_i = y_i + radii[i - 1] / (S::one() - eps[i - 1] * eps[i - 1]);
        }
        worst = worst.max(y_i);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnel::FunnelParams;
    use crate::reference::{ConstantReference, CosineReference, PolynomialReference};
    use proptest::prelude::*;

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
    fn perfect_tracking_gives_unit_gains_and_zero_cost() {
        let funnel = benchmark_funnel();
        let reference = CosineReference::unit();
        let t: f64 = 0.8;
        // Track the reference's own derivative values so the errors vanish
        // bit for bit.
        let zeta = [
            reference.derivative_vec(t, 0)[0],
            reference.derivative_vec(t, 1)[0],
        ];
        let state = chain(t, &zeta, &funnel, &reference);
        assert!(!state.is_saturated());
        assert_eq!(state.errors[0][0], 0.0);
        assert_eq!(state.errors[1][0], 0.0);
        assert_eq!(state.gains, vec![1.0, 1.0]);
        let cost = stage_cost(
            &state,
            &[0.0],
            &StageCostConfig { input_weight: 0.0 },
        );
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn half_ratio_doubles_the_gain() {
        let funnel = benchmark_funnel();
        let reference = ConstantReference { value: vec![0.0] };
        // ||e_1||^2 = psi_1(0)^2 / 2 gives k_1 = 2 and e_2 = zeta_2 + 2 e_1.
        let e1 = 4.1 / 2.0f64.sqrt();
        let zeta = [e1, 0.3];
        let state = chain(0.0, &zeta, &funnel, &reference);
        assert!((state.ratios[0] - 0.5).abs() < 1e-15);
        assert!((state.gains[0] - 2.0).abs() < 1e-14);
        assert!((state.errors[1][0] - (0.3 + state.gains[0] * e1)).abs() < 1e-14);
    }

    #[test]
    fn benchmark_rest_state_chain_values() {
        // At t = 0 with the plant at rest: e_1 = -1, ratio_1 = (1/4.1)^2,
        // e_2 = -k_1 (the reference derivative is -sin 0 = 0).
        let funnel = benchmark_funnel();
        let reference = CosineReference::unit();
        let state = chain(0.0, &[0.0, 0.0], &funnel, &reference);
        assert_eq!(state.errors[0][0], -1.0);
        let ratio1 = (1.0 / 4.1f64).powi(2);
        assert!((state.ratios[0] - ratio1).abs() < 1e-16);
        let k1 = 1.0 / (1.0 - ratio1);
        assert!((state.gains[0] - k1).abs() < 1e-15);
        assert!((state.errors[1][0] + k1).abs() < 1e-15);
        // Top gain k_2 = 1/(1 - k_1^2/4) is materialized as well.
        let k2 = 1.0 / (1.0 - k1 * k1 / 4.0);
        assert!((state.gains[1] - k2).abs() < 1e-14);
    }

    #[test]
    fn error_on_the_boundary_saturates_and_costs_infinity() {
        let funnel = benchmark_funnel();
        let reference = ConstantReference { value: vec![0.0] };
        let zeta = [4.1, 0.0]; // ||e_1|| = psi_1(0) exactly.
        let state = chain(0.0, &zeta, &funnel, &reference);
        assert_eq!(state.saturated, Some(0));
        assert_eq!(state.errors.len(), 1);
        assert_eq!(state.gains.len(), 0);
        let cost = stage_cost(&state, &[3.0], &StageCostConfig::default());
        assert!(cost.is_infinite() && cost > 0.0);
        assert!(!cost.is_nan());
    }

    #[test]
    fn stage_cost_matches_gain_identity() {
        // ratios (1/2, 1/2) with lambda_u = 0.01 and ||u|| = 1:
        // cost = 2 + 2 - 2 + 0.01 = 2.01.
        let state = ErrorChainState::<f64> {
            time: 0.0,
            errors: vec![vec![0.0], vec![0.0]],
            gains: vec![2.0, 2.0],
            ratios: vec![0.5, 0.5],
            saturated: None,
        };
        let cost = stage_cost(&state, &[1.0], &StageCostConfig { input_weight: 0.01 });
        assert!((cost - 2.01).abs() < 1e-15);
    }

    #[test]
    fn barrier_diverges_monotonically_towards_the_boundary() {
        let mut previous = 0.0;
        for k in 1..=12 {
            let ratio = 1.0 - 10.0f64.powi(-k);
            let state = ErrorChainState {
                time: 0.0,
                errors: vec![vec![0.0]],
                gains: vec![1.0 / (1.0 - ratio)],
                ratios: vec![ratio],
                saturated: None,
            };
            let cost = stage_cost(&state, &[0.0], &StageCostConfig { input_weight: 0.0 });
            assert!(cost > previous, "cost not increasing at k = {k}");
            previous = cost;
        }
        assert!(previous > 1e11, "barrier should exceed 1e11, got {previous}");
    }

    #[test]
    fn polynomial_reference_is_tracked_exactly_along_its_own_chain() {
        // Degree-2 polynomial with r = 3: zeta built from the exact
        // derivatives gives an identically zero chain.
        let funnel = FunnelTrajectory::solve(
            FunnelParams::new(
                vec![3.0, 2.0, 1.0],
                vec![0.3, 0.2, 0.1],
                vec![1.5, 1.5],
                vec![1.0, 1.0, 1.0],
            )
            .unwrap(),
        );
        let poly = PolynomialReference {
            coefficients: vec![0.2f64, -0.1, 0.05],
        };
        for &t in &[0.0, 0.7, 2.3] {
            let zeta = [
                poly.derivative_vec(t, 0)[0],
                poly.derivative_vec(t, 1)[0],
                poly.derivative_vec(t, 2)[0],
            ];
            let state = chain(t, &zeta, &funnel, &poly);
            assert!(!state.is_saturated());
            for e in &state.errors {
                assert_eq!(e[0], 0.0, "exact chain must produce exact zeros");
            }
        }
    }

    #[test]
    fn derivative_bound_matches_benchmark_arithmetic() {
        // Y_1 = psi_1(0) + K = 5.1 and
        // Y_2 = psi_2(0) + psi_1(0)/(1 - 0.94^2) + K.
        let funnel = benchmark_funnel();
        let reference = CosineReference::unit();
        let y = derivative_bound(&funnel, &reference, 0.0, &[0.94]);
        let expected = 2.0 + 4.1 / (1.0 - 0.94f64 * 0.94) + 1.0;
        assert!((y - expected).abs() < 1e-12, "Y = {y}, expected {expected}");
        assert!(y > 5.1);
    }

    #[test]
    fn derivative_bound_single_component_has_no_chained_term() {
        let funnel = FunnelTrajectory::solve(
            FunnelParams::new(vec![1.0], vec![0.2], vec![], vec![3.0]).unwrap(),
        );
        let reference = CosineReference::unit();
        let y: f64 = derivative_bound(&funnel, &reference, 0.0, &[]);
        assert!((y - 4.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_bound_grows_with_the_tightening_factor() {
        let funnel = benchmark_funnel();
        let reference = CosineReference::unit();
        let y_small = derivative_bound(&funnel, &reference, 0.0, &[0.5]);
        let y_large = derivative_bound(&funnel, &reference, 0.0, &[0.99]);
        assert!(y_small < y_large);
    }

    /// Plain transcription of the recursion used as an independent check.
    fn straight_line_chain(
        t: f64,
        zeta: &[f64],
        funnel: &FunnelTrajectory<f64>,
        reference: &dyn ReferenceSignal<f64>,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let r = funnel.relative_degree();
        let m = reference.dim();
        let mut errors: Vec<f64> = Vec::new();
        let mut gains = Vec::new();
        let mut prev: Vec<f64> = Vec::new();
        for i in 0..r {
            let want = reference.derivative_vec(t, i);
            let mut e: Vec<f64> = (0..m).map(|j| zeta[i * m + j] - want[j]).collect();
            if i > 0 {
                let k = gains[i - 1];
                for (ej, pj) in e.iter_mut().zip(&prev) {
                    *ej += k * pj;
                }
            }
            let psi = funnel.radius(i, t);
            let norm2: f64 = e.iter().map(|v| v * v).sum();
            let ratio = norm2 / (psi * psi);
            if ratio >= 1.0 {
                return None;
            }
            gains.push(1.0 / (1.0 - ratio));
            errors.extend(e.iter());
            prev = e;
        }
        Some((errors, gains))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn chain_matches_straight_line_recursion(
            t in 0.0f64..5.0,
            z1 in -2.0f64..2.0,
            z2 in -2.0f64..2.0,
        ) {
            let funnel = benchmark_funnel();
            let reference = CosineReference::unit();
            let zeta = [z1, z2];
            let state = chain(t, &zeta, &funnel, &reference);
            match straight_line_chain(t, &zeta, &funnel, &reference) {
                Some((errors, gains)) => {
                    prop_assert!(!state.is_saturated());
                    for (i, g) in gains.iter().enumerate() {
                        let scale = g.abs().max(1.0);
                        prop_assert!((state.gains[i] - g).abs() <= 1e-12 * scale);
                        prop_assert!((state.errors[i][0] - errors[i]).abs() <= 1e-12);
                    }
                }
                None => prop_assert!(state.is_saturated()),
            }
        }

        #[test]
        fn stage_cost_is_nonnegative_and_monotone_in_the_input(
            ratio1 in 0.0f64..0.999,
            ratio2 in 0.0f64..0.999,
            u in -5.0f64..5.0,
        ) {
            let state = ErrorChainState {
                time: 0.0,
                errors: vec![vec![0.0], vec![0.0]],
                gains: vec![1.0 / (1.0 - ratio1), 1.0 / (1.0 - ratio2)],
                ratios: vec![ratio1, ratio2],
                saturated: None,
            };
            let cfg = StageCostConfig { input_weight: 0.01 };
            let cost = stage_cost(&state, &[u], &cfg);
            prop_assert!(cost >= 0.0);
            let larger = stage_cost(&state, &[u.abs() + 1.0], &cfg);
            prop_assert!(larger >= cost);
        }
    }
}
