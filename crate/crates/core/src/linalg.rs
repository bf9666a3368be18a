//! Small dense vector/matrix helpers.
//!
//! Everything here operates on slices; dimensions are tiny (state dimension,
//! input dimension, decision-vector length), so no external linear algebra
//! crate is warranted.

use crate::scalar::Scalar;

/// Euclidean inner product.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Euclidean norm.
#[inline]
pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Maximum absolute entry (zero for an empty slice).
#[inline]
pub fn max_abs<S: Scalar>(a: &[S]) -> S {
    a.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Dense row-major matrix-vector product `y = A x` (`A` is `rows x cols`).
pub fn mat_vec<S: Scalar>(a: &[S], x: &[S], y: &mut [S], rows: usize, cols: usize) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for (r, yr) in y.iter_mut().enumerate() {
        *yr = dot(&a[r * cols..(r + 1) * cols], x);
    }
}

/// Solves the dense system `A x = b` in place by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n` and is destroyed; `b` is
/// overwritten with the solution. Returns `false` if a pivot is numerically
/// zero.
pub fn solve_in_place<S: Scalar>(a: &mut [S], b: &mut [S], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a[col * n + col].abs();
        for row in col + 1..n {
            let mag = a[row * n + col].abs();
            if mag > pivot_mag {
                pivot_row = row;
                pivot_mag = mag;
            }
        }
        if pivot_mag < S::of(1e-300).max(S::min_positive_value()) {
            return false;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == S::zero() {
                continue;
            }
            for k in col..n {
                a[row * n + k] = a[row * n + k] - factor * a[col * n + k];
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut sum = b[col];
        for k in col + 1..n {
            sum = sum - a[col * n + k] * b[k];
        }
        b[col] = sum / a[col * n + col];
    }
    true
}
