//! Thin wrappers over nalgebra for the small dense systems in the fits.

use nalgebra::{DMatrix, DVector};

/// x' A⁺ x for a symmetric positive semi-definite A, plus the numerical rank
/// of A. Eigenvalues below `1e-10 * max` are treated as zero.
pub fn quadratic_form_pinv(a: &DMatrix<f64>, x: &DVector<f64>) -> (f64, usize) {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max * 1e-10;
    let mut q = 0.0;
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > tol && lambda > 0.0 {
            let proj = eig.eigenvectors.column(k).dot(x);
            q += proj * proj / lambda;
            rank += 1;
        }
    }
    (q, rank)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// Solve (A + lambda I) x = b for symmetric A, raising lambda until the
/// shifted matrix is positive definite. Returns the step and the shift used;
/// the step is NaN when the system is not finite.
pub fn damped_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let nan = || (DVector::from_element(b.len(), f64::NAN), f64::INFINITY);
    if !(a.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite())) {
        return nan();
    }
    if let Some(ch) = a.clone().cholesky() {
        return (ch.solve(b), 0.0);
    }
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(1e-8, f64::max);
    let mut lambda = scale * 1e-6;
    while lambda.is_finite() {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += lambda;
        }
        if let Some(ch) = shifted.cholesky() {
            return (ch.solve(b), lambda);
        }
        lambda *= 10.0;
    }
    nan()
}
