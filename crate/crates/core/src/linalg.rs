//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Weighted least-squares polynomial fit of the given degree.
/// Returns `None` when the weighted design matrix is rank deficient.
pub fn weighted_polyfit(
    points: &[f64],
    weights: &[f64],
    target: &[f64],
    degree: usize,
) -> Option<Vec<f64>> {
    let n = points.len();
    let p = degree + 1;
    let mut a = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for k in 0..n {
        let s = weights[k].max(0.0).sqrt();
        let mut xp = 1.0;
        for c in 0..p {
            a[(k, c)] = s * xp;
            xp *= points[k];
        }
        y[k] = s * target[k];
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || svd.singular_values.min() <= 1e-12 * smax {
        return None;
    }
    let sol = svd.solve(&y, 0.0).ok()?;
    let out: Vec<f64> = sol.iter().copied().collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Inverse of a symmetric positive semi-definite matrix after adding the ridge
/// `rel_ridge · trace/d` to the diagonal. Falls back to a pseudo-inverse.
pub fn ridge_inverse(m: &DMatrix<f64>, rel_ridge: f64) -> DMatrix<f64> {
    let d = m.nrows();
    let trace = m.trace();
    if trace <= 0.0 || !trace.is_finite() {
        return DMatrix::zeros(d, d);
    }
    let mut reg = m.clone();
    let ridge = rel_ridge * trace / d as f64;
    for k in 0..d {
        reg[(k, k)] += ridge;
    }
    if let Some(ch) = reg.clone().cholesky() {
        return ch.inverse();
    }
    reg.pseudo_inverse(1e-14 * trace)
        .unwrap_or_else(|_| DMatrix::zeros(d, d))
}

/// Solves `m · x = rhs` for a small symmetric positive definite `m`.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    m.clone().lu().solve(rhs)
}
