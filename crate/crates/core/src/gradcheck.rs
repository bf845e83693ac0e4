//! Central finite-difference derivative oracle.
//!
//! Independent of the tape: it only evaluates a closure at shifted points.
//! Used by the test suites to verify every analytic gradient path.

/// d f / d x[i] for all i, by central differences with step `h`.
pub fn central_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Dense Jacobian of a map `R^n → R^m` by central differences; row i holds
/// d out[i] / d x[j].
pub fn central_diff_jacobian(
    f: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    x: &[f64],
    h: f64,
) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let fp = f(&probe);
        probe[j] = orig - h;
        let fm = f(&probe);
        probe[j] = orig;
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// log |det J| of a square Jacobian via Gaussian elimination with partial
/// pivoting.
pub fn log_abs_det(jac: &[Vec<f64>]) -> f64 {
    let n = jac.len();
    let mut a: Vec<Vec<f64>> = jac.to_vec();
    let mut logdet = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        logdet += p.abs().ln();
        for row in col + 1..n {
            let factor = a[row][col] / p;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    logdet
}

/// Gradient-check comparison: relative error when either side is
/// appreciable, absolute error otherwise.
pub fn grad_mismatch(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        // Both effectively zero; report the (tiny) absolute gap scaled so a
        // real disagreement still trips the 1e-4 threshold.
        (analytic - numeric).abs() * 1e2
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Worst mismatch across a gradient vector.
pub fn max_grad_mismatch(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| grad_mismatch(a, n))
        .fold(0.0, f64::max)
}
