//! Central-difference gradient oracle.
//!
//! This is the referee for every hand-derived gradient in the crate: the
//! acceptance suite checks the analytic autoencoder and logit gradients
//! against it at relative error ≤ 1e-4.

use crate::error::{ClearError, Result};

/// Central differences `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`, one coordinate at a
/// time. `f` is called `2·len(x)` times; a non-finite value aborts with the
/// coordinate that produced it.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    assert!(h > 0.0, "finite differences need a positive step");
    let mut work = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + h;
        let fp = f(&work);
        work[i] = orig - h;
        let fm = f(&work);
        work[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(ClearError::Eval {
                coordinate: i,
                detail: format!("f(x+h) = {fp}, f(x-h) = {fm}"),
            });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest relative discrepancy between an analytic gradient and the oracle,
/// with a floor on the denominator so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6, "{}", g[0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_grad(|_| 2.5, &[1.0, -2.0, 0.3], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_value_names_the_coordinate() {
        let err = finite_diff_grad(
            |x| if x[1] > 1.0 { f64::NAN } else { x[0] },
            &[0.0, 1.0],
            1e-3,
        )
        .unwrap_err();
        match err {
            ClearError::Eval { coordinate, .. } => assert_eq!(coordinate, 1),
            other => panic!("wrong error class: {other}"),
        }
    }

    #[test]
    fn multivariate_matches_analytic() {
        // f(x, y) = x·y² + sin(x)
        let f = |v: &[f64]| v[0] * v[1] * v[1] + v[0].sin();
        let x = [0.7, -1.3];
        let g = finite_diff_grad(f, &x, 1e-5).unwrap();
        let want = [x[1] * x[1] + x[0].cos(), 2.0 * x[0] * x[1]];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
