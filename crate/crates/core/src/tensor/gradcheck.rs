//! Central-finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Floor for the relative-error denominator, guarding near-zero gradients.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compare an analytic gradient against central finite differences of the
/// scalar computation `f`, returning the maximum relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over all
/// parameters. `f` must be a pure function of the parameter vector; run it
/// with dropout disabled and deterministic normalization.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64> {
    if theta.len() != analytic.len() {
        return Err(Error::Arg(format!(
            "grad_check: {} parameters but {} analytic gradients",
            theta.len(),
            analytic.len()
        )));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Arg(format!("grad_check: invalid step {h}")));
    }
    let base = f(theta)?;
    if !base.is_finite() {
        return Err(Error::Diagnostic(format!(
            "grad_check: non-finite loss {base} at the unperturbed point"
        )));
    }
    let mut work = theta.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        work[i] = orig + h;
        let plus = f(&work)?;
        work[i] = orig - h;
        let minus = f(&work)?;
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Diagnostic(format!(
                "grad_check: non-finite loss near parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_near_exact() {
        let f = |w: &[f64]| Ok(w[0] * w[0]);
        let rel = grad_check(f, &[3.0], &[6.0], 1e-5).unwrap();
        assert!(rel < 1e-9, "rel {rel}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |w: &[f64]| Ok(w[0] * w[0]);
        let rel = grad_check(f, &[3.0], &[5.4], 1e-5).unwrap();
        assert!(rel > 0.05, "rel {rel}");
    }

    #[test]
    fn step_sizes_agree_on_verdict() {
        // Smooth multi-parameter function: f = sin(a)*b + exp(b/3).
        let f = |w: &[f64]| Ok(w[0].sin() * w[1] + (w[1] / 3.0).exp());
        let theta = [0.7, -1.2];
        let analytic = [
            0.7f64.cos() * -1.2,
            0.7f64.sin() + (-1.2f64 / 3.0).exp() / 3.0,
        ];
        let r5 = grad_check(f, &theta, &analytic, 1e-5).unwrap();
        let r6 = grad_check(f, &theta, &analytic, 1e-6).unwrap();
        assert!(r5 < 1e-6 && r6 < 1e-6, "r5 {r5} r6 {r6}");
        // And both flag the same corrupted gradient.
        let bad = [analytic[0] + 0.1, analytic[1]];
        assert!(grad_check(f, &theta, &bad, 1e-5).unwrap() > 1e-2);
        assert!(grad_check(f, &theta, &bad, 1e-6).unwrap() > 1e-2);
    }

    #[test]
    fn non_finite_loss_is_diagnosed() {
        let f = |w: &[f64]| Ok((-w[0]).sqrt()); // NaN for positive w
        let err = grad_check(f, &[4.0], &[0.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Diagnostic(_)), "{err}");
    }

    #[test]
    fn rejects_length_mismatch() {
        let f = |w: &[f64]| Ok(w[0]);
        assert!(grad_check(f, &[1.0, 2.0], &[1.0], 1e-5).is_err());
    }
}
