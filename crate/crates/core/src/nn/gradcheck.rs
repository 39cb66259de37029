/// Denominator floor for the relative error, so near-zero gradients are
/// judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate of the worst disagreement.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` around `point`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(point: &[f64], analytic: &[f64], mut loss: F, eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    let mut x = point.to_vec();
    let mut worst = (0.0f64, None);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = loss(&x);
        x[i] = orig - eps;
        let minus = loss(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 || rel.is_nan() {
            worst = (if rel.is_nan() { f64::INFINITY } else { rel }, Some(i));
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: x.len(),
        tolerance: tol,
        passed: worst.0 <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_model_has_zero_error() {
        // loss = sum(x): gradient is all ones and exact under central differences
        let x = [0.5, -1.0, 2.0];
        let rep = grad_check(&x, &[1.0, 1.0, 1.0], |v| v.iter().sum(), 1e-5, 1e-4);
        assert!(rep.passed);
        assert!(rep.max_rel_error < 1e-9);
        assert_eq!(rep.checked, 3);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = [1.0, 2.0];
        let rep = grad_check(&x, &[2.0, 3.0], |v| v[0] * v[0] + v[1] * v[1], 1e-5, 1e-4);
        assert!(!rep.passed);
        assert_eq!(rep.worst_index, Some(1));
    }
}
