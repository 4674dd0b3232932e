use crate::{Error, Result};

/// Denominator floor for relative errors, so that components whose true
/// gradient is ~0 are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central-difference check of `analytic` against `loss` around `params`.
///
/// `loss` must be deterministic; any stochastic noise it uses has to be
/// frozen and replayed identically for every perturbation.
pub fn gradient_check<F>(mut loss: F, params: &[f64], analytic: &[f64], epsilon: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!("gradient check epsilon {epsilon} must be positive")));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim("gradient check", params.len(), analytic.len()));
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..params.len() {
        probe[i] = params[i] + epsilon;
        let up = loss(&probe);
        probe[i] = params[i] - epsilon;
        let down = loss(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        if rel > report.max_rel_err || !rel.is_finite() {
            report = GradCheckReport {
                max_rel_err: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epsilon_is_rejected() {
        assert!(gradient_check(|p| p[0], &[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let r = gradient_check(|p| p[0] * p[0], &[1.5], &[2.0], 1e-5).unwrap();
        assert!(r.max_rel_err > 0.1);
        let r = gradient_check(|p| p[0] * p[0], &[1.5], &[3.0], 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-8);
    }
}
