//! Conversion between rho-zCDP and (epsilon, delta)-DP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log of `exp((a-1)(a*rho - eps)) / (a-1) * (1 - 1/a)^a`, for `a > 1`.
pub fn log_delta_objective(alpha: f64, rho: f64, epsilon: f64) -> f64 {
    (alpha - 1.0) * (alpha * rho - epsilon) - (alpha - 1.0).ln() + alpha * (-1.0 / alpha).ln_1p()
}

/// Derivative of [`log_delta_objective`] in `alpha`; increasing on `(1, inf)`.
fn log_delta_slope(alpha: f64, rho: f64, epsilon: f64) -> f64 {
    (2.0 * alpha - 1.0) * rho - epsilon + (-1.0 / alpha).ln_1p()
}

/// Minimizing order `alpha*` of the zCDP-to-DP bound.
///
/// The log objective is convex in `alpha`, so its minimizer is the unique
/// root of the slope; it is bracketed by doubling and refined by bisection.
pub fn optimal_alpha(rho: f64, epsilon: f64) -> f64 {
    let mut lo = 1.0;
    let mut hi = ((epsilon / rho + 1.0) / 2.0 + 1.0).max(2.0);
    while log_delta_slope(hi, rho, epsilon) < 0.0 && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_delta_slope(mid, rho, epsilon) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest delta such that rho-zCDP implies (epsilon, delta)-DP.
pub fn zcdp_to_dp(rho: f64, epsilon: f64) -> f64 {
    assert!(rho >= 0.0 && epsilon > 0.0, "rho >= 0 and epsilon > 0 required");
    if rho == 0.0 {
        return 0.0;
    }
    let alpha = optimal_alpha(rho, epsilon);
    log_delta_objective(alpha, rho, epsilon).exp().min(1.0)
}

/// Largest rho whose (epsilon, delta) conversion stays within `delta`.
pub fn dp_to_zcdp(epsilon: f64, delta: f64) -> f64 {
    assert!(epsilon > 0.0 && delta > 0.0 && delta < 1.0, "epsilon > 0 and delta in (0, 1) required");
    let mut lo = 0.0;
    let mut hi = epsilon.max(1.0);
    while zcdp_to_dp(hi, epsilon) <= delta {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-15 * hi || mid <= lo || mid >= hi {
            break;
        }
        if zcdp_to_dp(mid, epsilon) <= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Smallest epsilon with `zcdp_to_dp(rho, epsilon) <= delta`, by bisection.
pub fn dp_epsilon(rho: f64, delta: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let mut hi = rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt() + 1.0;
    while zcdp_to_dp(rho, hi) > delta {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if zcdp_to_dp(rho, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Target (epsilon, delta) and the zCDP budget that realizes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub rho: f64,
}

impl PrivacyBudget {
    pub fn from_dp(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta, rho: dp_to_zcdp(epsilon, delta) })
    }

    /// Budget given directly in rho; epsilon is the smallest value whose
    /// conversion at `rho` stays within `delta`.
    pub fn from_rho(rho: f64, delta: f64) -> Self {
        Self { epsilon: dp_epsilon(rho, delta), delta, rho }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rho_gives_zero_delta() {
        assert_eq!(zcdp_to_dp(0.0, 1.0), 0.0);
        assert!(zcdp_to_dp(1e-12, 1.0) < 1e-300);
    }

    #[test]
    fn delta_monotone_in_rho() {
        for &eps in &[0.1, 1.0, 4.0] {
            let mut prev = 0.0;
            for i in 1..200 {
                let rho = i as f64 * 0.01;
                let d = zcdp_to_dp(rho, eps);
                assert!(d >= prev, "delta decreased at rho={rho}, eps={eps}");
                prev = d;
            }
        }
    }

    #[test]
    fn optimum_is_local_minimum() {
        for &(rho, eps) in &[(0.05, 1.0), (0.5, 2.0), (0.001, 0.1), (2.0, 10.0)] {
            let a = optimal_alpha(rho, eps);
            let f = log_delta_objective(a, rho, eps);
            assert!(f <= log_delta_objective(a + 1e-3, rho, eps));
            assert!(f <= log_delta_objective((a - 1e-3).max(1.0 + 1e-12), rho, eps));
        }
    }

    #[test]
    fn rho_monotone_in_epsilon_and_delta() {
        let deltas = [1e-9, 1e-6, 1e-3];
        let eps = [0.1, 0.5, 1.0, 5.0];
        for &d in &deltas {
            for w in eps.windows(2) {
                assert!(dp_to_zcdp(w[0], d) < dp_to_zcdp(w[1], d));
            }
        }
        for &e in &eps {
            for w in deltas.windows(2) {
                assert!(dp_to_zcdp(e, w[0]) < dp_to_zcdp(e, w[1]));
            }
        }
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::from_dp(0.0, 1e-6).is_err());
        assert!(PrivacyBudget::from_dp(1.0, 1.0).is_err());
        let b = PrivacyBudget::from_dp(1.0, 1e-6).unwrap();
        assert!(b.rho > 0.0 && zcdp_to_dp(b.rho, 1.0) <= 1e-6);
    }
}
