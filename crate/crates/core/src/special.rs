//! Special functions (thin wrappers over `statrs`).

#[cfg(test)]
use std::f64::consts::PI;

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// `ln C(n, k)` through log-Gamma.
pub fn ln_binomial(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Regularized lower incomplete Gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    statrs::function::gamma::gamma_lr(a, x)
}

/// Regularized upper incomplete Gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(a, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_values() {
        assert!((gamma(5.0) - 24.0).abs() < 1e-12);
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-14);
        assert!((gamma(1.25) - 0.906_402_477_055_477).abs() < 1e-14);
        // ln Gamma(100) = ln(99!)
        let ln99: f64 = (1..100).map(|i| (i as f64).ln()).sum();
        assert!((ln_gamma(100.0) - ln99).abs() / ln99 < 1e-14);
    }

    #[test]
    fn incomplete_gamma_known() {
        // P(1, x) = 1 - e^{-x}
        for x in [0.1, 1.0, 3.0, 10.0] {
            assert!((gamma_p(1.0, x) - (1.0 - (-x as f64).exp())).abs() < 1e-14);
        }
        // Q(1/2, x) = erfc(sqrt x); erfc(1) = 0.157299207050285...
        assert!((gamma_q(0.5, 1.0) - 0.157_299_207_050_285_13).abs() < 1e-14);
        for (a, x) in [(1.25, 0.3), (1.25, 4.0), (3.5, 2.0), (3.5, 7.0)] {
            assert!((gamma_p(a, x) + gamma_q(a, x) - 1.0).abs() < 1e-14);
        }
    }
}
