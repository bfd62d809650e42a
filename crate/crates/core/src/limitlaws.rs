//! Closed-form limit laws and the statistics used to compare samples with them.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::quad::integrate;
use crate::special::{gamma_q, ln_gamma};

/// Smallest sample accepted by the comparison statistics.
pub const MIN_SAMPLES: usize = 50;

/// Biggins transform of the stable cascade: `sin(pi(2-a))/sin(pi(t-a))` on
/// `(a, a+1)`, `+inf` elsewhere.
pub fn phi_alpha(alpha: f64, theta: f64) -> f64 {
    if theta <= alpha || theta >= alpha + 1.0 {
        return f64::INFINITY;
    }
    (PI * (2.0 - alpha)).sin() / (PI * (theta - alpha)).sin()
}

/// `phi_alpha - 1` in product form, exact in sign near both roots.
fn phi_minus_one(alpha: f64, theta: f64) -> f64 {
    2.0 * (0.5 * PI * (theta + 2.0 - 2.0 * alpha)).cos() * (0.5 * PI * (2.0 - theta)).sin()
        / (PI * (theta - alpha)).sin()
}

/// Minimal root of `phi_alpha = 1` in `(alpha, alpha + 1)` by bisection.
pub fn theta_root(alpha: f64) -> f64 {
    // phi -> +inf at alpha and attains its minimum at alpha + 1/2
    let (mut lo, mut hi) = (alpha, alpha + 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi_minus_one(alpha, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Laplace transform of the martingale limit:
/// `(1/Gamma(a-1/2)) int_0^inf exp(-q^{2/theta} y - 1/y) y^{-(a+1/2)} dy`.
pub fn psi(alpha: f64, theta: f64, q: f64) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::InvalidArgument(format!("psi needs q >= 0, got {q}")));
    }
    let s = alpha - 0.5;
    let c = q.powf(2.0 / theta);
    let lg = ln_gamma(s);
    // y = e^t; e^{-e^{-t}} is negligible below t = -6
    let f = |t: f64| (-c * t.exp() - (-t).exp() - s * t - lg).exp();
    let upper = 40.0 / s.min(1.0) + 10.0;
    let (v, _) = integrate(f, -6.0, upper, 1e-13, 1e-12)?;
    Ok(v)
}

/// Laplace transform of the additive-martingale limit, dilute case
/// (`theta = 2`): the inverse-Gamma(a - 1/2, a - 3/2) transform.
pub fn dilute_w_laplace(alpha: f64, q: f64) -> Result<f64> {
    psi(alpha, 2.0, (alpha - 1.5) * q)
}

/// Laplace transform of the additive-martingale limit, dense case
/// (`theta = 2a - 1`).
pub fn dense_w_laplace(alpha: f64, q: f64) -> Result<f64> {
    let c = (ln_gamma(alpha + 0.5) - ln_gamma(1.5 - alpha)).exp();
    psi(alpha, 2.0 * alpha - 1.0, c * q)
}

/// CDF of the inverse-Gamma law with shape `a` and scale `b`.
pub fn inverse_gamma_cdf(a: f64, b: f64, w: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else {
        gamma_q(a, b / w)
    }
}

/// Laplace transform of inverse-Gamma(a, b) by quadrature of the density.
pub fn inverse_gamma_laplace(a: f64, b: f64, q: f64) -> Result<f64> {
    let lg = ln_gamma(a);
    // w = e^t
    let f = |t: f64| {
        let w = t.exp();
        (a * b.ln() - a * t - b / w - q * w - lg).exp()
    };
    let (v, _) = integrate(f, b.ln() - 8.0, b.ln() + 60.0, 1e-14, 1e-12)?;
    Ok(v)
}

pub fn exp_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x).exp_m1()
    }
}

/// CDF of `1/E` with `E ~ Exp(1)`.
pub fn inverse_exp_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LawMeta {
    pub source: String,
    pub params_hash: String,
    pub seed: u64,
}

/// Samples with optional nonnegative weights.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmpiricalLaw {
    pub samples: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub meta: LawMeta,
}

impl EmpiricalLaw {
    pub fn new(samples: Vec<f64>) -> Self {
        EmpiricalLaw { samples, weights: None, meta: LawMeta::default() }
    }

    pub fn weighted(samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != samples.len() {
            return Err(Error::InvalidArgument("weights and samples differ in length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        Ok(EmpiricalLaw { samples, weights: Some(weights), meta: LawMeta::default() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check(&self, need: usize) -> Result<()> {
        if self.len() < need {
            Err(Error::InsufficientData { got: self.len(), need })
        } else {
            Ok(())
        }
    }

    /// Normalized weights (uniform when unweighted).
    pub fn normalized_weights(&self) -> Vec<f64> {
        match &self.weights {
            None => vec![1.0 / self.len() as f64; self.len()],
            Some(w) => {
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            }
        }
    }

    /// Kish effective sample size.
    pub fn effective_size(&self) -> f64 {
        match &self.weights {
            None => self.len() as f64,
            Some(w) => {
                let s: f64 = w.iter().sum();
                let s2: f64 = w.iter().map(|x| x * x).sum();
                s * s / s2
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub effective_n: f64,
    /// Asymptotic Kolmogorov p-value at the effective sample size.
    pub p_value: f64,
}

/// Asymptotic `P(sqrt(n) D_n > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // small-x form converges faster here
        let s: f64 = (1..=50)
            .map(|k| {
                let k = (2 * k - 1) as f64;
                (-k * k * PI * PI / (8.0 * x * x)).exp()
            })
            .sum();
        return 1.0 - (2.0 * PI).sqrt() / x * s;
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (k * k) as f64 * x * x).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sided Kolmogorov–Smirnov distance to a continuous CDF (weighted
/// empirical CDF when weights are present).
pub fn ks_statistic<F: Fn(f64) -> f64>(law: &EmpiricalLaw, cdf: F) -> Result<KsReport> {
    law.check(MIN_SAMPLES)?;
    let w = law.normalized_weights();
    let mut idx: Vec<usize> = (0..law.len()).collect();
    idx.sort_by(|&a, &b| law.samples[a].total_cmp(&law.samples[b]));
    let mut d = 0.0f64;
    let mut acc = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let x = law.samples[idx[i]];
        let f = cdf(x);
        d = d.max((f - acc).abs());
        while i < idx.len() && law.samples[idx[i]] == x {
            acc += w[idx[i]];
            i += 1;
        }
        d = d.max((acc - f).abs());
    }
    let ne = law.effective_size();
    Ok(KsReport { statistic: d, effective_n: ne, p_value: kolmogorov_survival(d * ne.sqrt()) })
}

/// Two-sample Kolmogorov–Smirnov distance and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsReport> {
    if a.len() < MIN_SAMPLES || b.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData { got: a.len().min(b.len()), need: MIN_SAMPLES });
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    Ok(KsReport { statistic: d, effective_n: ne, p_value: kolmogorov_survival(d * ne.sqrt()) })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LaplacePoint {
    pub q: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub target: f64,
}

impl LaplacePoint {
    pub fn z(&self) -> f64 {
        (self.empirical - self.target) / self.stderr
    }
}

/// Empirical Laplace transform (weighted ratio estimator) with delete-one
/// jackknife standard errors, against a target transform.
pub fn laplace_compare<F: Fn(f64) -> Result<f64>>(
    law: &EmpiricalLaw,
    qs: &[f64],
    target: F,
) -> Result<Vec<LaplacePoint>> {
    law.check(MIN_SAMPLES)?;
    let n = law.len();
    let w: Vec<f64> = law.weights.clone().unwrap_or_else(|| vec![1.0; n]);
    let sw: f64 = w.iter().sum();
    qs.iter()
        .map(|&q| {
            let e: Vec<f64> = law.samples.iter().map(|x| (-q * x).exp()).collect();
            let swe: f64 = w.iter().zip(&e).map(|(a, b)| a * b).sum();
            let full = swe / sw;
            let loo: Vec<f64> = (0..n).map(|i| (swe - w[i] * e[i]) / (sw - w[i])).collect();
            let m = loo.iter().sum::<f64>() / n as f64;
            let var = (n as f64 - 1.0) / n as f64 * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            Ok(LaplacePoint { q, empirical: full, stderr: var.sqrt(), target: target(q)? })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailExponent {
    pub hill: f64,
    pub hill_ci: (f64, f64),
    pub loglog: f64,
    pub loglog_se: f64,
    pub k: usize,
}

/// Tail index of `P(X > x) ~ x^{-a}` from the top `k` order statistics:
/// Hill estimator with a normal 95% interval, and the slope of the
/// log-log empirical survival function.
pub fn tail_exponent(law: &EmpiricalLaw, k: usize) -> Result<TailExponent> {
    law.check(MIN_SAMPLES)?;
    let mut xs: Vec<f64> = law.samples.iter().copied().filter(|x| *x > 0.0).collect();
    if k < 10 || k + 1 > xs.len() {
        return Err(Error::InsufficientData { got: xs.len(), need: k.max(10) + 1 });
    }
    xs.sort_by(|a, b| b.total_cmp(a));
    let n = law.len() as f64;
    let base = xs[k].ln();
    let gamma = xs[..k].iter().map(|x| x.ln() - base).sum::<f64>() / k as f64;
    let hill = 1.0 / gamma;
    let half = 1.96 * hill / (k as f64).sqrt();
    let lx: Vec<f64> = xs[..k].iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = (0..k).map(|i| ((i as f64 + 0.5) / n).ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or_else(|| Error::InsufficientData { got: k, need: 2 })?;
    Ok(TailExponent { hill, hill_ci: (hill - half, hill + half), loglog: -fit.slope, loglog_se: fit.slope_se, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_values() {
        assert!((phi_alpha(1.75, 2.0) - 1.0).abs() < 1e-15);
        assert!((phi_alpha(1.75, 2.5) - 1.0).abs() < 1e-14);
        assert!(phi_alpha(1.75, 2.75 - 1e-9) > 1e7);
        assert!(phi_alpha(1.75, 1.7).is_infinite());
    }

    #[test]
    fn theta_roots() {
        assert!((theta_root(7.0 / 6.0) - 4.0 / 3.0).abs() < 1e-10);
        assert!((theta_root(11.0 / 6.0) - 2.0).abs() < 1e-10);
        assert!((theta_root(1.5) - 2.0).abs() < 1e-10);
        for b in [0.1, 0.25, 0.4] {
            assert!((theta_root(1.5 + b) - 2.0).abs() < 1e-10);
            assert!((theta_root(1.5 - b) - (2.0 - 2.0 * b)).abs() < 1e-10);
        }
    }

    #[test]
    fn psi_normalized() {
        for (a, t) in [(1.25, 1.5), (1.5, 2.0), (1.75, 2.0), (1.1, 1.2)] {
            assert!((psi(a, t, 0.0).unwrap() - 1.0).abs() < 1e-10, "{a} {t}");
        }
    }

    #[test]
    fn kolmogorov_tail_known_values() {
        // P(K > 1.358) ~ 0.05, continuity across the branch switch
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.0 - 1e-12) - kolmogorov_survival(1.0)).abs() < 1e-9);
    }
}
