//! Explicit coefficients `s_k = F_k h^k` at `n = 2`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::CriticalParams;

fn check_o2(p: &CriticalParams) -> Result<()> {
    if p.is_o2() {
        Ok(())
    } else {
        Err(Error::NotO2(p.n))
    }
}

fn s1(h: f64, g: f64) -> f64 {
    let pi2 = PI * PI;
    0.25 / h - 2.0 / (pi2 * h) - 4.0 * g / (9.0 * pi2 * h * h)
}

fn s2(h: f64, g: f64) -> f64 {
    let pi2 = PI * PI;
    2.0 / (9.0 * pi2 * h) + g / (h * h) * (20.0 / (9.0 * pi2) - 0.25)
}

/// `s_k` for `k >= 3`, given `c = c_{2k-4} = 2 (1 + 1/3 + ... + 1/(2k-5))`.
pub(crate) fn sk_from_c(k: usize, h: f64, g: f64, c: f64) -> f64 {
    let kf = k as f64;
    let big_g = g / h;
    let (km3, km1, kp1, kp3) = (2.0 * kf - 3.0, 2.0 * kf - 1.0, 2.0 * kf + 1.0, 2.0 * kf + 3.0);
    let (km2, kp2, kp4) = (2.0 * kf - 2.0, 2.0 * kf + 2.0, 2.0 * kf + 4.0);
    let q4 = 4.0 * kf * kf - 4.0;
    let q16 = 4.0 * kf * kf - 16.0;
    // harmonic-sum part, both contributions merged
    let log_part = 16.0 * c * ((1.0 - 2.0 * big_g) / q4 - 2.0 * big_g * 12.0 / (q4 * q16));
    let a_rest = 8.0 / kp4 * (1.0 / km3 + 1.0 / km1 + 1.0 / kp1 + 1.0 / kp3)
        + 48.0 / (km3 * kp3)
        + 16.0 / (3.0 * km1 * kp1);
    let b_rest = 32.0 / (km3 * km2 * kp2) - 8.0 / kp2 * (1.0 / km1 + 1.0 / kp1) - 16.0 / (km1 * kp1);
    (log_part + big_g * a_rest + b_rest) / (4.0 * PI * PI * h)
}

/// Scaled coefficient `s_k` for a single `k` (O(k) for the harmonic sum).
pub fn o2_fk(p: &CriticalParams, k: usize) -> Result<f64> {
    check_o2(p)?;
    let (h, g) = (p.h, p.g);
    Ok(match k {
        0 => 1.0,
        1 => s1(h, g),
        2 => s2(h, g),
        _ => {
            let c: f64 = 2.0 * (1..=k - 2).map(|i| 1.0 / (2.0 * i as f64 - 1.0)).sum::<f64>();
            sk_from_c(k, h, g, c)
        }
    })
}

/// All `s_0..=s_{k_max}` in one pass (compensated prefix sums).
pub fn o2_table(p: &CriticalParams, k_max: usize) -> Result<Vec<f64>> {
    check_o2(p)?;
    let (h, g) = (p.h, p.g);
    let mut s = Vec::with_capacity(k_max + 1);
    s.push(1.0);
    if k_max >= 1 {
        s.push(s1(h, g));
    }
    if k_max >= 2 {
        s.push(s2(h, g));
    }
    let (mut c, mut comp) = (0.0f64, 0.0f64);
    for k in 3..=k_max {
        // add 2/(2(k-2)-1) with Kahan compensation
        let term = 2.0 / (2.0 * (k - 2) as f64 - 1.0) - comp;
        let t = c + term;
        comp = (t - c) - term;
        c = t;
        s.push(sk_from_c(k, h, g, c));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{derive_params, Selector};

    fn o2(h: f64) -> CriticalParams {
        derive_params(2.0, Selector::O2 { h }).unwrap()
    }

    /// Unsimplified form of the k >= 3 coefficient.
    fn naive(k: usize, h: f64, g: f64) -> f64 {
        let c = |m: usize| 2.0 * (1..=m).map(|i| 1.0 / (2.0 * i as f64 - 1.0)).sum::<f64>();
        let kf = k as f64;
        let a = 4.0 / (2.0 * kf + 4.0) * c(k + 2) - 8.0 / (2.0 * kf + 3.0) - 8.0 / (3.0 * (2.0 * kf + 1.0))
            - 4.0 / (2.0 * kf - 4.0) * c(k - 2)
            + 8.0 / (2.0 * kf - 3.0)
            + 8.0 / (3.0 * (2.0 * kf - 1.0));
        let b = -4.0 / (2.0 * kf + 2.0) * c(k + 1) + 4.0 / (2.0 * kf - 2.0) * c(k - 1) + 8.0 / (2.0 * kf + 1.0)
            - 8.0 / (2.0 * kf - 1.0);
        (g / (h * h) * a + b / h) / (4.0 * PI * PI)
    }

    #[test]
    fn rearranged_matches_naive() {
        for h in [4.0 / (3.0 * PI * PI), 1.7 / (PI * PI), 2.0 / (PI * PI)] {
            let p = o2(h);
            let t = o2_table(&p, 12).unwrap();
            for k in 3..=12 {
                let nv = naive(k, p.h, p.g);
                assert!((t[k] / nv - 1.0).abs() < 1e-12, "k={k}");
                assert!((o2_fk(&p, k).unwrap() / t[k] - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_general_n() {
        let p = derive_params(1.0, Selector::Dilute).unwrap();
        assert!(matches!(o2_fk(&p, 3), Err(Error::NotO2(_))));
    }
}
