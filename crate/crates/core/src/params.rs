//! Parameter points on the non-generic critical line.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when classifying points that sit on a boundary
/// of an admissible window (e.g. `g = h/2` for `n = 2`).
const BOUNDARY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Dense,
    Dilute,
    /// `n = 2`, `g = h/2`.
    O2Boundary,
    /// `n = 2`, `g < h/2`.
    O2Sub,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Dense => "dense",
            Regime::Dilute => "dilute",
            Regime::O2Boundary => "o2_boundary",
            Regime::O2Sub => "o2_sub",
        };
        f.write_str(s)
    }
}

/// Tail class of the Janson–Stefánsson offspring law: `A` is a pure power
/// law `k^{-alpha-1}`, `B` carries an extra `ln k` (only `n = 2, g < h/2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    A,
    B,
}

/// How the caller pins down a point on the critical line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    /// The unique dilute point for the given `n < 2`.
    Dilute,
    /// A dense point with caller-supplied `h`.
    Dense { h: f64 },
    /// `n = 2` with `h` in `[4/(3 pi^2), 2/pi^2]`.
    O2 { h: f64 },
}

/// A fully resolved critical parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalParams {
    pub n: f64,
    pub h: f64,
    pub g: f64,
    pub b: f64,
    pub alpha: f64,
    pub theta_alpha: f64,
    pub beta_alpha: f64,
    pub gamma: f64,
    pub regime: Regime,
    pub case_tag: CaseTag,
}

/// `b = arccos(n/2) / pi`, evaluated through `2 asin(sqrt((2-n)/4))` so that
/// it stays accurate as `n -> 2`.
pub fn b_of_n(n: f64) -> f64 {
    2.0 * ((2.0 - n) / 4.0).sqrt().asin() / PI
}

/// `(2-n)/(2 b^2)`, written as `2 sin^2(pi b/2)/b^2` for stability near `n = 2`.
fn quad_coeff(n: f64, b: f64) -> f64 {
    if b == 0.0 {
        debug_assert_eq!(n, 2.0);
        return PI * PI / 2.0;
    }
    let s = (PI * b / 2.0).sin();
    2.0 * s * s / (b * b)
}

/// `g` on the non-generic line for `n < 2` (and its `n = 2` limit).
pub fn line_g(n: f64, h: f64) -> f64 {
    let b = b_of_n(n);
    3.0 / (2.0 + b * b) * (h - quad_coeff(n, b) * h * h)
}

/// Upper bound `3h / (2(b^2 - 2b + 3))`; equality is the dilute point.
pub fn dilute_bound(b: f64, h: f64) -> f64 {
    3.0 * h / (2.0 * (b * b - 2.0 * b + 3.0))
}

/// `h` at the dilute point, from equating the line with its upper bound.
pub fn dilute_h(n: f64) -> f64 {
    let b = b_of_n(n);
    let ratio = (2.0 + b * b) / (2.0 * (b * b - 2.0 * b + 3.0));
    (1.0 - ratio) / quad_coeff(n, b)
}

/// Bisection for `theta_root` lives in `limitlaws`; this is the closed form.
pub fn theta_of_alpha(alpha: f64) -> f64 {
    (2.0 * alpha - 1.0).min(2.0)
}

/// Lower end of the admissible `h` window for `n = 2`.
pub fn o2_h_min() -> f64 {
    4.0 / (3.0 * PI * PI)
}

/// Upper end of the admissible `h` window for `n = 2`.
pub fn o2_h_max() -> f64 {
    2.0 / (PI * PI)
}

/// Resolve a critical point from `n` and a selector.
pub fn derive_params(n: f64, selector: Selector) -> Result<CriticalParams> {
    if !(n > 0.0 && n <= 2.0) {
        return Err(Error::OutOfPhase(format!("n = {n} is outside (0, 2]")));
    }
    let is_o2 = n == 2.0;
    match selector {
        Selector::O2 { h } => {
            if !is_o2 {
                return Err(Error::NotO2(n));
            }
            o2_point(h)
        }
        Selector::Dilute | Selector::Dense { .. } if is_o2 => Err(Error::OutOfPhase(
            "n = 2 has no dilute/dense split; use the o2 selector".into(),
        )),
        Selector::Dilute => {
            let b = b_of_n(n);
            let h = dilute_h(n);
            let g = dilute_bound(b, h);
            Ok(finish(n, h, g, b, Regime::Dilute))
        }
        Selector::Dense { h } => {
            let b = b_of_n(n);
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::OutOfPhase(format!("h = {h} must be positive")));
            }
            let g = line_g(n, h);
            if g < 0.0 {
                return Err(Error::DegenerateWeight(g));
            }
            if g == 0.0 {
                return Err(Error::OutOfPhase("dense point needs g > 0".into()));
            }
            let bound = dilute_bound(b, h);
            if g >= bound * (1.0 - BOUNDARY_RTOL) {
                return Err(Error::OutOfPhase(format!(
                    "h = {h} gives g = {g} >= dilute bound {bound}; dense needs h > {}",
                    dilute_h(n)
                )));
            }
            Ok(finish(n, h, g, b, Regime::Dense))
        }
    }
}

fn o2_point(h: f64) -> Result<CriticalParams> {
    let (lo, hi) = (o2_h_min(), o2_h_max());
    if !(h >= lo * (1.0 - BOUNDARY_RTOL) && h <= hi * (1.0 + BOUNDARY_RTOL)) {
        return Err(Error::OutOfPhase(format!(
            "n = 2 requires h in [{lo}, {hi}], got {h}"
        )));
    }
    let mut g = 1.5 * (h - PI * PI / 2.0 * h * h);
    if g < 0.0 {
        if g > -BOUNDARY_RTOL * h {
            g = 0.0;
        } else {
            return Err(Error::DegenerateWeight(g));
        }
    }
    let regime = if (g - h / 2.0).abs() <= BOUNDARY_RTOL * h {
        g = g.min(h / 2.0);
        Regime::O2Boundary
    } else {
        Regime::O2Sub
    };
    if g == 0.0 {
        log::warn!("n = 2 with h = {h}: g = 0, maps carry no empty quadrangles");
    }
    Ok(finish(2.0, h, g, 0.0, regime))
}

fn finish(n: f64, h: f64, g: f64, b: f64, regime: Regime) -> CriticalParams {
    let alpha = match regime {
        Regime::Dilute => 1.5 + b,
        Regime::Dense => 1.5 - b,
        Regime::O2Boundary | Regime::O2Sub => 1.5,
    };
    let theta_alpha = theta_of_alpha(alpha);
    CriticalParams {
        n,
        h,
        g,
        b,
        alpha,
        theta_alpha,
        beta_alpha: theta_alpha - alpha,
        gamma: 1.0 / h.sqrt(),
        regime,
        case_tag: if regime == Regime::O2Sub {
            CaseTag::B
        } else {
            CaseTag::A
        },
    }
}

impl CriticalParams {
    pub fn is_o2(&self) -> bool {
        self.n == 2.0
    }

    /// `g / h`, the dimensionless empty-face weight.
    pub fn g_over_h(&self) -> f64 {
        self.g / self.h
    }

    /// Relative residual of the defining line equation (and of the dilute
    /// equality, when applicable).
    pub fn line_residual(&self) -> f64 {
        let scale = self.h.max(self.g.abs());
        let mut r = (line_g(self.n, self.h) - self.g).abs() / scale;
        if self.regime == Regime::Dilute {
            r = r.max((dilute_bound(self.b, self.h) - self.g).abs() / scale);
        }
        r
    }

    /// Short stable identifier used in cache file names and hashes.
    pub fn tag(&self) -> String {
        format!("{:.12}_{:.12}", self.n, self.h)
    }

    /// 64-bit FNV-1a of the bit patterns of `(n, h, g)`.
    pub fn hash64(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for v in [self.n, self.h, self.g] {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn n_one_dilute() {
        let p = derive_params(1.0, Selector::Dilute).unwrap();
        assert!(close(p.b, 1.0 / 3.0, 1e-14));
        assert!(close(p.alpha, 11.0 / 6.0, 1e-14));
        assert_eq!(p.theta_alpha, 2.0);
        assert_eq!(p.case_tag, CaseTag::A);
        // h = 25/198 solves the rational equation for b = 1/3.
        assert!(close(p.h, 25.0 / 198.0, 1e-13));
        assert!(p.line_residual() < 1e-12);
    }

    #[test]
    fn sqrt2_dilute() {
        let p = derive_params(2f64.sqrt(), Selector::Dilute).unwrap();
        assert!(close(p.b, 0.25, 1e-14));
        assert!(close(p.alpha, 1.75, 1e-14));
        assert_eq!(p.theta_alpha, 2.0);
        assert!(close(p.beta_alpha, 0.25, 1e-13));
    }

    #[test]
    fn o2_endpoints() {
        let p = derive_params(2.0, Selector::O2 { h: o2_h_min() }).unwrap();
        assert!(close(p.g, 2.0 / (3.0 * PI * PI), 1e-12));
        assert_eq!(p.regime, Regime::O2Boundary);
        assert_eq!(p.case_tag, CaseTag::A);
        let q = derive_params(2.0, Selector::O2 { h: o2_h_max() }).unwrap();
        assert!(q.g.abs() < 1e-15);
        assert_eq!(q.regime, Regime::O2Sub);
        assert_eq!(q.case_tag, CaseTag::B);
        let mid = derive_params(2.0, Selector::O2 { h: 1.7 / (PI * PI) }).unwrap();
        assert_eq!(mid.case_tag, CaseTag::B);
        assert!(mid.g < mid.h / 2.0);
        assert!(mid.line_residual() < 1e-12);
    }

    #[test]
    fn dense_window() {
        let n = 1.0;
        let hd = dilute_h(n);
        let b = b_of_n(n);
        let h_zero = 1.0 / quad_coeff(n, b);
        let h = 0.5 * (hd + h_zero);
        let p = derive_params(n, Selector::Dense { h }).unwrap();
        assert!(close(p.alpha, 1.5 - 1.0 / 3.0, 1e-14));
        assert!(close(p.theta_alpha, 2.0 * p.alpha - 1.0, 1e-14));
        assert!(p.line_residual() < 1e-12);
        assert!(matches!(
            derive_params(n, Selector::Dense { h: 0.9 * hd }),
            Err(Error::OutOfPhase(_))
        ));
        assert!(matches!(
            derive_params(n, Selector::Dense { h: 1.1 * h_zero }),
            Err(Error::DegenerateWeight(_))
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(derive_params(2.0, Selector::O2 { h: 0.1 }).is_err());
        assert!(derive_params(2.0, Selector::O2 { h: 0.3 }).is_err());
        assert!(matches!(
            derive_params(1.0, Selector::O2 { h: 0.14 }),
            Err(Error::NotO2(_))
        ));
        assert!(derive_params(0.0, Selector::Dilute).is_err());
        assert!(derive_params(2.5, Selector::Dilute).is_err());
        assert!(derive_params(2.0, Selector::Dilute).is_err());
    }

    #[test]
    fn b_decreases_in_n() {
        let mut last = f64::INFINITY;
        for i in 1..=200 {
            let n = 2.0 * i as f64 / 200.0;
            let b = b_of_n(n);
            assert!(b < last);
            last = b;
        }
        assert_eq!(b_of_n(2.0), 0.0);
    }

    #[test]
    fn dilute_line_continuous_at_two() {
        // The dilute point converges to the lower end of the n = 2 window.
        let h = dilute_h(2.0 - 1e-10);
        assert!(close(h, o2_h_min(), 1e-4));
    }

    #[test]
    fn json_keys_are_field_names() {
        let p = derive_params(1.0, Selector::Dilute).unwrap();
        let v = serde_json::to_value(p).unwrap();
        for key in [
            "n", "h", "g", "b", "alpha", "theta_alpha", "beta_alpha", "gamma", "regime",
            "case_tag",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["regime"], "dilute");
    }
}
