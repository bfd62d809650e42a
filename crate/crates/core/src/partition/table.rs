//! Tables of scaled partition coefficients `s_k = F_k h^k`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::density::Spectral;
use super::o2::o2_table;
use crate::error::{Error, Result};
use crate::params::{CaseTag, CriticalParams};
use crate::quad::graded_unit_nodes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FkMethod {
    O2ClosedForm,
    RhoMoments,
    CircleSeries,
}

impl std::fmt::Display for FkMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FkMethod::O2ClosedForm => "o2_closed_form",
            FkMethod::RhoMoments => "rho_moments",
            FkMethod::CircleSeries => "circle_series",
        })
    }
}

impl std::str::FromStr for FkMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "o2_closed_form" | "closed" => Ok(FkMethod::O2ClosedForm),
            "rho_moments" | "moments" => Ok(FkMethod::RhoMoments),
            "circle_series" | "circle" => Ok(FkMethod::CircleSeries),
            other => Err(Error::InvalidArgument(format!("unknown fk method '{other}'"))),
        }
    }
}

/// Agreement between the primary method and an independent one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub method: FkMethod,
    pub k_max: usize,
    pub max_rel_diff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionTable {
    pub params: CriticalParams,
    pub k_max: usize,
    pub s: Vec<f64>,
    pub tail_constant: f64,
    pub method: FkMethod,
    pub cross_check: Option<CrossCheck>,
}

/// Number of coefficients compared against the second method.
pub const CROSS_CHECK_K: usize = 50;
/// Relative tolerance for the cross-check.
pub const CROSS_CHECK_TOL: f64 = 1e-6;

/// Graded rule parameters for the moment integrals.
const MOMENT_LEVELS: usize = 48;
const MOMENT_ORDER: usize = 24;

/// `s_k = 2 gamma int_0^1 rho(gamma x) x^{2k} dx` for `k = 0..=k_max`.
pub fn rho_moments(spec: &Spectral, k_max: usize) -> Vec<f64> {
    let (xs, ws) = graded_unit_nodes(MOMENT_LEVELS, MOMENT_ORDER);
    let gam = spec.params.gamma;
    let mut s = vec![0.0; k_max + 1];
    for (&x, &w) in xs.iter().zip(&ws) {
        let f = 2.0 * gam * w * spec.rho_scaled(x);
        if f == 0.0 {
            continue;
        }
        let x2 = x * x;
        let mut pw = 1.0;
        for sk in s.iter_mut() {
            *sk += f * pw;
            pw *= x2;
            if pw < 1e-300 {
                break;
            }
        }
    }
    s
}

/// Coefficients from a discrete Fourier transform of `W` on the circle of
/// radius `gamma (1 + delta)`.
pub fn circle_series(spec: &Spectral, k_max: usize, delta: f64, points: usize) -> Result<Vec<f64>> {
    let gam = spec.params.gamma;
    let r = gam * (1.0 + delta);
    let vals: Vec<Complex64> = (0..points)
        .map(|j| {
            let w = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / points as f64);
            spec.resolvent(w * r)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let m = (2 * k + 1) as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, v) in vals.iter().enumerate() {
            acc += v * Complex64::from_polar(1.0, 2.0 * PI * m * j as f64 / points as f64);
        }
        // F_k = R^{2k+1} <W w^{2k+1}>, s_k = F_k gamma^{-2k}
        out.push(gam * (1.0 + delta).powf(m) * acc.re / points as f64);
    }
    Ok(out)
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .skip(1)
        .map(|(x, y)| ((x - y) / y).abs())
        .fold(0.0, f64::max)
}

/// Tail shape `k^{-alpha-1/2} (ln k)^{1{case B}}`.
pub fn tail_shape(params: &CriticalParams, k: f64) -> f64 {
    let base = k.powf(-params.alpha - 0.5);
    match params.case_tag {
        CaseTag::A => base,
        CaseTag::B => base * k.ln(),
    }
}

fn fit_tail_constant(params: &CriticalParams, s: &[f64]) -> f64 {
    let k_max = s.len() - 1;
    let lo = (k_max / 10).max(1);
    let (mut acc, mut cnt) = (0.0, 0usize);
    for (k, &sk) in s.iter().enumerate().skip(lo) {
        acc += (sk / tail_shape(params, k as f64)).ln();
        cnt += 1;
    }
    (acc / cnt as f64).exp()
}

/// Build a coefficient table with the requested method and cross-check the
/// first coefficients against an independent method.
pub fn fk_table(params: &CriticalParams, k_max: usize, method: FkMethod) -> Result<PartitionTable> {
    if k_max < 2 {
        return Err(Error::InvalidArgument(format!("K_max must be >= 2, got {k_max}")));
    }
    let spec = Spectral::new(params);
    let kc = CROSS_CHECK_K.min(k_max);
    let (s, other_method, other) = match method {
        FkMethod::O2ClosedForm => {
            let s = o2_table(params, k_max)?;
            let o = rho_moments(&spec, kc);
            (s, FkMethod::RhoMoments, o)
        }
        FkMethod::RhoMoments => {
            let s = rho_moments(&spec, k_max);
            let (m, o) = if params.is_o2() {
                (FkMethod::O2ClosedForm, o2_table(params, kc)?)
            } else {
                (FkMethod::CircleSeries, circle_series(&spec, kc, 0.02, 4096)?)
            };
            (s, m, o)
        }
        FkMethod::CircleSeries => {
            if k_max > 400 {
                return Err(Error::InvalidArgument(
                    "circle_series is a cross-check method; use K_max <= 400".into(),
                ));
            }
            let s = circle_series(&spec, k_max, 0.02, 4096)?;
            let o = rho_moments(&spec, kc);
            (s, FkMethod::RhoMoments, o)
        }
    };
    if let Some((k, &v)) = s.iter().enumerate().skip(1).find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::MethodDisagreement { k, rel: v });
    }
    let rel = max_rel_diff(&s[..=kc], &other[..=kc]);
    if rel > CROSS_CHECK_TOL {
        let k = (1..=kc)
            .max_by(|&a, &b| {
                ((s[a] - other[a]) / other[a])
                    .abs()
                    .total_cmp(&((s[b] - other[b]) / other[b]).abs())
            })
            .unwrap_or(1);
        return Err(Error::MethodDisagreement { k, rel });
    }
    let tail_constant = fit_tail_constant(params, &s);
    Ok(PartitionTable {
        params: params.clone(),
        k_max,
        s,
        tail_constant,
        method,
        cross_check: Some(CrossCheck { method: other_method, k_max: kc, max_rel_diff: rel }),
    })
}

impl PartitionTable {
    /// Default method for the parameter point.
    pub fn default_method(params: &CriticalParams) -> FkMethod {
        if params.is_o2() {
            FkMethod::O2ClosedForm
        } else {
            FkMethod::RhoMoments
        }
    }

    /// Expected volume `V(p) = 1 / s_p`.
    pub fn vbar(&self, p: usize) -> Result<f64> {
        if p == 0 || p > self.k_max {
            return Err(Error::TableTooSmall { p, k_max: self.k_max });
        }
        Ok(1.0 / self.s[p])
    }

    /// Largest ratio `max/min` of `s_k / (C * shape(k))` on `[K/2, K]`.
    pub fn tail_spread(&self) -> f64 {
        let lo = (self.k_max / 2).max(1);
        let (mut mn, mut mx) = (f64::INFINITY, 0.0f64);
        for k in lo..=self.k_max {
            let r = self.s[k] / (self.tail_constant * tail_shape(&self.params, k as f64));
            mn = mn.min(r);
            mx = mx.max(r);
        }
        mx / mn
    }
}
