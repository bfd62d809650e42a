//! Deterministic identity checks on a coefficient table and its offspring law.

use serde::Serialize;
use std::f64::consts::PI;

use super::density::Spectral;
use super::offspring::OffspringLaw;
use super::table::PartitionTable;
use crate::error::Result;
use crate::fit::linear_fit;
use crate::params::{CaseTag, CriticalParams};
use crate::quad::integrate;
use crate::special::ln_binomial;

/// `C(2m-1, m-1) 4^{1-m}` for real `m` from its asymptotic expansion.
fn central_factor_asym(m: f64) -> f64 {
    2.0 / (PI * m).sqrt() * (1.0 - 1.0 / (8.0 * m) + 1.0 / (128.0 * m * m) + 5.0 / (1024.0 * m * m * m))
}

/// `h_up(m) = 2m 4^{-m} C(2m, m)`.
pub fn h_up(m: u64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let mf = m as f64;
    if m < 1000 {
        (mf.ln() + std::f64::consts::LN_2 - 2.0 * mf * std::f64::consts::LN_2 + ln_binomial(2.0 * mf, mf)).exp()
    } else {
        mf * central_factor_asym(mf)
    }
}

fn h_up_real(y: f64) -> f64 {
    y * central_factor_asym(y)
}

/// The step law `nu` of the walk attached to the weight sequence.
#[derive(Debug, Clone)]
pub struct StepLaw<'a> {
    table: &'a PartitionTable,
    law: &'a OffspringLaw,
}

impl<'a> StepLaw<'a> {
    pub fn new(table: &'a PartitionTable, law: &'a OffspringLaw) -> Self {
        StepLaw { table, law }
    }

    fn params(&self) -> &CriticalParams {
        &self.table.params
    }

    /// `nu(k)`; `k >= 0` uses `ghat_{k+1} gamma^{2k}`, `k <= -1` uses `2 F_{-k-1} gamma^{2k}`.
    pub fn nu(&self, k: i64) -> f64 {
        let p = self.params();
        if k >= 0 {
            let j = (k + 1) as usize;
            let g = if k == 1 { p.g_over_h() } else { 0.0 };
            if j <= self.table.k_max {
                g + p.n * p.h * self.table.s[j]
            } else {
                self.law.tail.density(j as f64) / central_factor_asym(j as f64)
            }
        } else {
            let j = (-k - 1) as usize;
            if j <= self.table.k_max {
                2.0 * p.h * self.table.s[j]
            } else {
                2.0 * self.law.tail.density(j as f64) / (p.n * central_factor_asym(j as f64))
            }
        }
    }

    /// `int_{K+1/2}^inf f(x) mu_tail(x) / c(x) dx`.
    fn tail<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let x0 = self.law.tail.start;
        let tail = &self.law.tail;
        integrate(
            |t: f64| {
                let x = x0 * t.exp();
                x * tail.density(x) / central_factor_asym(x) * f(x)
            },
            0.0,
            120.0,
            1e-300,
            1e-12,
        )
        .map(|v| v.0)
    }

    /// `(sum_{k >= 0} nu(k), sum_{k <= -1} nu(k))`.
    pub fn masses(&self) -> Result<(f64, f64)> {
        let p = self.params();
        let s = &self.table.s;
        let head_pos: f64 = p.g_over_h() + p.n * p.h * kahan(s[1..].iter().copied());
        let head_neg: f64 = 2.0 * p.h * kahan(s.iter().copied());
        let tail = self.tail(|_| 1.0)?;
        Ok((head_pos + tail, head_neg + 2.0 * tail / p.n))
    }

    /// Total mass of `nu`.
    pub fn total(&self) -> Result<f64> {
        let (a, b) = self.masses()?;
        Ok(a + b)
    }

    /// `|sum_k h_up(l+k) nu(k) - h_up(l)| / h_up(l)` and the size of the
    /// analytic tail contribution.
    pub fn harmonicity(&self, l: u64) -> Result<(f64, f64)> {
        let p = self.params();
        let s = &self.table.s;
        let k_max = self.table.k_max;
        let mut terms = Vec::with_capacity(k_max + l as usize);
        // k = -l+1 ..= -1: nu(k) = 2 h s_{-k-1}
        for j in 0..(l.saturating_sub(1)) {
            terms.push(h_up(l - j - 1) * 2.0 * p.h * s[j as usize]);
        }
        // k = 0 ..= K-1: nu(k) = G delta_{k1} + n h s_{k+1}
        for k in 0..k_max as u64 {
            let j = (k + 1) as usize;
            let g = if k == 1 { p.g_over_h() } else { 0.0 };
            let hv = if (l + k) < 1000 { h_up(l + k) } else { h_up_real((l + k) as f64) };
            terms.push(hv * (g + p.n * p.h * s[j]));
        }
        let head = kahan(terms.into_iter());
        let lf = l as f64;
        let tail = self.tail(|x| h_up_real(lf + x - 1.0))?;
        let target = h_up(l);
        Ok((((head + tail) - target).abs() / target, tail / target))
    }
}

fn kahan<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in it {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// `n h^2 int rho(u) u^2 (1 - h u^2)^{-3/2} du` and `1 - (3/2) g / h`
/// (the mean-one condition written through the spectral density).
pub fn criticality_integral(params: &CriticalParams) -> Result<(f64, f64)> {
    let spec = Spectral::new(params);
    let gam = params.gamma;
    // u = gamma cos(psi) on the half line (the integrand is even); the edge
    // distance 1 - cos(psi) = 2 sin^2(psi/2) is passed exactly
    let f = |psi: f64| {
        let (sn, cs) = psi.sin_cos();
        if sn <= 0.0 {
            return 0.0;
        }
        let t = 2.0 * (0.5 * psi).sin().powi(2);
        spec.rho_edge(t) * cs * cs / (sn * sn)
    };
    let (half, _) = integrate(f, 0.0, 0.5 * PI, 1e-11, 1e-10)?;
    let lhs = 2.0 * params.n * params.h * params.h * gam.powi(3) * half;
    let rhs = 1.0 - 1.5 * params.g_over_h();
    Ok((lhs, rhs))
}

/// Largest relative deviation of `V(k) mu(k)` from `h C(2k,k) 4^{1-k}` over
/// `k in ks`, with `V = 1/s_k` and the unrenormalized law.
pub fn volume_weight_identity(table: &PartitionTable, law: &OffspringLaw, ks: std::ops::RangeInclusive<usize>) -> f64 {
    let h = table.params.h;
    ks.filter(|&k| k <= table.k_max)
        .map(|k| {
            let kf = k as f64;
            let raw = law.pmf[k] / law.tail_scale;
            let lhs = raw / table.s[k];
            let rhs = h * (ln_binomial(2.0 * kf, kf) + (1.0 - kf) * 4f64.ln()).exp();
            (lhs / rhs - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Tail diagnostics of `mu_JS` on `[K/4, K]`.
#[derive(Debug, Clone, Serialize)]
pub struct TailCheck {
    /// Log-log slope (case A target `-(alpha+1)`).
    pub slope: f64,
    /// `max/min` of `mu(k) k^{5/2} / ln k` (case B).
    pub log_spread: f64,
    pub pass: bool,
}

pub fn tail_check(law: &OffspringLaw) -> TailCheck {
    let k_max = law.k_max;
    let lo = (k_max / 4).max(2);
    let ks: Vec<usize> = (0..200)
        .map(|i| ((lo as f64).ln() + ((k_max as f64).ln() - (lo as f64).ln()) * i as f64 / 199.0).exp() as usize)
        .map(|k| k.clamp(lo, k_max))
        .collect();
    let x: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let y: Vec<f64> = ks.iter().map(|&k| law.pmf[k].ln()).collect();
    let slope = linear_fit(&x, &y).map(|f| f.slope).unwrap_or(f64::NAN);
    let (mut mn, mut mx) = (f64::INFINITY, 0.0f64);
    for &k in &ks {
        let kf = k as f64;
        let r = law.pmf[k] * kf.powf(2.5) / kf.ln();
        mn = mn.min(r);
        mx = mx.max(r);
    }
    let log_spread = mx / mn;
    let pass = match law.params.case_tag {
        CaseTag::A => (slope + law.params.alpha + 1.0).abs() <= 0.05,
        CaseTag::B => log_spread <= 1.5,
    };
    TailCheck { slope, log_spread, pass }
}

/// One row of the identity report.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityRow {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        IdentityRow { name: name.into(), value, tolerance, pass: value.abs() <= tolerance }
    }
}

/// All deterministic checks for one parameter point.
pub fn identity_report(table: &PartitionTable, law: &OffspringLaw, l_max: u64) -> Result<Vec<IdentityRow>> {
    let p = &table.params;
    let nu = StepLaw::new(table, law);
    let mut rows = vec![IdentityRow::new("nu_mass", nu.total()? - 1.0, 1e-8)];
    for l in 1..=l_max {
        let (r, _) = nu.harmonicity(l)?;
        rows.push(IdentityRow::new(format!("harmonicity_{l}"), r, if l == 1 { 1e-6 } else { 1e-5 }));
    }
    let (lhs, rhs) = criticality_integral(p)?;
    rows.push(IdentityRow::new("criticality_integral", lhs - rhs, 1e-7));
    rows.push(IdentityRow::new("fixed_point", law.fixed_point_residual, 1e-6));
    rows.push(IdentityRow::new("mujs_mean", law.mean - 1.0, 1e-6));
    rows.push(IdentityRow::new("mujs_zero", law.pmf[0] - 4.0 * p.h, 1e-12));
    if p.is_o2() {
        rows.push(IdentityRow::new("volume_weight", volume_weight_identity(table, law, 3..=50), 1e-12));
    }
    let tc = tail_check(law);
    match p.case_tag {
        CaseTag::A => rows.push(IdentityRow::new("tail_slope", tc.slope + p.alpha + 1.0, 0.05)),
        CaseTag::B => rows.push(IdentityRow::new("tail_log_spread", tc.log_spread - 1.0, 0.5)),
    }
    Ok(rows)
}
