//! The offspring law `mu_JS`: exact head up to `K_max`, fitted analytic tail.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::table::PartitionTable;
use crate::error::{Error, Result};
use crate::fit::least_squares;
use crate::params::{CaseTag, CriticalParams};
use crate::quad::integrate;

/// Tolerance on the mean before the table is rejected.
pub const CRITICALITY_TOL: f64 = 1e-4;

/// `C(2k-1, k-1) 4^{1-k}` for `k = 0..=k_max` (entry 0 unused), by the
/// ratio recurrence `c_{k+1} = c_k (2k+1) / (2k+2)`.
pub fn central_factors(k_max: usize) -> Vec<f64> {
    let mut c = vec![0.0; k_max + 1];
    if k_max >= 1 {
        c[1] = 1.0;
    }
    for k in 1..k_max {
        let kf = k as f64;
        c[k + 1] = c[k] * (2.0 * kf + 1.0) / (2.0 * kf + 2.0);
    }
    c
}

/// One term `coef * x^{-power} (ln x)^{log}` of the tail density.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailTerm {
    pub coef: f64,
    pub power: f64,
    pub log: bool,
}

impl TailTerm {
    fn eval(&self, x: f64) -> f64 {
        let v = self.coef * x.powf(-self.power);
        if self.log {
            v * x.ln()
        } else {
            v
        }
    }

    /// `int_X^inf x^{shift} term(x) dx`.
    fn integral_from(&self, x0: f64, shift: f64) -> f64 {
        let a = self.power - shift - 1.0;
        let base = self.coef * x0.powf(-a);
        if self.log {
            base * (x0.ln() / a + 1.0 / (a * a))
        } else {
            base / a
        }
    }
}

/// Continuous surrogate for `mu_JS(k)`, `k > K_max`, on `[K_max + 1/2, inf)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailModel {
    pub start: f64,
    pub terms: Vec<TailTerm>,
    pub envelope_shape: f64,
    pub envelope_bound: f64,
}

impl TailModel {
    pub fn density(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum::<f64>().max(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.terms.iter().map(|t| t.integral_from(self.start, 0.0)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.terms.iter().map(|t| t.integral_from(self.start, 1.0)).sum()
    }

    fn ratio(&self, x: f64) -> f64 {
        self.density(x) * x.powf(self.envelope_shape + 1.0)
    }

    /// Pareto-envelope rejection draw, rounded to the nearest integer.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            let x = self.start * u.powf(-1.0 / self.envelope_shape);
            let v: f64 = rng.random();
            if v * self.envelope_bound <= self.ratio(x) {
                let k = x.round();
                return if k >= u64::MAX as f64 { u64::MAX } else { k as u64 };
            }
        }
    }
}

fn fit_tail(params: &CriticalParams, pmf: &[f64]) -> Result<TailModel> {
    let k_max = pmf.len() - 1;
    let alpha = params.alpha;
    // (power, log) pairs for the basis in units of k^{-(alpha+1)}
    let basis: Vec<(f64, bool)> = if params.is_o2() {
        vec![(0.0, true), (0.0, false), (1.0, true), (1.0, false)]
    } else {
        let b = params.b;
        let delta = if params.alpha > 1.5 { 1.0 - 2.0 * b } else { 2.0 * b };
        vec![(0.0, false), (delta, false), (1.0, false)]
    };
    let lo = (k_max / 10).max(8);
    if lo + 2 * basis.len() > k_max {
        return Err(Error::InvalidArgument(format!("K_max = {k_max} too small for a tail fit")));
    }
    let npts = 400.min(k_max - lo);
    let (l0, l1) = ((lo as f64).ln(), (k_max as f64).ln());
    let mut ks: Vec<usize> = (0..=npts)
        .map(|i| (l0 + (l1 - l0) * i as f64 / npts as f64).exp().round() as usize)
        .collect();
    ks.dedup();
    let rows: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| {
            let kf = k as f64;
            basis
                .iter()
                .map(|&(p, l)| kf.powf(-p) * if l { kf.ln() } else { 1.0 })
                .collect()
        })
        .collect();
    let y: Vec<f64> = ks.iter().map(|&k| pmf[k] * (k as f64).powf(alpha + 1.0)).collect();
    let coef = least_squares(&rows, &y)
        .ok_or_else(|| Error::InvalidArgument("singular tail fit".into()))?;
    let terms: Vec<TailTerm> = basis
        .iter()
        .zip(&coef)
        .map(|(&(p, l), &c)| TailTerm { coef: c, power: alpha + 1.0 + p, log: l })
        .collect();
    let has_log = params.case_tag == CaseTag::B;
    let envelope_shape = if has_log { alpha - 0.05 } else { alpha };
    let start = k_max as f64 + 0.5;
    let mut model = TailModel { start, terms, envelope_shape, envelope_bound: 0.0 };
    let mut sup = 0.0f64;
    for i in 0..=4000 {
        let x = start * (i as f64 * 0.05).exp();
        sup = sup.max(model.ratio(x));
    }
    if !(sup > 0.0) {
        return Err(Error::InvalidArgument("tail model is not positive".into()));
    }
    model.envelope_bound = 1.05 * sup;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct OffspringLaw {
    pub params: CriticalParams,
    pub k_max: usize,
    /// `mu_JS(k)` for `k = 0..=K_max` after renormalization.
    pub pmf: Vec<f64>,
    pub head_mass: f64,
    pub tail: TailModel,
    /// Factor applied to the tail surrogate after renormalization.
    pub tail_scale: f64,
    /// Mean (exact head + analytic tail) before renormalization.
    pub mean: f64,
    /// Total mass before renormalization minus one.
    pub mass_residual: f64,
    /// `1 + sum_k C(2k-1,k-1) ghat_k (4h)^{-k} - 1/(4h)` before renormalization.
    pub fixed_point_residual: f64,
    /// `ghat_2 = g + n h^2 s_2`.
    pub ghat2: f64,
    alias: WeightedAliasIndex<f64>,
}

/// Build `mu_JS` from a coefficient table.
pub fn offspring_law(table: &PartitionTable) -> Result<OffspringLaw> {
    let params = &table.params;
    let k_max = table.k_max;
    let (n, h, g) = (params.n, params.h, params.g);
    let c = central_factors(k_max);
    let mut pmf = vec![0.0; k_max + 1];
    pmf[0] = 4.0 * h;
    for k in 1..=k_max {
        pmf[k] = c[k] * n * h * table.s[k];
    }
    if k_max >= 2 {
        pmf[2] += c[2] * g / h;
    }
    let tail = fit_tail(params, &pmf)?;
    let head_pos: f64 = pmf[1..].iter().sum();
    let head_mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let mass = pmf[0] + head_pos + tail.mass();
    let mean = head_mean + tail.mean();
    let mass_residual = mass - 1.0;
    let fixed_point_residual = mass_residual / (4.0 * h);
    let dev = (mean - 1.0).abs();
    if !(dev <= CRITICALITY_TOL) {
        return Err(Error::CriticalityViolation { mean, dev });
    }
    let scale = (1.0 - pmf[0]) / (head_pos + tail.mass());
    for p in pmf[1..].iter_mut() {
        *p *= scale;
    }
    let head_mass: f64 = pmf.iter().sum();
    // the tail is one extra category of the alias table
    let mut weights = pmf.clone();
    weights.push(scale * tail.mass());
    let alias = WeightedAliasIndex::new(weights)
        .map_err(|e| Error::InvalidArgument(format!("alias table: {e}")))?;
    let ghat2 = g + n * h * h * table.s[2];
    Ok(OffspringLaw {
        params: params.clone(),
        k_max,
        pmf,
        head_mass,
        tail,
        tail_scale: scale,
        mean,
        mass_residual,
        fixed_point_residual,
        ghat2,
        alias,
    })
}

impl OffspringLaw {
    /// Draw `K ~ mu_JS`.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let i = self.alias.sample(rng);
        if i <= self.k_max {
            i as u64
        } else {
            self.tail.sample(rng)
        }
    }

    /// Mass of the analytic tail after renormalization.
    pub fn tail_mass(&self) -> f64 {
        self.tail_scale * self.tail.mass()
    }

    /// `mu_JS(k)`, using the tail surrogate beyond the head.
    pub fn pmf_at(&self, k: u64) -> f64 {
        if (k as usize) <= self.k_max && (k as u128) <= usize::MAX as u128 {
            self.pmf[k as usize]
        } else {
            self.tail_scale * self.tail.density(k as f64)
        }
    }

    /// Mean after renormalization.
    pub fn renormalized_mean(&self) -> f64 {
        let head: f64 = self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        head + self.tail_scale * self.tail.mean()
    }

    /// Degree-4 thinning probability `a = g / ghat_2`.
    pub fn thinning(&self) -> f64 {
        if self.ghat2 > 0.0 {
            self.params.g / self.ghat2
        } else {
            0.0
        }
    }

    /// `E[F(K)]` for a bounded `F`: exact over the head, quadrature over the
    /// tail surrogate.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let head: f64 = self.pmf.iter().enumerate().map(|(k, p)| p * f(k as f64)).sum();
        // x = start e^t
        let s = self.tail.start;
        let integrand = |t: f64| {
            let x = s * t.exp();
            x * self.tail.density(x) * f(x)
        };
        let (tail, _) = integrate(integrand, 0.0, 200.0, 1e-15, 1e-10)?;
        Ok(head + self.tail_scale * tail)
    }

    /// Tail exponent in `mu_JS(k) ~ k^{-(alpha+1)}`.
    pub fn tail_exponent(&self) -> f64 {
        self.params.alpha + 1.0
    }
}
