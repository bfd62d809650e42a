//! Exact mean gasket volume, mean child counts and the expected total volume.
//!
//! For the nonpointed excursion law (pointed walk reweighted by `1/(1+L_p)`),
//! the cycle lemma with a tilt `t^L` and the substitution `t -> f_t` (root of
//! `f = t mu(0) + sum_{k>=1} mu(k) f^k`) give
//!
//! * `E[1 + L_p] = mu(0) (p+1) / D(p)`, `D(p) = sum_{k>=2} k(k-1) mu(k) / (p+k)`;
//! * `E[#{children of size q}] = E[1 + L_p] p mu~(q) / (mu(0) (p+q))`,
//!   with `mu~(2) = (1-a) mu(2)` after degree-4 thinning.
//!
//! The expected volume is the minimal solution of
//! `V(p) = Vg(p) + sum_q m(p,q) V(q)`.

use serde::{Deserialize, Serialize};

use super::offspring::OffspringLaw;
use super::table::{tail_shape, PartitionTable};
use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate};

/// Exact first-moment quantities of one generation.
#[derive(Debug, Clone)]
pub struct GenerationMeans<'a> {
    law: &'a OffspringLaw,
}

impl<'a> GenerationMeans<'a> {
    pub fn new(law: &'a OffspringLaw) -> Self {
        GenerationMeans { law }
    }

    /// `D(p) = sum_{k>=2} k(k-1) mu(k) / (p+k)` (head exact, tail by quadrature).
    pub fn d(&self, p: f64) -> f64 {
        let l = self.law;
        let mut acc = 0.0;
        let mut comp = 0.0;
        for (k, &m) in l.pmf.iter().enumerate().skip(2) {
            let kf = k as f64;
            let term = kf * (kf - 1.0) * m / (p + kf) - comp;
            let t = acc + term;
            comp = (t - acc) - term;
            acc = t;
        }
        acc + l.tail_scale * tail_integral(l, |x| x * (x - 1.0) / (p + x))
    }

    /// Mean gasket vertex count `E[1 + L_p]` under the nonpointed law.
    pub fn gasket(&self, p: f64) -> f64 {
        self.law.pmf[0] * (p + 1.0) / self.d(p)
    }

    /// `mu(q)` with the degree-4 thinning applied.
    pub fn thinned_pmf(&self, q: u64) -> f64 {
        let m = self.law.pmf_at(q);
        if q == 2 {
            m * (1.0 - self.law.thinning())
        } else {
            m
        }
    }

    /// Mean number of children with half-perimeter `q`.
    pub fn child_mean(&self, p: u64, q: u64) -> f64 {
        let (pf, qf) = (p as f64, q as f64);
        self.gasket(pf) * pf * self.thinned_pmf(q) / (self.law.pmf[0] * (pf + qf))
    }

    /// `sum_{q <= q_max} m(p, q) f(q)`.
    pub fn child_sum<F: Fn(u64) -> f64>(&self, p: u64, q_max: u64, f: F) -> f64 {
        let pf = p as f64;
        let scale = self.gasket(pf) * pf / self.law.pmf[0];
        scale * (1..=q_max).map(|q| self.thinned_pmf(q) * f(q) / (pf + q as f64)).sum::<f64>()
    }
}

/// `int_{start}^inf tail(x) f(x) dx` for the (unscaled) tail surrogate.
fn tail_integral<F: Fn(f64) -> f64>(law: &OffspringLaw, f: F) -> f64 {
    let s = law.tail.start;
    integrate(
        |t: f64| {
            let x = s * t.exp();
            x * law.tail.density(x) * f(x)
        },
        0.0,
        200.0,
        1e-300,
        1e-11,
    )
    .map(|v| v.0)
    .unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMethod {
    /// `1 / s_p` (exact at `n = 2`).
    Coefficient,
    /// Minimal solution of the mean-volume equation.
    Solved,
}

/// Expected volume on a grid (integers up to `exact_max`, geometric beyond).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpectedVolume {
    pub theta: f64,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub gasket: Vec<f64>,
    pub method: VolumeMethod,
    #[serde(skip)]
    coefficient: Option<Vec<f64>>,
}

/// Grid and solver settings.
#[derive(Debug, Clone, Copy)]
pub struct VolumeGrid {
    pub exact_max: usize,
    pub ratio: f64,
    pub q_max: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for VolumeGrid {
    fn default() -> Self {
        VolumeGrid { exact_max: 512, ratio: 1.03, q_max: 1e13, tol: 1e-12, max_iter: 200_000 }
    }
}

fn build_nodes(grid: &VolumeGrid) -> Vec<f64> {
    let mut nodes: Vec<f64> = (1..=grid.exact_max).map(|q| q as f64).collect();
    let mut x = grid.exact_max as f64;
    while x < grid.q_max {
        x *= grid.ratio;
        nodes.push(x.round().max(nodes.last().unwrap() + 1.0));
    }
    nodes
}

/// Solve the mean-volume equation on a grid.
pub fn solve_expected_volume(law: &OffspringLaw, grid: VolumeGrid) -> Result<ExpectedVolume> {
    let params = &law.params;
    let theta = params.theta_alpha;
    let nodes = build_nodes(&grid);
    let n = nodes.len();
    let gm = GenerationMeans::new(law);
    let mu0 = law.pmf[0];
    let k_max = law.k_max;
    let gasket: Vec<f64> = nodes.iter().map(|&p| gm.gasket(p)).collect();

    // Interpolation data for integer q <= K_max: V(q) = q^theta [a V_j/q_j^theta + b V_{j+1}/q_{j+1}^theta].
    let q_hi = k_max.min(*nodes.last().unwrap() as usize);
    let mut interp: Vec<(usize, f64, f64)> = Vec::with_capacity(q_hi);
    let mut j = 0usize;
    for q in 1..=q_hi {
        let qf = q as f64;
        while j + 1 < n && nodes[j + 1] <= qf {
            j += 1;
        }
        if nodes[j] == qf || j + 1 == n {
            interp.push((j, (qf / nodes[j]).powf(theta), 0.0));
        } else {
            let lam = (qf / nodes[j]).ln() / (nodes[j + 1] / nodes[j]).ln();
            interp.push((
                j,
                (1.0 - lam) * (qf / nodes[j]).powf(theta),
                lam * (qf / nodes[j + 1]).powf(theta),
            ));
        }
    }
    let weights: Vec<f64> = (1..=q_hi as u64).map(|q| gm.thinned_pmf(q)).collect();

    // Tail bins beyond K_max: Gauss-Legendre in ln x on each node interval.
    let (gx, gw) = gauss_legendre(8);
    let mut tail_pts: Vec<(usize, f64, f64, f64)> = Vec::new(); // (j, x, weight*density, lam)
    let x_start = law.tail.start;
    for jn in 0..n - 1 {
        let (a, b) = (nodes[jn].max(x_start), nodes[jn + 1]);
        if b <= a {
            continue;
        }
        let (la, lb) = (a.ln(), b.ln());
        for (xi, wi) in gx.iter().zip(&gw) {
            let lx = 0.5 * (la + lb) + 0.5 * (lb - la) * xi;
            let x = lx.exp();
            let dens = law.tail_scale * law.tail.density(x);
            let lam = (x / nodes[jn]).ln() / (nodes[jn + 1] / nodes[jn]).ln();
            tail_pts.push((jn, x, 0.5 * (lb - la) * wi * x * dens, lam));
        }
    }
    let q_last = nodes[n - 1];

    let mut mat = vec![vec![0.0; n]; n];
    for i in 0..n {
        let p = nodes[i];
        let row = &mut mat[i];
        for (q, (&(jj, a, b), &w)) in interp.iter().zip(&weights).enumerate() {
            let c = w / (p + (q + 1) as f64);
            row[jj] += c * a;
            if b != 0.0 {
                row[jj + 1] += c * b;
            }
        }
        for &(jj, x, wd, lam) in &tail_pts {
            let c = wd / (p + x);
            row[jj] += c * (1.0 - lam) * (x / nodes[jj]).powf(theta);
            row[jj + 1] += c * lam * (x / nodes[jj + 1]).powf(theta);
        }
        // closure beyond the last node: V(q) = V_last (q/q_last)^theta
        let beyond = law.tail_scale
            * tail_integral_from(law, q_last, |x| (x / q_last).powf(theta) / (p + x));
        row[n - 1] += beyond;
        let scale = gasket[i] * p / mu0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    // Monotone generation expansion V = sum_j K^j Vg; the truncated operator
    // is nearly singular, so a direct solve does not select the minimal solution.
    let mut values = gasket.clone();
    let mut term = gasket.clone();
    let mut next = vec![0.0; n];
    let mut iterations = 0usize;
    loop {
        for (i, out) in next.iter_mut().enumerate() {
            *out = mat[i].iter().zip(&term).map(|(k, v)| k * v).sum();
        }
        std::mem::swap(&mut term, &mut next);
        let mut worst = 0.0f64;
        for (v, t) in values.iter_mut().zip(&term) {
            *v += t;
            worst = worst.max(t / *v);
        }
        iterations += 1;
        if worst < grid.tol || iterations >= grid.max_iter {
            break;
        }
    }
    log::debug!("mean-volume expansion: {iterations} generations");
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::QuadratureNonConvergence(
            "mean-volume expansion did not stay positive".into(),
        ));
    }
    Ok(ExpectedVolume { theta, nodes, values, gasket, method: VolumeMethod::Solved, coefficient: None })
}

fn tail_integral_from<F: Fn(f64) -> f64>(law: &OffspringLaw, from: f64, f: F) -> f64 {
    integrate(
        |t: f64| {
            let x = from * t.exp();
            x * law.tail.density(x) * f(x)
        },
        0.0,
        200.0,
        1e-300,
        1e-10,
    )
    .map(|v| v.0)
    .unwrap_or(0.0)
}

impl ExpectedVolume {
    /// Build the table used downstream: `1/s_p` at `n = 2` (extended beyond
    /// `K_max` by the fitted coefficient asymptotics), the minimal solution of
    /// the mean-volume equation otherwise.
    pub fn for_law(law: &OffspringLaw, table: &PartitionTable) -> Result<Self> {
        if law.params.is_o2() {
            let gm = GenerationMeans::new(law);
            let nodes = build_nodes(&VolumeGrid::default());
            let gasket = nodes.iter().map(|&p| gm.gasket(p)).collect();
            let values = nodes
                .iter()
                .map(|&p| {
                    if (p as usize) <= table.k_max {
                        1.0 / table.s[p as usize]
                    } else {
                        1.0 / (table.tail_constant * tail_shape(&law.params, p))
                    }
                })
                .collect();
            return Ok(ExpectedVolume {
                theta: law.params.theta_alpha,
                nodes,
                values,
                gasket,
                method: VolumeMethod::Coefficient,
                coefficient: Some(table.s.iter().map(|s| 1.0 / s).collect()),
            });
        }
        solve_expected_volume(law, VolumeGrid::default())
    }

    /// `V(p)` for any real `p > 0` (interpolating `V/p^theta` in `ln p`).
    pub fn vbar(&self, p: f64) -> f64 {
        if let Some(c) = &self.coefficient {
            let r = p.round();
            if (p - r).abs() < 1e-9 && r >= 1.0 && (r as usize) < c.len() {
                return c[r as usize];
            }
        }
        interp_power(&self.nodes, &self.values, self.theta, p)
    }

    /// Mean gasket volume `E[1 + L_p]` on the same grid.
    pub fn gasket_mean(&self, p: f64) -> f64 {
        interp_power(&self.nodes, &self.gasket, 1.5, p)
    }

    /// Fitted exponent of `V(p)` by least squares of `ln V` on `ln p` over `[lo, hi]`.
    pub fn exponent(&self, lo: f64, hi: f64) -> Option<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .nodes
            .iter()
            .zip(&self.values)
            .filter(|(p, _)| **p >= lo && **p <= hi)
            .map(|(p, v)| (p.ln(), v.ln()))
            .unzip();
        crate::fit::linear_fit(&x, &y).map(|f| f.slope)
    }
}

fn interp_power(nodes: &[f64], vals: &[f64], theta: f64, p: f64) -> f64 {
    let n = nodes.len();
    if p <= nodes[0] {
        return vals[0] * (p / nodes[0]).powf(theta);
    }
    if p >= nodes[n - 1] {
        return vals[n - 1] * (p / nodes[n - 1]).powf(theta);
    }
    let j = nodes.partition_point(|&x| x <= p) - 1;
    if nodes[j] == p {
        return vals[j];
    }
    let lam = (p / nodes[j]).ln() / (nodes[j + 1] / nodes[j]).ln();
    let a = vals[j] / nodes[j].powf(theta);
    let b = vals[j + 1] / nodes[j + 1].powf(theta);
    p.powf(theta) * ((1.0 - lam) * a + lam * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{derive_params, Selector};
    use crate::partition::{fk_table, offspring_law};
    use std::f64::consts::PI;

    fn law(n: f64, sel: Selector, k: usize) -> (OffspringLaw, PartitionTable) {
        let p = derive_params(n, sel).unwrap();
        let t = fk_table(&p, k, PartitionTable::default_method(&p)).unwrap();
        (offspring_law(&t).unwrap(), t)
    }

    // The reciprocal coefficients satisfy the one-generation equation exactly at n = 2.
    #[test]
    fn reciprocal_coefficients_solve_the_equation_at_n2() {
        for h in [4.0 / (3.0 * PI * PI), 1.7 / (PI * PI)] {
            let (l, t) = law(2.0, Selector::O2 { h }, 40_000);
            let gm = GenerationMeans::new(&l);
            for p in [1u64, 3, 17, 60] {
                // sum_q m(p,q)/s_q with m(p,q)/s_q = Vg p n h c_q/(mu0 (p+q)); the
                // tail of c_q/(p+q) is summed from its asymptotic expansion
                let c = crate::partition::central_factors(t.k_max);
                let mut acc = 0.0;
                for q in 1..=t.k_max {
                    acc += c[q] / (p as f64 + q as f64);
                }
                let qf = t.k_max as f64 + 0.5;
                let f = |x: f64| 2.0 / (PI * x).sqrt() * (1.0 - 1.0 / (8.0 * x)) / (p as f64 + x);
                let (tail, _) = crate::quad::integrate(|u: f64| qf * u.exp() * f(qf * u.exp()), 0.0, 80.0, 1e-16, 1e-12).unwrap();
                acc += tail;
                let vg = gm.gasket(p as f64);
                let rhs = vg * (1.0 + p as f64 * 2.0 * l.params.h * acc / l.pmf[0]);
                let lhs = 1.0 / t.s[p as usize];
                assert!((rhs / lhs - 1.0).abs() < 1e-7, "h={h} p={p} {lhs} {rhs}");
            }
        }
    }

    #[test]
    fn expansion_reproduces_exact_volume_at_n2() {
        let (l, t) = law(2.0, Selector::O2 { h: 4.0 / (3.0 * PI * PI) }, 20_000);
        let grid = VolumeGrid { q_max: 1e10, ..VolumeGrid::default() };
        let ev = solve_expected_volume(&l, grid).unwrap();
        for p in [1usize, 5, 40, 300, 2000] {
            let rel = ev.vbar(p as f64) * t.s[p] - 1.0;
            assert!(rel.abs() < 1e-6, "p={p} rel={rel}");
        }
    }

    #[test]
    fn volume_exponent_below_n2() {
        for (n, sel) in [(1.0, Selector::Dilute), (2f64.sqrt(), Selector::Dilute)] {
            let (l, t) = law(n, sel, 20_000);
            let ev = ExpectedVolume::for_law(&l, &t).unwrap();
            let e = ev.exponent(1e4, 1e8).unwrap();
            assert!((e - l.params.theta_alpha).abs() < 0.01, "n={n} exponent {e}");
            // the reciprocal coefficient grows strictly faster
            assert!(1.0 / t.s[10_000] > 5.0 * ev.vbar(10_000.0));
        }
    }

    #[test]
    fn gasket_mean_grows_like_p_alpha() {
        let (l, _) = law(1.0, Selector::Dilute, 20_000);
        let gm = GenerationMeans::new(&l);
        let slope = (gm.gasket(4e5) / gm.gasket(4e4)).ln() / 10f64.ln();
        assert!((slope - l.params.alpha).abs() < 0.02, "slope {slope}");
    }
}
