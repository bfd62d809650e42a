//! The spine chain `S` (half-perimeters of the loops around a uniform
//! vertex), its kernel, the limiting walk `Y`, renewal and hitting estimates,
//! the `S`-`Y` coupling and occupation profiles.
//!
//! With `f(r) = mu~(r) V(r)` the kernel is
//! `P_p(S_1 = r) = C(p) f(r) / (p + r)`, `C(p) = E[1 + L_p] p / (mu(0) V(p))`,
//! and `P_p(S_1 = 0) = E[1 + L_p] / V(p)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::cascade_discrete::Estimate;
use crate::error::{Error, Result};
use crate::fit::Pchip;
use crate::partition::{ExpectedVolume, GenerationMeans, OffspringLaw};
use crate::quad::gauss_legendre;
use crate::rng::{mix_seed, stream};
use crate::walk::{children_into, ChildSet, WalkConfig, WalkMode};

/// States above this are binned geometrically in the caches.
pub const EXACT_STATE_MAX: u64 = 1024;
const CDF_STATE_RATIO: f64 = 1.01;
const TAIL_RATIO: f64 = 1.05;
const TAIL_END: f64 = 1e16;

/// Piecewise power-law representation of `f` beyond the exact head.
#[derive(Debug, Clone)]
struct TailBins {
    edges: Vec<f64>,
    /// Cumulative `int f(x) x^{-k} dx` up to each edge, for `k = 0, 1`.
    cum: [Vec<f64>; 2],
    /// Local exponent of `f` in each bin.
    beta: Vec<f64>,
}

fn bin_fraction(a: f64, b: f64, g: f64, y: f64) -> f64 {
    if (g + 1.0).abs() < 1e-9 {
        (y / a).ln() / (b / a).ln()
    } else {
        let e = g + 1.0;
        ((y / a).powf(e) - 1.0) / ((b / a).powf(e) - 1.0)
    }
}

fn bin_inverse(a: f64, b: f64, g: f64, frac: f64) -> f64 {
    if (g + 1.0).abs() < 1e-9 {
        a * (b / a).powf(frac)
    } else {
        let e = g + 1.0;
        a * (1.0 + frac * ((b / a).powf(e) - 1.0)).powf(1.0 / e)
    }
}

impl TailBins {
    fn new<F: Fn(f64) -> f64>(start: f64, f: F) -> TailBins {
        let (gx, gw) = gauss_legendre(8);
        let mut edges = vec![start];
        while *edges.last().unwrap() < TAIL_END {
            let e = edges.last().unwrap() * TAIL_RATIO;
            edges.push(e);
        }
        let mut cum = [vec![0.0], vec![0.0]];
        let mut beta = Vec::with_capacity(edges.len());
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (mut m0, mut m1) = (0.0, 0.0);
            for (t, wt) in gx.iter().zip(&gw) {
                let x = 0.5 * (a + b) + 0.5 * (b - a) * t;
                let v = 0.5 * (b - a) * wt * f(x);
                m0 += v;
                m1 += v / x;
            }
            cum[0].push(cum[0].last().unwrap() + m0);
            cum[1].push(cum[1].last().unwrap() + m1);
            let (fa, fb) = (f(a), f(b));
            beta.push(if fa > 0.0 && fb > 0.0 { (fb / fa).ln() / (b / a).ln() } else { -2.0 });
        }
        TailBins { edges, cum, beta }
    }

    fn total(&self, k: usize) -> f64 {
        *self.cum[k].last().unwrap()
    }

    /// `int_start^y f(x) x^{-k} dx`.
    fn cum_to(&self, k: usize, y: f64) -> f64 {
        if y <= self.edges[0] {
            return 0.0;
        }
        if y >= *self.edges.last().unwrap() {
            return self.total(k);
        }
        let j = self.edges.partition_point(|&e| e <= y) - 1;
        let (a, b) = (self.edges[j], self.edges[j + 1]);
        let mass = self.cum[k][j + 1] - self.cum[k][j];
        self.cum[k][j] + mass * bin_fraction(a, b, self.beta[j] - k as f64, y)
    }

    fn invert(&self, k: usize, t: f64) -> f64 {
        let c = &self.cum[k];
        let j = (c.partition_point(|&v| v <= t).max(1) - 1).min(self.beta.len() - 1);
        let (a, b) = (self.edges[j], self.edges[j + 1]);
        let mass = c[j + 1] - c[j];
        let frac = if mass > 0.0 { ((t - c[j]) / mass).clamp(0.0, 1.0) } else { 0.5 };
        bin_inverse(a, b, self.beta[j] - k as f64, frac)
    }
}

/// Distribution function of `S_1 / p` under `P_p` on a grid of atoms.
#[derive(Debug, Clone, Serialize)]
pub struct KernelCdf {
    pub p: u64,
    /// `P_p(S_1 = 0)`.
    pub atom: f64,
    /// Grid of `r / p` values (recorded targets).
    pub x: Vec<f64>,
    /// `P_p(S_1 <= x p)` (normalized to total mass one).
    pub cdf: Vec<f64>,
    /// `1 - atom - sum_r P_p(S_1 = r)` before normalization.
    pub mass_defect: f64,
    #[serde(skip)]
    quantile: Option<Pchip>,
}

impl KernelCdf {
    /// Monotone-interpolated generalized inverse `F_p^{-1}(u)` of `S_1 / p`.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= self.atom {
            return 0.0;
        }
        match &self.quantile {
            Some(q) => q.eval(u),
            None => self.x[0],
        }
    }

    /// `P_p(S_1 <= y p)` by interpolation between recorded atoms.
    pub fn eval(&self, y: f64) -> f64 {
        if y < self.x[0] {
            return self.atom;
        }
        let i = self.x.partition_point(|&v| v <= y);
        if i >= self.x.len() {
            return 1.0;
        }
        self.cdf[i - 1]
    }
}

/// How a transition of the chain is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum KernelMethod {
    /// Exact sampling of the mean-child-count kernel.
    Exact,
    /// Weighted Monte Carlo table per state bin.
    Tabulated { n_tab: usize },
    /// Resampling of `V`-weighted children of fresh child sets.
    Sir { n_cand: usize },
}

impl KernelMethod {
    pub fn name(&self) -> &'static str {
        match self {
            KernelMethod::Exact => "exact",
            KernelMethod::Tabulated { .. } => "tabulated",
            KernelMethod::Sir { .. } => "sir",
        }
    }
}

/// Transition kernel of the spine chain for one parameter point.
pub struct SpineKernel<'a> {
    pub law: &'a OffspringLaw,
    pub ev: &'a ExpectedVolume,
    pub method: KernelMethod,
    /// Walk mode and limits for Monte Carlo kernels.
    pub walk_mode: WalkMode,
    pub walk: WalkConfig,
    /// Seed of the Monte Carlo kernel tables.
    pub table_seed: u64,
    head: [Vec<f64>; 2],
    tail: TailBins,
    cdfs: Mutex<HashMap<u64, Arc<KernelCdf>>>,
    tables: Mutex<HashMap<u64, Arc<KernelTable>>>,
}

impl<'a> SpineKernel<'a> {
    pub fn new(law: &'a OffspringLaw, ev: &'a ExpectedVolume, method: KernelMethod) -> SpineKernel<'a> {
        let gm = GenerationMeans::new(law);
        let k = law.k_max;
        let mut head = [vec![0.0; k + 1], vec![0.0; k + 1]];
        for r in 1..=k {
            let f = gm.thinned_pmf(r as u64) * ev.vbar(r as f64);
            head[0][r] = head[0][r - 1] + f;
            head[1][r] = head[1][r - 1] + f / r as f64;
        }
        let tail = TailBins::new(law.tail.start, |x| law.tail_scale * law.tail.density(x) * ev.vbar(x));
        SpineKernel {
            law,
            ev,
            method,
            walk_mode: WalkMode::NonpointedCapped,
            walk: WalkConfig::default(),
            table_seed: 0x5EED_0005_9100_0001,
            head,
            tail,
            cdfs: Mutex::new(HashMap::new()),
            tables: Mutex::new(HashMap::new()),
        }
    }

    fn head_f(&self, r: usize) -> f64 {
        self.head[0][r] - self.head[0][r - 1]
    }

    fn tail_f(&self, x: f64) -> f64 {
        self.law.tail_scale * self.law.tail.density(x) * self.ev.vbar(x)
    }

    /// `P_p(S_1 = 0) = E[1 + L_p] / V(p)`.
    pub fn absorption(&self, p: u64) -> f64 {
        if p == 0 {
            return 1.0;
        }
        let pf = p as f64;
        (self.ev.gasket_mean(pf) / self.ev.vbar(pf)).min(1.0)
    }

    fn c_factor(&self, p: u64) -> f64 {
        let pf = p as f64;
        self.ev.gasket_mean(pf) * pf / (self.law.pmf[0] * self.ev.vbar(pf))
    }

    /// `P_p(S_1 = r)` for `r >= 1`.
    pub fn transition(&self, p: u64, r: u64) -> f64 {
        let f = if (r as usize) <= self.law.k_max { self.head_f(r as usize) } else { self.tail_f(r as f64) };
        self.c_factor(p) * f / (p as f64 + r as f64)
    }

    /// `sum_{r >= 1} P_p(S_1 = r)` (head exact, tail by quadrature).
    pub fn transition_mass(&self, p: u64) -> f64 {
        self.kernel_cdf_raw(p, |_| false).1
    }

    /// `int f(x) x^{-k}` over `x <= y` (integer head, continuous tail).
    fn cum(&self, k: usize, y: f64) -> f64 {
        let kmax = self.law.k_max;
        if y < self.tail.edges[0] {
            let i = (y.max(0.0).floor() as usize).min(kmax);
            self.head[k][i]
        } else {
            self.head[k][kmax] + self.tail.cum_to(k, y)
        }
    }

    fn invert(&self, k: usize, t: f64) -> u64 {
        let kmax = self.law.k_max;
        if t < self.head[k][kmax] {
            self.head[k].partition_point(|&v| v <= t).max(1) as u64
        } else {
            let x = self.tail.invert(k, t - self.head[k][kmax]);
            (x.round() as u64).max(kmax as u64 + 1)
        }
    }

    /// Exact draw of `S_1` under `P_p`: absorption, then the proposal
    /// `f(r) / max(p, r)` thinned by `max(p, r) / (p + r) >= 1/2`.
    pub fn sample_exact<R: Rng + ?Sized>(&self, p: u64, rng: &mut R) -> u64 {
        if p == 0 || rng.random::<f64>() < self.absorption(p) {
            return 0;
        }
        let pf = p as f64;
        let split = pf + 0.5;
        let lower = self.cum(0, split) / pf;
        let upper_lo = self.cum(1, split);
        let upper = self.head[1][self.law.k_max] + self.tail.total(1) - upper_lo;
        loop {
            let u = rng.random::<f64>() * (lower + upper);
            let r = if u < lower {
                self.invert(0, u * pf).min(p)
            } else {
                self.invert(1, upper_lo + (u - lower)).max(p + 1)
            };
            let rf = r as f64;
            if rng.random::<f64>() * (pf + rf) < pf.max(rf) {
                return r;
            }
        }
    }

    /// Cumulative kernel sums at recorded targets; `record(r)` selects the
    /// head atoms kept. Returns the recorded `(r, cumulative)` pairs and the
    /// total transition mass.
    fn kernel_cdf_raw<F: Fn(usize) -> bool>(&self, p: u64, record: F) -> (Vec<(f64, f64)>, f64) {
        let pf = p as f64;
        let c = self.c_factor(p);
        let kmax = self.law.k_max;
        let mut out = Vec::new();
        let mut acc = 0.0;
        for r in 1..=kmax {
            acc += self.head_f(r) / (pf + r as f64);
            if record(r) || r == kmax {
                out.push((r as f64, c * acc));
            }
        }
        let (gx, gw) = gauss_legendre(8);
        for w in self.tail.edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let m: f64 = gx
                .iter()
                .zip(&gw)
                .map(|(t, wt)| {
                    let x = 0.5 * (a + b) + 0.5 * (b - a) * t;
                    0.5 * (b - a) * wt * self.tail_f(x) / (pf + x)
                })
                .sum();
            acc += m;
            out.push((b, c * acc));
        }
        (out, c * acc)
    }

    /// Kernel distribution function of `S_1 / p` (exact head atoms up to
    /// 256, geometric thinning beyond, tail bin edges).
    pub fn kernel_cdf(&self, p: u64) -> KernelCdf {
        let step = 1.02f64.ln();
        let keep = |r: usize| r <= 256 || ((r as f64).ln() / step).floor() != (((r - 1) as f64).ln() / step).floor();
        let (pts, mass) = self.kernel_cdf_raw(p, keep);
        let atom = self.absorption(p);
        let defect = 1.0 - atom - mass;
        let pf = p as f64;
        let mut x = Vec::with_capacity(pts.len());
        let mut cdf = Vec::with_capacity(pts.len());
        for (r, v) in pts {
            x.push(r / pf);
            cdf.push(atom + (1.0 - atom) * v / mass);
        }
        let (mut qu, mut qx) = (vec![atom], vec![x[0]]);
        for (xi, ci) in x.iter().zip(&cdf) {
            if *ci > *qu.last().unwrap() {
                qu.push(*ci);
                qx.push(*xi);
            }
        }
        let quantile = Pchip::new(qu, qx);
        KernelCdf { p, atom, x, cdf, mass_defect: defect, quantile }
    }

    /// Cached kernel distribution function for the state bin of `r`.
    pub fn cached_cdf(&self, r: u64) -> Arc<KernelCdf> {
        let (key, rep) = geometric_bin(r, CDF_STATE_RATIO);
        if let Some(t) = self.cdfs.lock().unwrap().get(&key) {
            return t.clone();
        }
        let t = Arc::new(self.kernel_cdf(rep));
        self.cdfs.lock().unwrap().entry(key).or_insert(t).clone()
    }
}

/// Cache key and representative state: exact up to `EXACT_STATE_MAX`,
/// geometric bins of the given ratio beyond.
pub fn geometric_bin(r: u64, ratio: f64) -> (u64, u64) {
    if r <= EXACT_STATE_MAX {
        return (r, r);
    }
    let base = EXACT_STATE_MAX as f64;
    let idx = ((r as f64 / base).ln() / ratio.ln()).round();
    let rep = (base * ratio.powf(idx)).round() as u64;
    (EXACT_STATE_MAX + idx as u64, rep)
}

/// One dyadic bin `[lo, hi)` of a Monte Carlo kernel table.
#[derive(Debug, Clone, Serialize)]
pub struct KernelBin {
    pub lo: u64,
    pub hi: u64,
    pub mass: f64,
    pub stderr: f64,
    /// Observed targets and their cumulative weights within the bin.
    #[serde(skip)]
    atoms: Vec<(u64, f64)>,
}

/// Many-to-one estimate of `P_q(S_1 in bin)` from `n` child sets, each
/// child `r` weighted by `V(r)/V(q)`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelTable {
    pub q: u64,
    pub n: usize,
    pub bins: Vec<KernelBin>,
    /// `1 - sum of bin masses`.
    pub atom: f64,
    pub atom_stderr: f64,
    /// Direct estimate `E[1 + L_q] / V(q)` from the same child sets.
    pub absorption: Estimate,
    /// Kish effective size of the pooled child weights.
    pub ess: f64,
    pub cap_hits: u64,
}

fn mean_se(sum: f64, sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let m = sum / nf;
    let var = ((sq / nf - m * m) * nf / (nf - 1.0)).max(0.0);
    (m, (var / nf).sqrt())
}

impl KernelTable {
    /// Estimate the table at state `q`.
    pub fn estimate<R: Rng + ?Sized>(
        law: &OffspringLaw,
        ev: &ExpectedVolume,
        q: u64,
        n: usize,
        mode: WalkMode,
        walk: &WalkConfig,
        rng: &mut R,
    ) -> Result<KernelTable> {
        if q == 0 || n < 2 {
            return Err(Error::InvalidArgument("kernel table needs q >= 1 and n >= 2".into()));
        }
        let vq = ev.vbar(q as f64);
        let nb = 64;
        let (mut s1, mut s2) = (vec![0.0; nb], vec![0.0; nb]);
        let mut atoms: Vec<HashMap<u64, f64>> = vec![HashMap::new(); nb];
        let (mut a1, mut a2, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0);
        let (mut w1, mut w2) = (0.0, 0.0);
        let mut cap_hits = 0;
        let mut buf = ChildSet::default();
        let mut per = vec![0.0; nb];
        for _ in 0..n {
            children_into(law, q, mode, walk, rng, &mut buf)?;
            cap_hits += buf.cap_event as u64;
            per.iter_mut().for_each(|v| *v = 0.0);
            let mut tot = 0.0;
            for &c in &buf.half_perimeters {
                let w = ev.vbar(c as f64) / vq;
                let j = 63 - c.leading_zeros() as usize;
                per[j] += w;
                tot += w;
                w1 += w;
                w2 += w * w;
                *atoms[j].entry(c).or_insert(0.0) += w;
            }
            for j in 0..nb {
                s1[j] += per[j];
                s2[j] += per[j] * per[j];
            }
            let rest = 1.0 - tot;
            a1 += rest;
            a2 += rest * rest;
            let g = buf.gasket_vertices as f64 / vq;
            g1 += g;
            g2 += g * g;
        }
        let ess = if w2 > 0.0 { w1 * w1 / w2 } else { 0.0 };
        if ess < 100.0 {
            return Err(Error::KernelDegenerate { q, ess });
        }
        let bins = (0..nb)
            .filter(|&j| s1[j] > 0.0)
            .map(|j| {
                let (mass, stderr) = mean_se(s1[j], s2[j], n);
                let mut list: Vec<(u64, f64)> = atoms[j].iter().map(|(&k, &v)| (k, v)).collect();
                list.sort_unstable_by_key(|a| a.0);
                let mut acc = 0.0;
                for a in list.iter_mut() {
                    acc += a.1;
                    a.1 = acc;
                }
                KernelBin { lo: 1 << j, hi: if j < 63 { 1 << (j + 1) } else { u64::MAX }, mass, stderr, atoms: list }
            })
            .collect();
        let (atom, atom_stderr) = mean_se(a1, a2, n);
        let (gm, gse) = mean_se(g1, g2, n);
        Ok(KernelTable {
            q,
            n,
            bins,
            atom,
            atom_stderr,
            absorption: Estimate { mean: gm, stderr: gse, n },
            ess,
            cap_hits,
        })
    }

    /// Total mass `atom + sum bins` (one by construction) and the combined
    /// bin-level standard error.
    pub fn mass(&self) -> (f64, f64) {
        let m = self.atom + self.bins.iter().map(|b| b.mass).sum::<f64>();
        let se = self.bins.iter().map(|b| b.stderr * b.stderr).sum::<f64>().sqrt();
        (m, se)
    }

    /// Draw a target: bin by mass (atom at zero clipped at 0), then an
    /// observed atom of the bin by weight.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let atom = self.atom.max(0.0);
        let total = atom + self.bins.iter().map(|b| b.mass).sum::<f64>();
        let mut u = rng.random::<f64>() * total;
        if u < atom {
            return 0;
        }
        u -= atom;
        for b in &self.bins {
            if u < b.mass {
                let t = rng.random::<f64>() * b.atoms.last().unwrap().1;
                let i = b.atoms.partition_point(|a| a.1 <= t).min(b.atoms.len() - 1);
                return b.atoms[i].0;
            }
            u -= b.mass;
        }
        self.bins.last().map(|b| b.atoms.last().unwrap().0).unwrap_or(0)
    }
}

/// Result of one kernel transition.
#[derive(Debug, Clone, Copy, Default)]
pub struct Step {
    pub next: u64,
    pub cap_hits: u64,
    pub clip_events: u64,
}

impl<'a> SpineKernel<'a> {
    /// Dyadic state bin used by the Monte Carlo tables above `EXACT_STATE_MAX`.
    pub fn table_state(q: u64) -> (u64, u64) {
        if q <= EXACT_STATE_MAX {
            return (q, q);
        }
        let j = 63 - q.leading_zeros() as u64;
        (EXACT_STATE_MAX + j, ((1u64 << j) as f64 * std::f64::consts::SQRT_2).round() as u64)
    }

    /// Cached Monte Carlo table for the state bin of `q` (seeded by the bin).
    pub fn table(&self, q: u64, n_tab: usize) -> Result<Arc<KernelTable>> {
        let (key, rep) = Self::table_state(q);
        if let Some(t) = self.tables.lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let mut rng = stream(self.table_seed, key);
        let t = Arc::new(KernelTable::estimate(self.law, self.ev, rep, n_tab, self.walk_mode, &self.walk, &mut rng)?);
        Ok(self.tables.lock().unwrap().entry(key).or_insert(t).clone())
    }

    /// One SIR transition from `n_cand` fresh child sets: children weighted
    /// by `V(child)`, the absorption slot of each set by its vertex count
    /// (`E[1 + L + sum V(child)] = V(q)`). Sets with `sum V(child) > V(q)`
    /// are counted as clip events but kept.
    pub fn sir_step<R: Rng + ?Sized>(&self, q: u64, n_cand: usize, rng: &mut R) -> Result<Step> {
        let vq = self.ev.vbar(q as f64);
        let mut slots: Vec<(u64, f64)> = Vec::new();
        let mut step = Step::default();
        let mut buf = ChildSet::default();
        for _ in 0..n_cand.max(1) {
            children_into(self.law, q, self.walk_mode, &self.walk, rng, &mut buf)?;
            step.cap_hits += buf.cap_event as u64;
            let mut tot = 0.0;
            for &c in &buf.half_perimeters {
                let v = self.ev.vbar(c as f64);
                tot += v;
                slots.push((c, v));
            }
            step.clip_events += (tot > vq) as u64;
            slots.push((0, buf.gasket_vertices as f64));
        }
        let total: f64 = slots.iter().map(|s| s.1).sum();
        let mut u = rng.random::<f64>() * total;
        step.next = slots.last().unwrap().0;
        for (c, w) in slots {
            if u < w {
                step.next = c;
                break;
            }
            u -= w;
        }
        Ok(step)
    }

    /// One transition of the chain from `q` with the configured method.
    pub fn step<R: Rng + ?Sized>(&self, q: u64, rng: &mut R) -> Result<Step> {
        if q == 0 {
            return Ok(Step::default());
        }
        match self.method {
            KernelMethod::Exact => Ok(Step { next: self.sample_exact(q, rng), ..Step::default() }),
            KernelMethod::Tabulated { n_tab } => {
                let t = self.table(q, n_tab)?;
                let (_, rep) = Self::table_state(q);
                let r = t.sample(rng);
                let next = if rep == q { r } else { (r as f64 * q as f64 / rep as f64).round() as u64 };
                Ok(Step { next, ..Step::default() })
            }
            KernelMethod::Sir { n_cand } => self.sir_step(q, n_cand, rng),
        }
    }
}

/// When a chain run stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_steps: u64,
    /// Stop on entering `[0, below)`.
    pub below: Option<u64>,
    /// Stop on entering `(above, inf)`.
    pub above: Option<u64>,
}

impl StopRule {
    pub fn absorbed_only(max_steps: u64) -> StopRule {
        StopRule { max_steps, below: None, above: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Absorbed,
    Below,
    Above,
    MaxSteps,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpinePath {
    pub states: Vec<u64>,
    pub absorbed: bool,
    pub stop: StopReason,
    pub method: KernelMethod,
    pub cap_hits: u64,
    pub clip_events: u64,
}

fn stop_reason(s: u64, rule: &StopRule) -> Option<StopReason> {
    if rule.below.is_some_and(|m| s < m) {
        return Some(if s == 0 { StopReason::Absorbed } else { StopReason::Below });
    }
    if s == 0 {
        return Some(StopReason::Absorbed);
    }
    if rule.above.is_some_and(|b| s > b) {
        return Some(StopReason::Above);
    }
    None
}

/// Run the chain from `S_0 = p` until the stop rule fires.
pub fn spine_path<R: Rng + ?Sized>(kernel: &SpineKernel, p: u64, rule: &StopRule, rng: &mut R) -> Result<SpinePath> {
    let mut path = SpinePath {
        states: vec![p],
        absorbed: p == 0,
        stop: StopReason::MaxSteps,
        method: kernel.method,
        cap_hits: 0,
        clip_events: 0,
    };
    let mut s = p;
    if let Some(r) = stop_reason(s, rule) {
        path.stop = r;
        return Ok(path);
    }
    for _ in 0..rule.max_steps {
        let st = kernel.step(s, rng)?;
        path.cap_hits += st.cap_hits;
        path.clip_events += st.clip_events;
        s = st.next;
        path.states.push(s);
        if let Some(r) = stop_reason(s, rule) {
            path.stop = r;
            path.absorbed = s == 0;
            return Ok(path);
        }
    }
    Ok(path)
}

/// `P(xi <= x) = (2/pi) arctan(sqrt x)` (`n = 2`).
pub fn xi_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        std::f64::consts::FRAC_2_PI * x.sqrt().atan()
    }
}

/// Quantile `tan^2(pi u / 2)` of `xi` (`n = 2`).
pub fn xi_quantile(u: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * u).tan().powi(2)
}

pub fn sample_xi<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    xi_quantile(rng.random::<f64>())
}

/// `Y_k = x0 prod_{i <= k} xi_i` for `k = 0..=steps` (`n = 2`).
pub fn y_walk<R: Rng + ?Sized>(x0: f64, steps: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = x0;
    out.push(y);
    for _ in 0..steps {
        y *= sample_xi(rng);
        out.push(y);
    }
    out
}

/// `n` draws of `xi` for any `alpha`: `nu_alpha` draws resampled by
/// `sum x^theta` (`oversample` candidates per output), then one child
/// picked with probability proportional to `x^theta`. A pick in the
/// small-jump remainder of the bridge is drawn from its density.
pub fn sample_xi_biased<R: Rng + ?Sized>(
    sampler: &crate::cascade_continuous::NuSampler,
    n: usize,
    oversample: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    use crate::cascade_continuous::{NuMethod, StableJumpSet};
    use rand::distr::{weighted::WeightedIndex, Distribution};
    let th = sampler.theta;
    let a = sampler.alpha;
    let m = (n * oversample.max(1)).max(1);
    let mut pool = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for _ in 0..m {
        let mut js = StableJumpSet::default();
        sampler.sample_weighted(rng, &mut js)?;
        let tot = if js.weight > 0.0 { js.power_sum(th, th) } else { 0.0 };
        w.push(js.weight * tot);
        pool.push(js);
    }
    let pick = WeightedIndex::new(&w).map_err(|e| Error::InvalidArgument(format!("xi resampling: {e}")))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let js = &pool[pick.sample(rng)];
        let tot = js.power_sum(th, th);
        let mut u = rng.random::<f64>() * tot;
        let mut chosen = None;
        for &x in &js.jumps {
            let v = x.powf(th);
            if u < v {
                chosen = Some(x);
                break;
            }
            u -= v;
        }
        let x = match (chosen, js.method) {
            (Some(x), _) => x,
            (None, NuMethod::Bridge { eps }) => {
                // density proportional to x^{theta - alpha - 1} on (0, eps/scale)
                let top = eps / js.scale;
                top * rng.random::<f64>().powf(1.0 / (th - a))
            }
            (None, _) => js.jumps.last().copied().unwrap_or(0.0),
        };
        out.push(x);
    }
    Ok(out)
}

/// Renewal function of `ln Y` on a grid, by counting the visits of
/// `[0, x]` before `ln Y` first goes negative.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalEstimate {
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Slope of `R` over the fit window.
    pub c0: f64,
    pub c0_stderr: f64,
    pub n: usize,
    /// Walks stopped by the step cap.
    pub censored: usize,
}

pub fn renewal_function<R: Rng + ?Sized>(
    grid: &[f64],
    n: usize,
    step_cap: u64,
    fit_window: (f64, f64),
    rng: &mut R,
) -> Result<RenewalEstimate> {
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.is_empty() {
        return Err(Error::InvalidArgument("renewal grid must be increasing".into()));
    }
    let g = grid.len();
    let (mut s1, mut s2) = (vec![0.0; g], vec![0.0; g]);
    let mut diff = vec![0.0; g + 1];
    let mut censored = 0;
    for _ in 0..n {
        diff.iter_mut().for_each(|v| *v = 0.0);
        let mut s = 0.0f64;
        let mut steps = 0u64;
        loop {
            // visit at level s counts for every grid point x >= s
            diff[grid.partition_point(|&x| x < s)] += 1.0;
            if steps == step_cap {
                censored += 1;
                break;
            }
            s += sample_xi(rng).ln();
            steps += 1;
            if s < 0.0 {
                break;
            }
        }
        let mut acc = 0.0;
        for k in 0..g {
            acc += diff[k];
            s1[k] += acc;
            s2[k] += acc * acc;
        }
    }
    let (mut r, mut se) = (Vec::with_capacity(g), Vec::with_capacity(g));
    for k in 0..g {
        let (m, e) = mean_se(s1[k], s2[k], n);
        r.push(m);
        se.push(e);
    }
    let (fx, fy): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .zip(&r)
        .filter(|(x, _)| **x >= fit_window.0 && **x <= fit_window.1)
        .map(|(x, v)| (*x, *v))
        .unzip();
    let fit = crate::fit::linear_fit(&fx, &fy)
        .ok_or(Error::InsufficientData { got: fx.len(), need: 2 })?;
    // the grid points share walks, so the regression error understates; use
    // the endpoint spread instead
    let k_hi = grid.iter().rposition(|&x| x <= fit_window.1).unwrap();
    let k_lo = grid.iter().position(|&x| x >= fit_window.0).unwrap();
    let c0_stderr = (se[k_hi].powi(2) + se[k_lo].powi(2)).sqrt() / (grid[k_hi] - grid[k_lo]).max(1e-12);
    Ok(RenewalEstimate { x: grid.to_vec(), r, stderr: se, c0: fit.slope, c0_stderr, n, censored })
}

/// `ln(p) P_p(T_M < T^+_{bp})` for the chain.
#[derive(Debug, Clone, Serialize)]
pub struct HittingEstimate {
    pub p: u64,
    pub b: f64,
    pub m: u64,
    pub prob: Estimate,
    pub scaled: f64,
    pub scaled_stderr: f64,
    pub censored: usize,
}

pub fn hitting_probability(
    kernel: &SpineKernel,
    p: u64,
    b: f64,
    m: u64,
    n: usize,
    max_steps: u64,
    master: u64,
) -> Result<HittingEstimate> {
    use rayon::prelude::*;
    let rule = StopRule { max_steps, below: Some(m), above: Some((b * p as f64).floor() as u64) };
    let res: Vec<Result<StopReason>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(master, i);
            spine_path(kernel, p, &rule, &mut rng).map(|path| path.stop)
        })
        .collect();
    let stops: Vec<StopReason> = res.into_iter().collect::<Result<_>>()?;
    let censored = stops.iter().filter(|s| **s == StopReason::MaxSteps).count();
    let hits: Vec<f64> = stops
        .iter()
        .map(|s| matches!(s, StopReason::Below | StopReason::Absorbed) as u8 as f64)
        .collect();
    let prob = Estimate::from_values(&hits);
    let lp = (p as f64).ln();
    Ok(HittingEstimate {
        p,
        b,
        m,
        prob,
        scaled: lp * prob.mean,
        scaled_stderr: lp * prob.stderr,
        censored,
    })
}

/// One quantile-coupled run of `S` and `Y` from `p` up to `sigma_M`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CouplingRun {
    /// `sup_{k <= sigma_M} max(S_k / Y_k, Y_k / S_k)` (infinite once `S` dies).
    pub max_ratio: f64,
    pub success: bool,
    pub steps: u64,
    pub censored: bool,
}

pub fn coupling_run<R: Rng + ?Sized>(
    kernel: &SpineKernel,
    p: u64,
    m: f64,
    a: f64,
    max_steps: u64,
    rng: &mut R,
) -> CouplingRun {
    let (mut s, mut y) = (p, p as f64);
    let mut worst = 1.0f64;
    let mut steps = 0;
    while y >= m && steps < max_steps {
        let u: f64 = rng.random::<f64>();
        y *= xi_quantile(u);
        s = if s == 0 {
            0
        } else {
            let t = kernel.cached_cdf(s);
            (s as f64 * t.quantile(u)).round() as u64
        };
        steps += 1;
        if s == 0 {
            worst = f64::INFINITY;
            break;
        }
        let r = s as f64 / y;
        worst = worst.max(r.max(1.0 / r));
    }
    CouplingRun { max_ratio: worst, success: worst <= a, steps, censored: y >= m && worst.is_finite() }
}

/// Success frequency of the coupling over `n` runs.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingSummary {
    pub p: u64,
    pub m: f64,
    pub a: f64,
    pub n: usize,
    pub successes: usize,
    pub censored: usize,
    pub frequency: f64,
    pub stderr: f64,
}

pub fn coupling_frequency(kernel: &SpineKernel, p: u64, m: f64, a: f64, n: usize, max_steps: u64, master: u64) -> CouplingSummary {
    let runs: Vec<CouplingRun> = (0..n as u64)
        .map(|i| coupling_run(kernel, p, m, a, max_steps, &mut stream(master, i)))
        .collect();
    let successes = runs.iter().filter(|r| r.success).count();
    let censored = runs.iter().filter(|r| r.censored).count();
    let f = successes as f64 / n as f64;
    CouplingSummary { p, m, a, n, successes, censored, frequency: f, stderr: (f * (1.0 - f) / n as f64).sqrt() }
}

/// Mean number of visits of each band `[e^t, e^{t+1})`, `t = 0..bands`.
#[derive(Debug, Clone, Serialize)]
pub struct GreenProfile {
    pub p: u64,
    pub t: Vec<u32>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: usize,
    pub censored: usize,
}

pub fn green_occupation(
    kernel: &SpineKernel,
    p: u64,
    rule: &StopRule,
    bands: u32,
    n: usize,
    master: u64,
) -> Result<GreenProfile> {
    use rayon::prelude::*;
    let nb = bands as usize;
    let res: Vec<Result<(Vec<f64>, bool)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(mix_seed(master, 0x6EE4), i);
            let path = spine_path(kernel, p, rule, &mut rng)?;
            let mut c = vec![0.0; nb];
            // the state that triggered the stop is not a visit
            let visits = if path.stop == StopReason::MaxSteps { &path.states[..] } else { &path.states[..path.states.len() - 1] };
            for &s in visits {
                if s >= 1 {
                    let t = (s as f64).ln().floor() as usize;
                    if t < nb {
                        c[t] += 1.0;
                    }
                }
            }
            Ok((c, path.stop == StopReason::MaxSteps))
        })
        .collect();
    let (mut s1, mut s2) = (vec![0.0; nb], vec![0.0; nb]);
    let mut censored = 0;
    for r in res {
        let (c, cens) = r?;
        censored += cens as usize;
        for t in 0..nb {
            s1[t] += c[t];
            s2[t] += c[t] * c[t];
        }
    }
    let (mut mean, mut stderr) = (Vec::with_capacity(nb), Vec::with_capacity(nb));
    for t in 0..nb {
        let (m, e) = mean_se(s1[t], s2[t], n);
        mean.push(m);
        stderr.push(e);
    }
    Ok(GreenProfile { p, t: (0..bands).collect(), mean, stderr, n, censored })
}
