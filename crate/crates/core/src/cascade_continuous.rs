//! The limiting multiplicative cascade: stable increments, the offspring law
//! `nu_alpha`, cascade growth and its martingales.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::CriticalParams;
use crate::partition::OffspringLaw;
use crate::special::gamma;
use crate::walk::{children_into, ChildSet, WalkConfig, WalkMode};

/// One increment over time `s` of the spectrally positive stable process
/// with `E exp(-q zeta_s) = exp(s q^alpha)` (Chambers–Mallows–Stuck).
pub fn stable_increment<R: Rng + ?Sized>(alpha: f64, s: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    let t = (PI * alpha / 2.0).tan();
    let b = t.atan() / alpha;
    let sc = (1.0 + t * t).powf(0.5 / alpha);
    let x = sc * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha)
        * ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha);
    let gamma_scale = (PI * alpha / 2.0).cos().abs().powf(1.0 / alpha);
    s.powf(1.0 / alpha) * gamma_scale * x
}

/// Levy density constant: `Pi(dx) = c x^{-alpha-1} dx`.
pub fn levy_constant(alpha: f64) -> f64 {
    // 1 / Gamma(-alpha) with Gamma(-a) = Gamma(2-a) / (a (a-1))
    alpha * (alpha - 1.0) / gamma(2.0 - alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum NuMethod {
    /// Jumps of a stable bridge on `[0, 1]` ending at `-s`, rescaled by `s`,
    /// weighted by `s^alpha`; jumps below `eps` are replaced by a Gaussian
    /// remainder in the endpoint and by their mean in the moments.
    Bridge { eps: f64 },
    /// One capped nonpointed excursion at perimeter `p0` (no degree-4 thinning).
    WalkLimit { p0: u64 },
    /// Grid simulation until `-1` is crossed; increments above `eps` are jumps.
    StableGrid { dt: f64, eps: f64 },
}

impl NuMethod {
    /// Bridge cutoff giving about `count` explicit jumps.
    pub fn bridge_with_count(alpha: f64, count: f64) -> NuMethod {
        let c = levy_constant(alpha);
        NuMethod::Bridge { eps: (c / (alpha * count)).powf(1.0 / alpha) }
    }
}

/// Moments of the unresolved small jumps of one draw.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Remainder {
    /// `sum x^theta` at the configured theta.
    pub theta: f64,
    /// `sum x^2`.
    pub sq: f64,
    /// `sum x^2 ln x`.
    pub sq_ln: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StableJumpSet {
    pub alpha: f64,
    /// Normalized jumps, descending.
    pub jumps: Vec<f64>,
    pub rest: Remainder,
    pub tau_est: f64,
    /// Normalizing scale of the raw jumps (`|zeta_1|` for the bridge).
    pub scale: f64,
    /// Unnormalized importance weight (self-normalize across a batch).
    pub weight: f64,
    pub method: NuMethod,
}

impl StableJumpSet {
    /// `sum x^theta` including the small-jump remainder (exact mean for the
    /// bridge at any theta > alpha; other methods carry it at `theta_cfg` only).
    pub fn power_sum(&self, theta: f64, theta_cfg: f64) -> f64 {
        let explicit: f64 = self.jumps.iter().map(|x| x.powf(theta)).sum();
        let rest = match self.method {
            NuMethod::Bridge { eps } => {
                let a = self.alpha;
                self.scale.powf(-theta) * levy_constant(a) * eps.powf(theta - a) / (theta - a)
            }
            _ if theta == theta_cfg => self.rest.theta,
            _ => 0.0,
        };
        explicit + rest
    }

    /// `sum x^theta 1{x <= y}` (bridge remainder split at `y`).
    pub fn power_sum_below(&self, theta: f64, y: f64, theta_cfg: f64) -> f64 {
        let explicit: f64 = self.jumps.iter().filter(|&&x| x <= y).map(|x| x.powf(theta)).sum();
        let rest = match self.method {
            NuMethod::Bridge { eps } => {
                let a = self.alpha;
                let cut = eps.min(y * self.scale);
                self.scale.powf(-theta) * levy_constant(a) * cut.powf(theta - a) / (theta - a)
            }
            _ if theta == theta_cfg => self.rest.theta,
            _ => 0.0,
        };
        explicit + rest
    }
}

/// Sampler for `nu_alpha`.
#[derive(Debug, Clone)]
pub struct NuSampler<'a> {
    pub alpha: f64,
    pub theta: f64,
    pub method: NuMethod,
    c: f64,
    law: Option<&'a OffspringLaw>,
    walk: WalkConfig,
    /// `|zeta_1|` bound of the rejection step for exact draws.
    bound: f64,
}

/// `y` with `P(zeta_1 < -y)` below about `1e-13` (Cramér bound).
fn negative_tail_bound(alpha: f64) -> f64 {
    // sup_q (q y - q^alpha) = (alpha - 1)(y / alpha)^{alpha/(alpha-1)}
    let target = 30.0;
    alpha * (target / (alpha - 1.0)).powf((alpha - 1.0) / alpha)
}

impl<'a> NuSampler<'a> {
    pub fn new(params: &CriticalParams, method: NuMethod, law: Option<&'a OffspringLaw>) -> Result<Self> {
        let alpha = params.alpha;
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::InvalidArgument(format!("alpha = {alpha} outside (1, 2)")));
        }
        if matches!(method, NuMethod::WalkLimit { .. }) && law.is_none() {
            return Err(Error::InvalidArgument("walk_limit needs an offspring law".into()));
        }
        Ok(NuSampler {
            alpha,
            theta: params.theta_alpha,
            method,
            c: levy_constant(alpha),
            law,
            walk: WalkConfig { thin_degree4: false, ..WalkConfig::default() },
            bound: negative_tail_bound(alpha),
        })
    }

    /// For a bare `alpha` (bridge and grid methods).
    pub fn for_alpha(alpha: f64, method: NuMethod) -> Result<Self> {
        let theta = crate::limitlaws::theta_root(alpha);
        if matches!(method, NuMethod::WalkLimit { .. }) {
            return Err(Error::InvalidArgument("walk_limit needs an offspring law".into()));
        }
        Ok(NuSampler {
            alpha,
            theta,
            method,
            c: levy_constant(alpha),
            law: None,
            walk: WalkConfig::default(),
            bound: negative_tail_bound(alpha),
        })
    }

    /// One weighted draw into `out`.
    pub fn sample_weighted<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut StableJumpSet) -> Result<()> {
        out.alpha = self.alpha;
        out.method = self.method;
        out.jumps.clear();
        match self.method {
            NuMethod::Bridge { eps } => {
                let s = self.bridge_endpoint(eps, rng, &mut out.jumps);
                self.finish_bridge(eps, s, out);
            }
            NuMethod::WalkLimit { p0 } => {
                let mut cs = ChildSet::default();
                children_into(self.law.unwrap(), p0, WalkMode::NonpointedCapped, &self.walk, rng, &mut cs)?;
                let p = p0 as f64;
                out.jumps.extend(cs.half_perimeters.iter().map(|&k| k as f64 / p));
                out.jumps.sort_unstable_by(|a, b| b.total_cmp(a));
                out.rest = Remainder::default();
                out.tau_est = cs.gasket_vertices as f64 / p.powf(self.alpha);
                out.scale = p;
                out.weight = 1.0;
            }
            NuMethod::StableGrid { dt, eps } => {
                // the 1/tau bias makes tau > 50 negligible (mass ~ 50^{-1-1/alpha})
                let max_steps = (50.0 / dt) as u64;
                let mut z = 0.0;
                let mut rest = Remainder::default();
                let mut t = 0u64;
                loop {
                    let d = stable_increment(self.alpha, dt, rng);
                    t += 1;
                    if d > eps {
                        out.jumps.push(d);
                    } else if d > 0.0 {
                        self.accumulate(&mut rest, d);
                    }
                    z += d;
                    if z <= -1.0 {
                        break;
                    }
                    if t >= max_steps {
                        // 1/tau is negligible; drop the draw
                        out.jumps.clear();
                        break;
                    }
                }
                out.jumps.sort_unstable_by(|a, b| b.total_cmp(a));
                out.rest = rest;
                out.tau_est = t as f64 * dt;
                out.scale = 1.0;
                out.weight = if out.jumps.is_empty() && t >= max_steps { 0.0 } else { 1.0 / out.tau_est };
            }
        }
        Ok(())
    }

    fn accumulate(&self, r: &mut Remainder, x: f64) {
        let l = x.ln();
        r.theta += (self.theta * l).exp();
        r.sq += x * x;
        r.sq_ln += x * x * l;
    }

    /// Jumps above `eps` on `[0, 1]` (descending) into `buf`; returns `zeta_1`.
    fn bridge_endpoint<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R, buf: &mut Vec<f64>) -> f64 {
        let (a, c) = (self.alpha, self.c);
        let stop = c * eps.powf(-a) / a;
        let mut g = 0.0;
        let mut sum = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            g += e;
            if g > stop {
                break;
            }
            let j = (c / (a * g)).powf(1.0 / a);
            buf.push(j);
            sum += j;
        }
        let comp = c * eps.powf(1.0 - a) / (a - 1.0);
        let sigma = (c * eps.powf(2.0 - a) / (2.0 - a)).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        sum - comp + sigma * z
    }

    fn finish_bridge(&self, eps: f64, zeta: f64, out: &mut StableJumpSet) {
        let (a, c) = (self.alpha, self.c);
        if zeta >= 0.0 {
            out.weight = 0.0;
            out.jumps.clear();
            out.rest = Remainder::default();
            out.tau_est = f64::INFINITY;
            out.scale = 0.0;
            return;
        }
        let s = -zeta;
        for j in out.jumps.iter_mut() {
            *j /= s;
        }
        let th = self.theta;
        let le = eps.ln();
        let ls = s.ln();
        let e2 = eps.powf(2.0 - a);
        // expected moments of the jumps below eps, rescaled by s
        out.rest = Remainder {
            theta: s.powf(-th) * c * eps.powf(th - a) / (th - a),
            sq: c * e2 / ((2.0 - a) * s * s),
            sq_ln: c / (s * s) * (e2 * (le / (2.0 - a) - 1.0 / ((2.0 - a) * (2.0 - a))) - ls * e2 / (2.0 - a)),
        };
        out.tau_est = s.powf(-a);
        out.scale = s;
        out.weight = s.powf(a);
    }

    /// One draw from `nu_alpha` with unit weight (rejection on the weight for
    /// the bridge method, weight-proportional retry for the grid method).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut StableJumpSet) -> Result<u64> {
        let mut attempts = 0u64;
        match self.method {
            NuMethod::Bridge { eps } => {
                let cap = self.bound.powf(self.alpha);
                loop {
                    attempts += 1;
                    out.jumps.clear();
                    let zeta = self.bridge_endpoint(eps, rng, &mut out.jumps);
                    if zeta < 0.0 && rng.random::<f64>() * cap <= (-zeta).powf(self.alpha) {
                        out.alpha = self.alpha;
                        out.method = self.method;
                        self.finish_bridge(eps, zeta, out);
                        out.weight = 1.0;
                        return Ok(attempts);
                    }
                }
            }
            NuMethod::WalkLimit { .. } => {
                self.sample_weighted(rng, out)?;
                Ok(1)
            }
            NuMethod::StableGrid { .. } => {
                Err(Error::InvalidArgument("the grid method only provides weighted draws".into()))
            }
        }
    }
}

impl Default for StableJumpSet {
    fn default() -> Self {
        StableJumpSet {
            alpha: 1.5,
            jumps: Vec::new(),
            rest: Remainder::default(),
            tau_est: 0.0,
            scale: 0.0,
            weight: 0.0,
            method: NuMethod::Bridge { eps: 0.0 },
        }
    }
}

/// Per-generation summary of a continuous cascade.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct GenerationStats {
    pub generation: u32,
    /// Live plus frozen `theta`-mass.
    pub w: f64,
    pub d: f64,
    pub live: usize,
    /// Mass frozen at this generation (children below the floor and the
    /// sampler remainder); frozen subtrees keep their conditional mean.
    pub truncated_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContNode {
    pub z: f64,
    pub generation: u32,
    pub parent: Option<usize>,
    pub rank: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContCascade {
    pub alpha: f64,
    pub theta: f64,
    pub child_floor: f64,
    pub nodes: Vec<ContNode>,
    pub generations: Vec<GenerationStats>,
}

/// Grow the cascade to depth `ell_max`. Children with `Z < child_floor` are
/// frozen: their subtree enters `W` and `D` through its conditional mean.
pub fn grow_cascade<R: Rng + ?Sized>(
    sampler: &NuSampler,
    ell_max: u32,
    child_floor: f64,
    node_cap: usize,
    rng: &mut R,
) -> Result<ContCascade> {
    let theta = sampler.theta;
    let mut nodes = vec![ContNode { z: 1.0, generation: 0, parent: None, rank: 0 }];
    let mut gens = vec![GenerationStats { generation: 0, w: 1.0, d: 0.0, live: 1, truncated_mass: 0.0 }];
    let (mut frozen_w, mut frozen_d) = (0.0, 0.0);
    let mut js = StableJumpSet::default();
    let mut start = 0;
    for g in 1..=ell_max {
        let end = nodes.len();
        let mut truncated = 0.0;
        for i in start..end {
            let z = nodes[i].z;
            sampler.sample(rng, &mut js)?;
            let (lz, z2) = (z.ln(), z * z);
            // remainder: sum (z x)^theta, -2 sum (z x)^2 ln(z x)
            let rw = z.powf(theta) * js.rest.theta;
            truncated += rw;
            frozen_w += rw;
            frozen_d += -2.0 * z2 * (js.rest.sq_ln + lz * js.rest.sq);
            for (r, &x) in js.jumps.iter().enumerate() {
                let c = z * x;
                if c >= child_floor {
                    nodes.push(ContNode { z: c, generation: g, parent: Some(i), rank: r as u32 });
                } else {
                    let m = c.powf(theta);
                    truncated += m;
                    frozen_w += m;
                    frozen_d += -2.0 * c * c * c.ln();
                }
            }
            if nodes.len() > node_cap {
                return Err(Error::MemoryGuard { cap: node_cap as u64 });
            }
        }
        start = end;
        let live = &nodes[end..];
        let w = frozen_w + live.iter().map(|n| n.z.powf(theta)).sum::<f64>();
        let d = frozen_d + live.iter().map(|n| -2.0 * n.z * n.z * n.z.ln()).sum::<f64>();
        gens.push(GenerationStats { generation: g, w, d, live: live.len(), truncated_mass: truncated });
    }
    Ok(ContCascade { alpha: sampler.alpha, theta, child_floor, nodes, generations: gens })
}

/// Joint values `(W_l, D_l)` of a population.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MartingalePair {
    pub w: f64,
    pub d: f64,
}

/// Laws of `(W_l, D_l)` for `l = 0..=ell` by population dynamics on
/// `W' = sum x_i^theta W_i`, `D' = sum x_i^2 (D_i - 2 ln(x_i) W_i)` with the
/// `x` drawn from weighted `nu_alpha` samples (sampling importance
/// resampling, `oversample` candidates per member; `oversample = 0` uses
/// exact rejection draws instead). Remainder jumps enter through `E W = 1`,
/// `E D = 0`.
pub fn martingale_population<R: Rng + ?Sized>(
    sampler: &NuSampler,
    ell: u32,
    n: usize,
    oversample: usize,
    rng: &mut R,
) -> Result<Vec<Vec<MartingalePair>>> {
    use rand_distr::weighted::WeightedAliasIndex;
    let theta = sampler.theta;
    let mut pool = vec![MartingalePair { w: 1.0, d: 0.0 }; n];
    let mut out = vec![pool.clone()];
    let mut js = StableJumpSet::default();
    let m = n * oversample.max(1);
    let mut cand = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for _ in 0..ell {
        cand.clear();
        weights.clear();
        while cand.len() < m {
            if oversample == 0 {
                sampler.sample(rng, &mut js)?;
            } else {
                sampler.sample_weighted(rng, &mut js)?;
                if !(js.weight > 0.0) {
                    continue;
                }
            }
            let mut w = js.rest.theta;
            let mut d = -2.0 * js.rest.sq_ln;
            for &x in &js.jumps {
                let p = pool[rng.random_range(0..n)];
                let lx = x.ln();
                w += (theta * lx).exp() * p.w;
                d += x * x * (p.d - 2.0 * lx * p.w);
            }
            cand.push(MartingalePair { w, d });
            weights.push(js.weight);
        }
        if oversample == 0 {
            std::mem::swap(&mut pool, &mut cand);
        } else {
            let alias = WeightedAliasIndex::new(weights.clone())
                .map_err(|e| Error::InvalidArgument(format!("resampling weights: {e}")))?;
            pool = (0..n).map(|_| cand[alias.sample(rng)]).collect();
        }
        out.push(pool.clone());
    }
    Ok(out)
}

/// Self-normalized weighted mean with a delta-method standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

fn ratio_estimates(weights: &[f64], values: &[Vec<f64>]) -> Vec<WeightedEstimate> {
    let sw: f64 = weights.iter().sum();
    values
        .iter()
        .map(|v| {
            let mean = weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() / sw;
            let var = weights.iter().zip(v).map(|(w, x)| (w * (x - mean)).powi(2)).sum::<f64>();
            WeightedEstimate { mean, stderr: var.sqrt() / sw, n: weights.len() }
        })
        .collect()
}

/// `E sum x_i^theta` under `nu_alpha` for each theta, from `n` weighted draws.
pub fn biggins_estimate<R: Rng + ?Sized>(
    sampler: &NuSampler,
    thetas: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<WeightedEstimate>> {
    let mut js = StableJumpSet::default();
    let mut w = Vec::with_capacity(n);
    let mut vals = vec![Vec::with_capacity(n); thetas.len()];
    for _ in 0..n {
        sampler.sample_weighted(rng, &mut js)?;
        w.push(js.weight);
        for (k, &t) in thetas.iter().enumerate() {
            vals[k].push(if js.weight > 0.0 { js.power_sum(t, sampler.theta) } else { 0.0 });
        }
    }
    Ok(ratio_estimates(&w, &vals))
}

/// `E sum x_i^theta 1{x_i <= x}` at each `x`: the distribution function of
/// the size-biased jump `xi` (the remainder counts below every grid point).
pub fn biased_jump_cdf<R: Rng + ?Sized>(
    sampler: &NuSampler,
    xs: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<WeightedEstimate>> {
    let th = sampler.theta;
    let mut js = StableJumpSet::default();
    let mut w = Vec::with_capacity(n);
    let mut vals = vec![Vec::with_capacity(n); xs.len()];
    for _ in 0..n {
        sampler.sample_weighted(rng, &mut js)?;
        w.push(js.weight);
        for (k, &x) in xs.iter().enumerate() {
            let v = if js.weight > 0.0 { js.power_sum_below(th, x, th) } else { 0.0 };
            vals[k].push(v);
        }
    }
    Ok(ratio_estimates(&w, &vals))
}

/// Compare `E sum x^theta` of two samplers at their common theta; errors with
/// `MethodDisagreement` beyond three combined standard errors.
pub fn compare_methods<R: Rng + ?Sized>(
    a: &NuSampler,
    b: &NuSampler,
    n: usize,
    rng: &mut R,
) -> Result<(WeightedEstimate, WeightedEstimate)> {
    let ea = biggins_estimate(a, &[a.theta], n, rng)?[0];
    let eb = biggins_estimate(b, &[a.theta], n, rng)?[0];
    let se = (ea.stderr.powi(2) + eb.stderr.powi(2)).sqrt();
    let rel = (ea.mean - eb.mean).abs() / se;
    if rel > 3.0 {
        return Err(Error::MethodDisagreement { k: 1, rel });
    }
    Ok((ea, eb))
}
