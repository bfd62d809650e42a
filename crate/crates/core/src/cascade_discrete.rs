//! The discrete perimeter cascade: nested-loop half-perimeters, total
//! volumes, discrete martingales and gasket fractions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::partition::{ExpectedVolume, OffspringLaw};
use crate::rng::{mix_seed, stream};
use crate::walk::{children_into, ChildSet, WalkConfig, WalkMode};

/// Default cap on vertices per replica.
pub const DEFAULT_VERTEX_CAP: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontier {
    /// Expand generations `0..depth` (nodes at generation `depth` are leaves).
    MaxDepth(u32),
    /// Do not expand nodes with `chi < m` (the root is always expanded).
    FreezeBelow(u64),
    /// Expand everything.
    Exhaust,
}

impl Frontier {
    fn expands(&self, chi: u64, generation: u32) -> bool {
        match *self {
            Frontier::MaxDepth(d) => generation < d,
            Frontier::FreezeBelow(m) => generation == 0 || chi >= m,
            Frontier::Exhaust => true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadeNode {
    pub chi: u64,
    pub generation: u32,
    pub parent: Option<usize>,
    /// Position among the siblings (siblings sorted by decreasing `chi`).
    pub rank: u32,
    /// `1 + L` of the node's gasket, `None` if the node was not expanded.
    pub gasket: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerimeterCascade {
    pub p: u64,
    pub nodes: Vec<CascadeNode>,
    pub frontier: Frontier,
    pub mode: WalkMode,
    pub cap_hits: u64,
}

/// Per-sample limits.
#[derive(Debug, Clone, Copy)]
pub struct CascadeConfig {
    pub walk: WalkConfig,
    pub mode: WalkMode,
    pub vertex_cap: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig { walk: WalkConfig::default(), mode: WalkMode::NonpointedCapped, vertex_cap: DEFAULT_VERTEX_CAP }
    }
}

fn sorted_children(law: &OffspringLaw, chi: u64, seed: u64, cfg: &CascadeConfig, buf: &mut ChildSet) -> Result<()> {
    let mut rng = stream(seed, 0);
    children_into(law, chi, cfg.mode, &cfg.walk, &mut rng, buf)?;
    buf.half_perimeters.sort_unstable_by(|a, b| b.cmp(a));
    Ok(())
}

/// Grow the cascade from a root of half-perimeter `p` (breadth first).
pub fn sample_cascade(
    law: &OffspringLaw,
    p: u64,
    frontier: Frontier,
    cfg: &CascadeConfig,
    seed: u64,
) -> Result<PerimeterCascade> {
    let mut nodes = vec![CascadeNode { chi: p, generation: 0, parent: None, rank: 0, gasket: None }];
    let mut seeds = vec![seed];
    let mut buf = ChildSet::default();
    let mut cap_hits = 0;
    let mut vertices = 0u64;
    let mut i = 0;
    while i < nodes.len() {
        let (chi, generation) = (nodes[i].chi, nodes[i].generation);
        if frontier.expands(chi, generation) {
            sorted_children(law, chi, seeds[i], cfg, &mut buf)?;
            nodes[i].gasket = Some(buf.gasket_vertices);
            cap_hits += buf.cap_event as u64;
            vertices += buf.gasket_vertices;
            if vertices > cfg.vertex_cap {
                return Err(Error::MemoryGuard { cap: cfg.vertex_cap });
            }
            for (r, &q) in buf.half_perimeters.iter().enumerate() {
                nodes.push(CascadeNode { chi: q, generation: generation + 1, parent: Some(i), rank: r as u32, gasket: None });
                seeds.push(mix_seed(seeds[i], r as u64 + 1));
            }
        }
        i += 1;
    }
    Ok(PerimeterCascade { p, nodes, frontier, mode: cfg.mode, cap_hits })
}

impl PerimeterCascade {
    /// Ulam label of node `i` (sibling ranks from the root, 1-based).
    pub fn label(&self, mut i: usize) -> Vec<u32> {
        let mut out = Vec::new();
        while let Some(parent) = self.nodes[i].parent {
            out.push(self.nodes[i].rank + 1);
            i = parent;
        }
        out.reverse();
        out
    }

    pub fn generation(&self, g: u32) -> impl Iterator<Item = &CascadeNode> {
        self.nodes.iter().filter(move |n| n.generation == g)
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.generation).max().unwrap_or(0)
    }

    /// Sum of `1 + L` over expanded nodes.
    pub fn expanded_volume(&self) -> u64 {
        self.nodes.iter().filter_map(|n| n.gasket).sum()
    }
}

/// Additive and derivative martingales at generation `l`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Martingales {
    pub w: f64,
    pub d: f64,
}

pub fn discrete_martingales(c: &PerimeterCascade, l: u32, theta: f64) -> Martingales {
    let p = c.p as f64;
    let (mut w, mut d) = (0.0, 0.0);
    for n in c.generation(l) {
        let z = n.chi as f64 / p;
        w += z.powf(theta);
        d -= 2.0 * z * z * z.ln();
    }
    Martingales { w, d }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeSample {
    pub p: u64,
    pub v: u64,
    /// `ln` of the importance weight (0 outside the raw mode).
    pub log_weight: f64,
    pub cap_hits: u64,
    pub nodes: u64,
    pub replica: u64,
    pub seed: u64,
    pub wall_ms: f64,
}

/// Total volume by full recursion (depth first, per-node seeded streams).
pub fn sample_volume(law: &OffspringLaw, p: u64, cfg: &CascadeConfig, replica: u64, seed: u64) -> Result<VolumeSample> {
    let start = Instant::now();
    let mut stack = vec![(p, seed)];
    let mut buf = ChildSet::default();
    let (mut v, mut nodes, mut cap_hits, mut log_weight) = (0u64, 0u64, 0u64, 0.0f64);
    while let Some((chi, s)) = stack.pop() {
        sorted_children(law, chi, s, cfg, &mut buf)?;
        nodes += 1;
        v += buf.gasket_vertices;
        cap_hits += buf.cap_event as u64;
        if cfg.mode == WalkMode::PointedRaw {
            log_weight += buf.weight.ln();
        }
        if v > cfg.vertex_cap {
            return Err(Error::MemoryGuard { cap: cfg.vertex_cap });
        }
        for (r, &q) in buf.half_perimeters.iter().enumerate() {
            stack.push((q, mix_seed(s, r as u64 + 1)));
        }
    }
    Ok(VolumeSample {
        p,
        v,
        log_weight,
        cap_hits,
        nodes,
        replica,
        seed,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Outcome of a batch of volume replicas.
#[derive(Debug, Clone, Serialize)]
pub struct VolumeBatch {
    pub samples: Vec<VolumeSample>,
    /// Replicas discarded by the vertex cap.
    pub discarded: usize,
    /// Replicas stopped by the walk step cap.
    pub runaway: usize,
}

/// `n` replicas with seeds `mix(master, i)`; guard trips are counted, not fatal.
pub fn sample_volumes(law: &OffspringLaw, p: u64, cfg: &CascadeConfig, n: usize, master: u64) -> VolumeBatch {
    use rayon::prelude::*;
    let results: Vec<Result<VolumeSample>> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_volume(law, p, cfg, i, mix_seed(master, i)))
        .collect();
    let mut batch = VolumeBatch { samples: Vec::with_capacity(n), discarded: 0, runaway: 0 };
    for r in results {
        match r {
            Ok(s) => batch.samples.push(s),
            Err(Error::MemoryGuard { .. }) => batch.discarded += 1,
            Err(Error::RunawayGuard { .. }) => batch.runaway += 1,
            Err(e) => log::error!("volume replica failed: {e}"),
        }
    }
    batch
}

/// Volume with subtrees below `m` replaced by their expected volume.
pub fn sample_volume_proxy(
    law: &OffspringLaw,
    ev: &ExpectedVolume,
    p: u64,
    m: u64,
    cfg: &CascadeConfig,
    seed: u64,
) -> Result<(f64, u64)> {
    let mut stack = vec![(p, seed, true)];
    let mut buf = ChildSet::default();
    let (mut total, mut gasket) = (0.0f64, 0u64);
    while let Some((chi, s, root)) = stack.pop() {
        if !root && chi < m {
            total += ev.vbar(chi as f64);
            continue;
        }
        sorted_children(law, chi, s, cfg, &mut buf)?;
        gasket += buf.gasket_vertices;
        total += buf.gasket_vertices as f64;
        if gasket > cfg.vertex_cap {
            return Err(Error::MemoryGuard { cap: cfg.vertex_cap });
        }
        for (r, &q) in buf.half_perimeters.iter().enumerate() {
            stack.push((q, mix_seed(s, r as u64 + 1), false));
        }
    }
    Ok((total, gasket))
}

/// Mean and standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(xs: &[f64]) -> Estimate {
        let n = xs.len();
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0) } else { f64::NAN };
        Estimate { mean, stderr: (var / nf).sqrt(), n }
    }
}

/// `E|g_M| / V(p)`: mean vertex count of the nodes with `chi >= M` (the
/// cascade frozen below `M`), normalized by the expected volume. For `M > p`
/// nothing is frozen and the full-volume ratio is returned.
pub fn gasket_fraction(
    law: &OffspringLaw,
    ev: &ExpectedVolume,
    p: u64,
    m: u64,
    n: usize,
    cfg: &CascadeConfig,
    master: u64,
) -> Result<Estimate> {
    use rayon::prelude::*;
    let vbar = ev.vbar(p as f64);
    let vals: Vec<Result<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = mix_seed(master, i);
            if m > p {
                return sample_volume(law, p, cfg, i, seed).map(|s| s.v as f64 / vbar);
            }
            sample_volume_proxy(law, ev, p, m, cfg, seed).map(|(_, g)| g as f64 / vbar)
        })
        .collect();
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_values(&vals))
}

/// Mean of `sum_children (chi/p)^theta` over `n` generation-one samples, for each theta.
pub fn generation_one_moments<R: Rng + ?Sized>(
    law: &OffspringLaw,
    p: u64,
    thetas: &[f64],
    n: usize,
    cfg: &CascadeConfig,
    rng: &mut R,
) -> Result<Vec<Estimate>> {
    let mut vals = vec![Vec::with_capacity(n); thetas.len()];
    let mut buf = ChildSet::default();
    let pf = p as f64;
    for _ in 0..n {
        children_into(law, p, cfg.mode, &cfg.walk, rng, &mut buf)?;
        for (j, &th) in thetas.iter().enumerate() {
            vals[j].push(buf.half_perimeters.iter().map(|&q| (q as f64 / pf).powf(th)).sum());
        }
    }
    Ok(vals.iter().map(|v| Estimate::from_values(v)).collect())
}
