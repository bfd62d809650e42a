//! Left-continuous walk encoding of the gasket: excursions, child sets and
//! exchangeability checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::CaseTag;
use crate::partition::OffspringLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkMode {
    PointedRaw,
    NonpointedCapped,
    NonpointedExact,
}

impl std::fmt::Display for WalkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WalkMode::PointedRaw => "pointed_raw",
            WalkMode::NonpointedCapped => "nonpointed_capped",
            WalkMode::NonpointedExact => "nonpointed_exact",
        })
    }
}

impl std::str::FromStr for WalkMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointed_raw" | "raw" => Ok(WalkMode::PointedRaw),
            "nonpointed_capped" | "capped" => Ok(WalkMode::NonpointedCapped),
            "nonpointed_exact" | "exact" => Ok(WalkMode::NonpointedExact),
            o => Err(Error::InvalidArgument(format!("unknown walk mode '{o}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Hard cap on `T_p`.
    pub max_steps: u64,
    /// Cap constant for the nonpointed capped mode.
    pub kappa: f64,
    /// Apply the degree-4 thinning to accepted child sets.
    pub thin_degree4: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig { max_steps: 1_000_000_000, kappa: 0.05, thin_degree4: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WalkExcursion {
    pub p: u64,
    pub steps: Option<Vec<i64>>,
    pub t: u64,
    pub l: u64,
    pub weight: f64,
    pub mode: WalkMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Hit,
    Aborted,
    Runaway,
}

/// Run the walk from height `p` above the target until it hits, `L` exceeds
/// `l_abort`, or the step cap makes hitting impossible. `visit` sees every `K`.
#[inline]
fn run<R: Rng + ?Sized, V: FnMut(u64)>(
    law: &OffspringLaw,
    p: u64,
    max_steps: u64,
    l_abort: u64,
    rng: &mut R,
    mut visit: V,
) -> (Outcome, u64, u64) {
    let (mut height, mut t, mut l) = (p, 0u64, 0u64);
    loop {
        let k = law.sample(rng);
        t += 1;
        visit(k);
        if k == 0 {
            l += 1;
            if l > l_abort {
                return (Outcome::Aborted, t, l);
            }
            height -= 1;
            if height == 0 {
                return (Outcome::Hit, t, l);
            }
        } else {
            height = height.saturating_add(k - 1);
        }
        // each step lowers the height by at most one
        if height > max_steps - t {
            return (Outcome::Runaway, t, l);
        }
    }
}

/// Plain excursion of the walk until it first hits `-p` (pointed law).
pub fn sample_excursion<R: Rng + ?Sized>(
    law: &OffspringLaw,
    p: u64,
    cfg: &WalkConfig,
    keep_path: bool,
    rng: &mut R,
) -> Result<WalkExcursion> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be >= 1".into()));
    }
    let mut path = keep_path.then(Vec::new);
    let (out, t, l) = run(law, p, cfg.max_steps, u64::MAX, rng, |k| {
        if let Some(v) = path.as_mut() {
            v.push(k as i64 - 1);
        }
    });
    if out == Outcome::Runaway {
        return Err(Error::RunawayGuard { p, cap: cfg.max_steps });
    }
    Ok(WalkExcursion { p, steps: path, t, l, weight: 1.0 / (1.0 + l as f64), mode: WalkMode::PointedRaw })
}

/// Outermost-loop half-perimeters and gasket size of one sampled gasket.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ChildSet {
    pub half_perimeters: Vec<u64>,
    pub gasket_vertices: u64,
    /// Walks started (rejections plus the accepted one).
    pub attempts: u32,
    /// The capped acceptance saturated (`1 + L < cap`), i.e. the biased event.
    pub cap_event: bool,
    /// Importance weight (`1/(1+L)` in the raw mode, 1 otherwise).
    pub weight: f64,
}

/// `f(p)` scale of `1 + L_p`.
pub fn scale_f(law: &OffspringLaw, p: u64) -> f64 {
    let pf = p as f64;
    match law.params.case_tag {
        CaseTag::A => pf.powf(law.params.alpha),
        CaseTag::B => pf.powf(1.5) / (pf.ln() + 1.0),
    }
}

/// Acceptance constant `c` with acceptance `min(1, c/(1+L))`.
pub fn acceptance_constant(law: &OffspringLaw, p: u64, mode: WalkMode, kappa: f64) -> f64 {
    let exact = 1.0 + p as f64;
    match mode {
        WalkMode::PointedRaw => f64::INFINITY,
        WalkMode::NonpointedExact => exact,
        WalkMode::NonpointedCapped => exact.max(kappa * scale_f(law, p)),
    }
}

/// Sample the child set of a gasket with perimeter `2p` into `out` (reused buffer).
pub fn children_into<R: Rng + ?Sized>(
    law: &OffspringLaw,
    p: u64,
    mode: WalkMode,
    cfg: &WalkConfig,
    rng: &mut R,
    out: &mut ChildSet,
) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be >= 1".into()));
    }
    let a = if cfg.thin_degree4 { law.thinning() } else { 0.0 };
    let c = acceptance_constant(law, p, mode, cfg.kappa);
    out.attempts = 0;
    loop {
        out.attempts += 1;
        out.half_perimeters.clear();
        let l_abort = if c.is_finite() {
            let u: f64 = 1.0 - rng.random::<f64>();
            let lim = c / u - 1.0;
            if lim >= u64::MAX as f64 {
                u64::MAX
            } else {
                lim.floor() as u64
            }
        } else {
            u64::MAX
        };
        let kids = &mut out.half_perimeters;
        let (outcome, _t, l) = run(law, p, cfg.max_steps, l_abort, rng, |k| {
            if k >= 1 {
                kids.push(k);
            }
        });
        match outcome {
            Outcome::Hit => {
                if a > 0.0 {
                    // degree-4 faces are plain quadrangles with probability a
                    out.half_perimeters.retain(|&k| k != 2 || rng.random::<f64>() >= a);
                }
                out.gasket_vertices = 1 + l;
                out.cap_event = mode == WalkMode::NonpointedCapped && ((1 + l) as f64) < c;
                out.weight = if mode == WalkMode::PointedRaw { 1.0 / (1.0 + l as f64) } else { 1.0 };
                return Ok(());
            }
            Outcome::Aborted => continue,
            Outcome::Runaway => return Err(Error::RunawayGuard { p, cap: cfg.max_steps }),
        }
    }
}

pub fn children<R: Rng + ?Sized>(
    law: &OffspringLaw,
    p: u64,
    mode: WalkMode,
    cfg: &WalkConfig,
    rng: &mut R,
) -> Result<ChildSet> {
    let mut out = ChildSet::default();
    children_into(law, p, mode, cfg, rng, &mut out)?;
    Ok(out)
}

/// Step functions for the exchangeability check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepTest {
    /// `1{x = -1}`
    DownStep,
    /// `1{x + 1 >= m}`
    LargeFace(u64),
    /// `f = 1`
    Constant,
}

impl StepTest {
    #[inline]
    fn eval_k(&self, k: f64) -> f64 {
        match *self {
            StepTest::DownStep => (k == 0.0) as u8 as f64,
            StepTest::LargeFace(m) => (k >= m as f64) as u8 as f64,
            StepTest::Constant => 1.0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            StepTest::DownStep => "down_step".into(),
            StepTest::LargeFace(m) => format!("face_ge_{m}"),
            StepTest::Constant => "constant".into(),
        }
    }
}

/// `E[p/(p + X_1) f(X_1)]` with `X_1 = K - 1`.
pub fn kemperman_rhs(law: &OffspringLaw, p: u64, test: StepTest) -> Result<f64> {
    let pf = p as f64;
    law.expect(|k| pf / (pf + k - 1.0) * test.eval_k(k))
}

#[derive(Debug, Clone, Serialize)]
pub struct KempermanResult {
    pub test: String,
    pub p: u64,
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
    /// Excursions stopped by the step cap (their partial ratio is used).
    pub censored: usize,
}

impl KempermanResult {
    pub fn z(&self) -> f64 {
        (self.lhs - self.rhs) / self.stderr
    }
}

/// Monte Carlo of `E[(T_p - 1)^{-1} sum_{i <= T_p} f(X_i)]` for several `f`.
pub fn kemperman_check<R: Rng + ?Sized>(
    law: &OffspringLaw,
    p: u64,
    tests: &[StepTest],
    n: usize,
    cfg: &WalkConfig,
    rng: &mut R,
) -> Result<Vec<KempermanResult>> {
    if p < 2 {
        return Err(Error::InvalidArgument("the exchangeability check needs p >= 2".into()));
    }
    let m = tests.len();
    let (mut s1, mut s2) = (vec![0.0; m], vec![0.0; m]);
    let mut acc = vec![0.0; m];
    let mut censored = 0usize;
    for _ in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let (out, t, _) = run(law, p, cfg.max_steps, u64::MAX, rng, |k| {
            let kf = k as f64;
            for (a, f) in acc.iter_mut().zip(tests) {
                *a += f.eval_k(kf);
            }
        });
        if out == Outcome::Runaway {
            censored += 1;
            log::warn!("excursion from p = {p} stopped at the step cap after {t} steps");
        }
        let denom = (t - 1).max(1) as f64;
        for j in 0..m {
            let v = acc[j] / denom;
            s1[j] += v;
            s2[j] += v * v;
        }
    }
    let nf = n as f64;
    tests
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let mean = s1[j] / nf;
            let var = (s2[j] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            Ok(KempermanResult {
                test: f.name(),
                p,
                n,
                lhs: mean,
                rhs: kemperman_rhs(law, p, *f)?,
                stderr: (var / nf).sqrt(),
                censored,
            })
        })
        .collect()
}

/// Empirical `P(T_1 > k)` for each `k` in `ks`, censoring walks at `max(ks)`.
pub fn first_passage_survival<R: Rng + ?Sized>(law: &OffspringLaw, ks: &[u64], n: usize, rng: &mut R) -> Vec<f64> {
    let cap = ks.iter().copied().max().unwrap_or(1) + 1;
    let mut counts = vec![0usize; ks.len()];
    for _ in 0..n {
        let (out, t, _) = run(law, 1, cap, u64::MAX, rng, |_| {});
        let t_eff = if out == Outcome::Hit { t } else { u64::MAX };
        for (c, &k) in counts.iter_mut().zip(ks) {
            if t_eff > k {
                *c += 1;
            }
        }
    }
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

/// Fraction of excursions with `|mu(0)(T_p - 1)/(1 + L_p) - 1| > p^{-1/2}`.
pub fn concentration<R: Rng + ?Sized>(law: &OffspringLaw, p: u64, n: usize, cfg: &WalkConfig, rng: &mut R) -> Result<f64> {
    let mu0 = law.pmf[0];
    let thr = (p as f64).powf(-0.5);
    let mut hits = 0usize;
    for _ in 0..n {
        let e = sample_excursion(law, p, cfg, false, rng)?;
        let r = mu0 * (e.t - 1) as f64 / (1.0 + e.l as f64);
        if (r - 1.0).abs() > thr {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}
