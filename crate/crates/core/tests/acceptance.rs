//! Acceptance run: one line per criterion, sub-checks indented below it.
//!
//! `LOOPON_ACCEPTANCE_ONLY=3,5` restricts the run to the listed criteria.
//! Sub-checks marked `red` are reported but do not fail the run: heavy tails
//! or logarithmic convergence put them out of reach at these sample sizes.

use loopon::cascade_continuous::{biggins_estimate, grow_cascade, martingale_population, NuMethod, NuSampler};
use loopon::cascade_discrete::{sample_cascade, sample_volumes, CascadeConfig, Estimate, Frontier};
use loopon::fit::linear_fit;
use loopon::limitlaws::*;
use loopon::partition::identities::identity_report;
use loopon::partition::{
    circle_series, fk_table, o2_table, offspring_law, rho_moments, ExpectedVolume, FkMethod, OffspringLaw,
    PartitionTable, Spectral,
};
use loopon::rng::{mix_seed, stream};
use loopon::spine::*;
use loopon::walk::{children_into, first_passage_survival, kemperman_check, ChildSet, StepTest, WalkConfig, WalkMode};
use loopon::{derive_params, CriticalParams, Selector};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::time::Instant;

struct Check {
    name: String,
    pass: bool,
    detail: String,
    known_red: bool,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), pass, detail: detail.into(), known_red: false }
}

fn red(mut c: Check) -> Check {
    c.known_red = true;
    c
}

struct Model {
    table: PartitionTable,
    law: OffspringLaw,
    ev: ExpectedVolume,
}

fn model(n: f64, sel: Selector) -> Model {
    let p = derive_params(n, sel).unwrap();
    let table = fk_table(&p, 20_000, PartitionTable::default_method(&p)).unwrap();
    let law = offspring_law(&table).unwrap();
    let ev = ExpectedVolume::for_law(&law, &table).unwrap();
    Model { table, law, ev }
}

fn o2(h: f64) -> Model {
    model(2.0, Selector::O2 { h })
}

fn dilute() -> Model {
    model(2f64.sqrt(), Selector::Dilute)
}

const H_MIN: f64 = 4.0 / (3.0 * PI * PI);
const H_MID: f64 = 1.7 / (PI * PI);
const H_MAX: f64 = 2.0 / (PI * PI);

fn mean_se(v: &[f64]) -> (f64, f64) {
    let e = Estimate::from_values(v);
    (e.mean, e.stderr)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
}

fn ks_report(samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> KsReport {
    ks_statistic(&EmpiricalLaw::new(samples), cdf).unwrap()
}

fn ks(samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    ks_report(samples, cdf).statistic
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// KS distances in increasing `p` should not grow. Once every distance is
/// inside the null band the order is noise, and a violation is tolerated.
fn ks_trend(name: &str, r: &[KsReport]) -> Check {
    let stat: Vec<f64> = r.iter().map(|k| k.statistic).collect();
    let pv: Vec<f64> = r.iter().map(|k| k.p_value).collect();
    let c = check(name, stat.windows(2).all(|w| w[1] <= w[0]), format!("KS {stat:.4?}, p-values {pv:.3?}"));
    if pv.iter().all(|&v| v > 0.05) {
        red(c)
    } else {
        c
    }
}

/// `C(2k, k) 4^{1-k}` by its ratio recursion.
fn central(k: usize) -> f64 {
    (1..=k).fold(4.0, |c, j| c * (2 * j - 1) as f64 / (2 * j) as f64)
}

fn identities() -> Vec<Check> {
    let mut out = Vec::new();
    for h in [H_MIN, H_MID, H_MAX] {
        let m = o2(h);
        let rows = identity_report(&m.table, &m.law, 20).unwrap();
        let harm: Vec<_> = rows.iter().filter(|r| r.name.starts_with("harmonicity_")).collect();
        let worst = harm.iter().map(|r| r.value.abs()).fold(0.0, f64::max);
        out.push(check(
            format!("h={h:.6} harmonicity, l=1..{}", harm.len()),
            worst <= 1e-5,
            format!("{worst:.3e} (tol 1e-5)"),
        ));
        for r in rows.iter().filter(|r| !r.name.starts_with("tail_") && !r.name.starts_with("harmonicity_")) {
            out.push(check(format!("h={h:.6} {}", r.name), r.pass, format!("{:.3e} (tol {:.0e})", r.value, r.tolerance)));
        }
        let worst = (3..=50usize)
            .map(|k| (m.law.pmf_at(k as u64) / m.table.s[k] - h * central(k)).abs())
            .fold(0.0, f64::max);
        out.push(check(format!("h={h:.6} V(k) mu(k) = h C(2k,k) 4^(1-k), k=3..50"), worst <= 1e-12, format!("{worst:.3e}")));
    }
    out
}

fn coefficients() -> Vec<Check> {
    let mut out = Vec::new();
    for h in [H_MIN, H_MID, H_MAX] {
        let p = derive_params(2.0, Selector::O2 { h }).unwrap();
        let rel = max_rel(&rho_moments(&Spectral::new(&p), 50), &o2_table(&p, 50).unwrap());
        out.push(check(format!("n=2 h={h:.6} moments vs closed form"), rel <= 1e-8, format!("{rel:.3e}")));
    }
    let n = 2.0 - 1e-4;
    for (label, sel, h) in [("dense", Selector::Dense { h: H_MID }, H_MID), ("dense", Selector::Dense { h: H_MAX }, H_MAX)] {
        let near = derive_params(n, sel).unwrap();
        let at = derive_params(2.0, Selector::O2 { h }).unwrap();
        let a = fk_table(&near, 20, FkMethod::RhoMoments).unwrap();
        let b = o2_table(&at, 20).unwrap();
        let rel = max_rel(&a.s, &b);
        out.push(check(format!("n=2-1e-4 {label} h={h:.6} vs n=2, k<=20"), rel <= 1e-3, format!("{rel:.3e}")));
    }
    let p = derive_params(2f64.sqrt(), Selector::Dilute).unwrap();
    let spec = Spectral::new(&p);
    let rel = max_rel(&rho_moments(&spec, 50), &circle_series(&spec, 50, 0.02, 4096).unwrap());
    out.push(check("n=sqrt2 dilute moments vs circle series", rel <= 1e-6, format!("{rel:.3e}")));
    out
}

fn exponents() -> Vec<Check> {
    let mut out = Vec::new();
    let worst = (0..20)
        .map(|i| {
            let a = 1.0 + (i as f64 + 0.5) / 20.0;
            (theta_root(a) - (2.0f64).min(2.0 * a - 1.0)).abs()
        })
        .fold(0.0, f64::max);
    out.push(check("theta root at 20 alphas", worst <= 1e-10, format!("{worst:.3e}")));
    let points: [(&str, f64, Selector); 5] = [
        ("n=2 h=4/(3pi^2)", 2.0, Selector::O2 { h: H_MIN }),
        ("n=sqrt2 dilute", 2f64.sqrt(), Selector::Dilute),
        ("n=1 dense h=0.14", 1.0, Selector::Dense { h: 0.14 }),
        ("n=2 h=1.7/pi^2", 2.0, Selector::O2 { h: H_MID }),
        ("n=2 h=2/pi^2", 2.0, Selector::O2 { h: H_MAX }),
    ];
    for (label, n, sel) in points {
        let m = model(n, sel);
        let params: &CriticalParams = &m.table.params;
        let k_max = m.table.k_max;
        let ks: Vec<usize> = (k_max / 4..=k_max).collect();
        match params.case_tag {
            loopon::params::CaseTag::A => {
                let x: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
                let y: Vec<f64> = ks.iter().map(|&k| m.law.pmf[k].ln()).collect();
                let slope = linear_fit(&x, &y).unwrap().slope;
                let target = -(params.alpha + 1.0);
                out.push(check(
                    format!("{label} tail slope"),
                    (slope - target).abs() <= 0.05,
                    format!("{slope:.4} vs {target:.4}"),
                ));
            }
            loopon::params::CaseTag::B => {
                let r: Vec<f64> = ks.iter().map(|&k| m.law.pmf[k] * (k as f64).powf(2.5) / (k as f64).ln()).collect();
                let spread = r.iter().cloned().fold(0.0, f64::max) / r.iter().cloned().fold(f64::INFINITY, f64::min);
                out.push(check(format!("{label} k^(5/2) mu(k) / ln k spread"), spread <= 1.5, format!("{spread:.4}")));
            }
        }
    }
    out
}

fn walks() -> Vec<Check> {
    let mut out = Vec::new();
    let cfg = WalkConfig::default();
    let tests = [StepTest::DownStep, StepTest::LargeFace(10), StepTest::Constant];
    let points = [
        ("n=1 dense h=0.14", model(1.0, Selector::Dense { h: 0.14 })),
        ("n=sqrt2 dense h=0.15", model(2f64.sqrt(), Selector::Dense { h: 0.15 })),
    ];
    for (label, m) in points {
        for p in [10u64, 100] {
            let res = kemperman_check(&m.law, p, &tests, 100_000, &cfg, &mut stream(4, p)).unwrap();
            for r in res {
                out.push(check(
                    format!("{label} p={p} exchangeability {}", r.test),
                    r.z().abs() <= 3.0,
                    format!("{:.5} vs {:.5} (z {:.2}, censored {})", r.lhs, r.rhs, r.z(), r.censored),
                ));
            }
        }
    }
    let points = [
        ("n=sqrt2 dilute", dilute(), false),
        ("n=sqrt2 dense h=0.15", model(2f64.sqrt(), Selector::Dense { h: 0.15 }), false),
        ("n=2 h=4/(3pi^2)", o2(H_MIN), false),
        // alpha = 7/6: corrections decay like k^{-1/7}
        ("n=1 dense h=0.14", model(1.0, Selector::Dense { h: 0.14 }), true),
    ];
    for (label, m, slow) in points {
        let ks: Vec<u64> = (0..=8).map(|i| (100.0 * 10f64.powf(i as f64 / 4.0)).round() as u64).collect();
        let s = first_passage_survival(&m.law, &ks, 1_000_000, &mut stream(41, 0));
        let x: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
        let y: Vec<f64> = s.iter().map(|v| v.ln()).collect();
        let slope = linear_fit(&x, &y).unwrap().slope;
        let target = -1.0 / m.table.params.alpha;
        let c = check(
            format!("{label} P(T_1 > k) slope on [1e2, 1e4]"),
            (slope - target).abs() <= 0.05,
            format!("{slope:.4} vs {target:.4}"),
        );
        out.push(if slow { red(c) } else { c });
    }
    out
}

fn volume_mean() -> Vec<Check> {
    let m = dilute();
    let cfg = CascadeConfig { mode: WalkMode::NonpointedExact, ..Default::default() };
    let mut out = Vec::new();
    for p in [64u64, 256] {
        let b = sample_volumes(&m.law, p, &cfg, 10_000, 5);
        let vbar = m.ev.vbar(p as f64);
        let v: Vec<f64> = b.samples.iter().map(|s| s.v as f64 / vbar).collect();
        let (mean, se) = mean_se(&v);
        let dev = (mean - 1.0).abs();
        let max = v.iter().cloned().fold(0.0, f64::max);
        out.push(red(check(
            format!("p={p} mean V / V(p)"),
            dev <= 3.0 * se && dev <= 0.05,
            format!("{mean:.4} +- {se:.4} (largest sample {max:.0})"),
        )));
    }
    out
}

fn dilute_limit() -> Vec<Check> {
    let m = dilute();
    let alpha = m.table.params.alpha;
    let cfg = CascadeConfig::default();
    let mut out = Vec::new();
    let mut dist = Vec::new();
    let mut last = Vec::new();
    for p in [128u64, 512] {
        let b = sample_volumes(&m.law, p, &cfg, 2000, 6);
        let vbar = m.ev.vbar(p as f64);
        last = b.samples.iter().map(|s| s.v as f64 / vbar).collect::<Vec<_>>();
        dist.push(ks_report(last.clone(), |w| inverse_gamma_cdf(alpha - 0.5, alpha - 1.5, w)));
    }
    out.push(ks_trend("KS to inverse-Gamma nonincreasing in p", &dist));
    out.push(check("KS at p=512", dist[1].statistic <= 0.08, format!("{:.4}", dist[1].statistic)));
    let law = EmpiricalLaw::new(last);
    for pt in laplace_compare(&law, &[0.5, 1.0, 2.0], |q| dilute_w_laplace(alpha, q)).unwrap() {
        out.push(check(
            format!("p=512 Laplace at q={}", pt.q),
            pt.z().abs() <= 3.0,
            format!("{:.4} +- {:.4} vs {:.4}", pt.empirical, pt.stderr, pt.target),
        ));
    }
    out
}

fn o2_limit() -> Vec<Check> {
    let m = o2(H_MIN);
    let cfg = CascadeConfig::default();
    let mut out = Vec::new();
    let mut dist = Vec::new();
    let mut med = Vec::new();
    for p in [128u64, 512, 2048] {
        let b = sample_volumes(&m.law, p, &cfg, 2000, 7);
        let scale = (p as f64).ln() / m.ev.vbar(p as f64);
        let x: Vec<f64> = b.samples.iter().map(|s| s.v as f64 * scale).collect();
        med.push(median(x.clone()));
        dist.push(ks_report(x, inverse_exp_cdf));
    }
    out.push(ks_trend("KS to inverse-exponential nonincreasing in p", &dist));
    let target = 1.0 / 2f64.ln();
    let c = check(
        "median at p=2048 within 30% of 1/ln 2",
        (med[2] / target - 1.0).abs() <= 0.3,
        format!("medians {med:.4?} at p = 128, 512, 2048 vs {target:.4}"),
    );
    // logarithmic approach: tolerated while the median still climbs in p
    out.push(if med.windows(2).all(|w| w[1] >= w[0]) && med[2] < target { red(c) } else { c });
    let s = NuSampler::for_alpha(1.5, NuMethod::bridge_with_count(1.5, 100.0)).unwrap();
    let inv: Vec<f64> = (0..5000u64)
        .into_par_iter()
        .map(|i| {
            let c = grow_cascade(&s, 20, 0.02, 5_000_000, &mut stream(11, i)).unwrap();
            1.0 / c.generations[20].d
        })
        .collect();
    let d = ks(inv, exp_cdf);
    out.push(check("continuous cascade 1/D_20 vs Exp(1)", d <= 0.1, format!("KS {d:.4}")));
    out
}

fn exact_walk() -> WalkConfig {
    WalkConfig::default()
}

/// Generation-one `sum 1{g(chi)} V(chi) / V(p)`, one value per child set.
fn generation_one(m: &Model, p: u64, n: usize, g: impl Fn(u64) -> bool) -> Vec<f64> {
    let mut rng = stream(8, p);
    let mut buf = ChildSet::default();
    let vp = m.ev.vbar(p as f64);
    (0..n)
        .map(|_| {
            children_into(&m.law, p, WalkMode::NonpointedExact, &exact_walk(), &mut rng, &mut buf).unwrap();
            buf.half_perimeters.iter().filter(|&&c| g(c)).map(|&c| m.ev.vbar(c as f64) / vp).sum()
        })
        .collect()
}

fn y_hitting(p: f64, b: f64, m: f64, n: usize, seed: u64) -> (f64, f64) {
    let hits: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let mut y = p;
            loop {
                y *= sample_xi(&mut rng);
                if y < m {
                    return 1.0;
                }
                if y > b * p {
                    return 0.0;
                }
            }
        })
        .collect();
    mean_se(&hits)
}

fn spine() -> Vec<Check> {
    let mut out = Vec::new();
    let mo2 = o2(H_MIN);
    let mdense = model(1.0, Selector::Dense { h: 0.14 });
    let mdil = dilute();

    let k = SpineKernel::new(&mo2.law, &mo2.ev, KernelMethod::Exact);
    let p = 10_000u64;
    let tol = 5.0 / (p as f64).sqrt();
    let c = k.kernel_cdf(p);
    let sup = c.x.iter().zip(&c.cdf).map(|(x, f)| (f - xi_cdf(*x)).abs()).fold(0.0, f64::max);
    out.push(check("kernel CDF at p=1e4 vs arctan law", sup <= tol, format!("sup {sup:.2e} (tol {tol:.2e})")));

    let p = 40u64;
    for (label, m) in [("n=2", &mo2), ("n=1 dense", &mdense)] {
        let k = SpineKernel::new(&m.law, &m.ev, KernelMethod::Exact);
        let (cm, cse) = mean_se(&generation_one(m, p, 20_000, |c| 2 * c >= p));
        let mut rng = stream(9, 0);
        let hits: Vec<f64> = (0..200_000).map(|_| (2 * k.sample_exact(p, &mut rng) >= p) as u8 as f64).collect();
        let (sm, sse) = mean_se(&hits);
        let comb = (cse * cse + sse * sse).sqrt();
        out.push(check(
            format!("{label} many-to-one depth 1"),
            (cm - sm).abs() <= 3.0 * comb,
            format!("cascade {cm:.4} +- {cse:.4}, chain {sm:.4} +- {sse:.4}"),
        ));
    }
    let k = SpineKernel::new(&mdense.law, &mdense.ev, KernelMethod::Exact);
    let vp = mdense.ev.vbar(p as f64);
    let mut rng = stream(10, 0);
    let (mut buf, mut inner) = (ChildSet::default(), ChildSet::default());
    let cascade: Vec<f64> = (0..20_000)
        .map(|_| {
            children_into(&mdense.law, p, WalkMode::NonpointedExact, &exact_walk(), &mut rng, &mut buf).unwrap();
            let mut s = 0.0;
            for &c in buf.half_perimeters.iter().filter(|&&c| 2 * c >= p) {
                children_into(&mdense.law, c, WalkMode::NonpointedExact, &exact_walk(), &mut rng, &mut inner).unwrap();
                s += inner.half_perimeters.iter().filter(|&&d| 4 * d >= p).map(|&d| mdense.ev.vbar(d as f64)).sum::<f64>();
            }
            s / vp
        })
        .collect();
    let chain: Vec<f64> = (0..200_000)
        .map(|_| {
            let s1 = k.sample_exact(p, &mut rng);
            if 2 * s1 < p {
                return 0.0;
            }
            (4 * k.sample_exact(s1, &mut rng) >= p) as u8 as f64
        })
        .collect();
    let (cm, cse) = mean_se(&cascade);
    let (sm, sse) = mean_se(&chain);
    out.push(check(
        "n=1 dense many-to-one depth 2",
        (cm - sm).abs() <= 3.0 * (cse * cse + sse * sse).sqrt(),
        format!("cascade {cm:.4} +- {cse:.4}, chain {sm:.4} +- {sse:.4}"),
    ));

    let k = SpineKernel::new(&mdil.law, &mdil.ev, KernelMethod::Exact);
    let g = green_occupation(&k, 10_000, &StopRule::absorbed_only(1_000_000), 20, 20_000, 16).unwrap();
    let below = &g.mean[..9];
    let top = below.iter().cloned().fold(0.0, f64::max);
    let bottom = below.iter().cloned().fold(f64::INFINITY, f64::min);
    out.push(check(
        "n=sqrt2 green occupation bounded over 9 bands below p",
        top < 2.0 * bottom && bottom > 0.0,
        format!("band means in [{bottom:.3}, {top:.3}]"),
    ));

    let k = SpineKernel::new(&mo2.law, &mo2.ev, KernelMethod::Exact);
    let (b, m) = (4.0f64, 16u64);
    let mut grid: Vec<f64> = (1..=80).map(|i| i as f64 * 0.25).collect();
    grid.push(b.ln());
    grid.insert(0, 0.0);
    grid.sort_by(f64::total_cmp);
    let r = renewal_function(&grid, 100_000, 100_000, (5.0, 20.0), &mut stream(12, 0)).unwrap();
    let rb = r.r[grid.iter().position(|&x| x == b.ln()).unwrap()];
    let limit = rb / r.c0;
    for p in [1000u64, 10_000] {
        let h = hitting_probability(&k, p, b, m, 20_000, 1_000_000, 13).unwrap();
        out.push(red(check(
            format!("p={p} ln p P(hit) vs R(ln 4)/c0"),
            (h.scaled / limit - 1.0).abs() <= 0.25,
            format!("{:.3} +- {:.3} vs {limit:.3}", h.scaled, h.scaled_stderr),
        )));
        let (y, yse) = y_hitting(p as f64, b, m as f64, 200_000, p);
        let comb = (h.prob.stderr.powi(2) + yse * yse).sqrt();
        out.push(check(
            format!("p={p} chain hitting vs limit walk"),
            (h.prob.mean - y).abs() <= 3.0 * comb,
            format!("{:.5} vs {y:.5} (+- {comb:.5})", h.prob.mean),
        ));
    }
    out
}

fn gasket() -> Vec<Check> {
    let m = dilute();
    let p = 1024u64;
    let ms: Vec<u64> = (4..=32).collect();
    let cfg = CascadeConfig::default();
    let per: Vec<Vec<f64>> = (0..2000u64)
        .into_par_iter()
        .map(|i| {
            let c = sample_cascade(&m.law, p, Frontier::FreezeBelow(ms[0]), &cfg, mix_seed(9, i)).unwrap();
            // smallest chi on the path below the root
            let mut path_min = vec![u64::MAX; c.nodes.len()];
            for j in 1..c.nodes.len() {
                let parent = c.nodes[j].parent.unwrap();
                path_min[j] = c.nodes[j].chi.min(path_min[parent]);
            }
            ms.iter()
                .map(|&mm| {
                    c.nodes
                        .iter()
                        .zip(&path_min)
                        .filter(|(n, &pm)| pm >= mm && n.gasket.is_some())
                        .map(|(n, _)| n.gasket.unwrap() as f64)
                        .sum()
                })
                .collect()
        })
        .collect();
    let vbar = m.ev.vbar(p as f64);
    let x: Vec<f64> = ms.iter().map(|&mm| (mm as f64).ln()).collect();
    let y: Vec<f64> = (0..ms.len())
        .map(|j| (per.iter().map(|v| v[j]).sum::<f64>() / per.len() as f64 / vbar).ln())
        .collect();
    let fit = linear_fit(&x, &y).unwrap();
    let target = -m.table.params.beta_alpha;
    vec![check(
        "n=sqrt2 p=1024 M-exponent of E|g_M| / V(p)",
        (fit.slope - target).abs() <= 0.15,
        format!("{:.4} +- {:.4} vs {target:.4}", fit.slope, fit.slope_se),
    )]
}

fn martingales() -> Vec<Check> {
    let mut out = Vec::new();
    for alpha in [1.25, 1.5, 1.75] {
        let s = NuSampler::for_alpha(alpha, NuMethod::bridge_with_count(alpha, 300.0)).unwrap();
        let thetas: Vec<f64> = (1..=5).map(|i| alpha + 0.15 * i as f64).collect();
        let est = biggins_estimate(&s, &thetas, 100_000, &mut stream(3, (alpha * 100.0) as u64)).unwrap();
        for (t, e) in thetas.iter().zip(&est) {
            let target = phi_alpha(alpha, *t);
            out.push(check(
                format!("alpha={alpha} theta={t:.2} power sum"),
                (e.mean - target).abs() <= 3.0 * e.stderr,
                format!("{:.4} +- {:.4} vs {target:.4}", e.mean, e.stderr),
            ));
        }
    }
    let s = NuSampler::for_alpha(1.75, NuMethod::bridge_with_count(1.75, 100.0)).unwrap();
    let gens: Vec<Vec<f64>> = (0..2000u64)
        .into_par_iter()
        .map(|i| {
            let c = grow_cascade(&s, 4, 0.1, 1_000_000, &mut stream(6, i)).unwrap();
            c.generations.iter().map(|g| g.w).collect()
        })
        .collect();
    for l in 1..=4 {
        let (m, se) = mean_se(&gens.iter().map(|g| g[l]).collect::<Vec<_>>());
        out.push(check(format!("alpha=1.75 mean W_{l}"), (m - 1.0).abs() <= 3.0 * se, format!("{m:.4} +- {se:.4}")));
    }
    let bridge = NuSampler::for_alpha(1.75, NuMethod::bridge_with_count(1.75, 300.0)).unwrap();
    let pop = martingale_population(&bridge, 12, 20_000, 3, &mut stream(7, 0)).unwrap();
    let d = ks(pop[12].iter().map(|p| p.w).collect(), |w| inverse_gamma_cdf(1.25, 0.25, w));
    out.push(check("alpha=1.75 W_12 vs inverse-Gamma(5/4, 1/4)", d <= 0.05, format!("KS {d:.4}")));
    out
}

fn main() {
    let criteria: [(u32, &str, fn() -> Vec<Check>); 10] = [
        (1, "identities", identities),
        (2, "coefficient cross-validation", coefficients),
        (3, "exponents", exponents),
        (4, "walk layer", walks),
        (5, "volume mean", volume_mean),
        (6, "dilute limit law", dilute_limit),
        (7, "n=2 limit law", o2_limit),
        (8, "spine layer", spine),
        (9, "gasket estimate", gasket),
        (10, "continuous-cascade martingales", martingales),
    ];
    let only: Option<Vec<u32>> = std::env::var("LOOPON_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let checks = run();
        let pass = checks.iter().all(|c| c.pass);
        let tolerated = checks.iter().all(|c| c.pass || c.known_red);
        let verdict = match (pass, tolerated) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known red)",
            _ => "FAIL",
        };
        println!("criterion {id:>2} {name}: {verdict} [{:.0}s]", start.elapsed().as_secs_f64());
        for c in &checks {
            let mark = if c.pass { "ok  " } else if c.known_red { "red " } else { "FAIL" };
            println!("    {mark} {}: {}", c.name, c.detail);
        }
        if !tolerated {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures in criteria {unexpected:?}");
        std::process::exit(1);
    }
}
