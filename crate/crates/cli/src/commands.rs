use loopon::cascade_continuous::{grow_cascade, NuMethod, NuSampler};
use loopon::cascade_discrete::{sample_cascade, sample_volumes, CascadeConfig, Frontier};
use loopon::io::{parse_meta_line, RunManifest};
use loopon::limitlaws::{
    dense_w_laplace, dilute_w_laplace, laplace_compare, phi_alpha, theta_root, EmpiricalLaw,
};
use loopon::partition::{identity_report, ExpectedVolume, FkMethod};
use loopon::rng::{mix_seed, stream};
use loopon::spine::{
    coupling_frequency, green_occupation, hitting_probability, spine_path, KernelMethod, SpineKernel, StopReason,
    StopRule,
};
use loopon::walk::{kemperman_check, StepTest, WalkConfig, WalkMode};
use rayon::prelude::*;
use serde::Serialize;
use std::io::BufRead;
use std::path::Path;

use crate::args::*;
use crate::ctx::{fmt, load_model, load_table, resolve_point, CmdResult, Ctx, Failure, Model};

pub fn params(pa: &PointArgs) -> CmdResult<()> {
    let p = resolve_point(pa)?;
    println!("{}", serde_json::to_string_pretty(&p).expect("params serialize"));
    Ok(())
}

pub fn fk(a: &FkArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let params = resolve_point(&a.point)?;
    ctx.manifest.params = Some(params);
    let method = match &a.method {
        Some(m) => Some(m.parse::<FkMethod>()?),
        None => None,
    };
    let (table, path) = load_table(&params, &a.table, method, ctx)?;
    if let Some(cc) = &table.cross_check {
        eprintln!("cross-check against {}: max relative difference {:e}", cc.method, cc.max_rel_diff);
    }
    ctx.register_output(&path);
    println!("{}", path.display());
    Ok(())
}

pub fn mujs(a: &MujsArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let rows: Vec<Vec<String>> = (0..=a.k_out).map(|k| vec![k.to_string(), fmt(m.law.pmf_at(k))]).collect();
    ctx.csv("mujs.csv", &["k", "mu_js"], &rows)
}

/// Returns `false` when a check fails its tolerance.
pub fn identities(a: &IdentitiesArgs, ctx: &mut Ctx) -> CmdResult<bool> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let report = identity_report(&m.table, &m.law, a.l_max)?;
    let rows: Vec<Vec<String>> = report
        .iter()
        .map(|r| vec![r.name.clone(), fmt(r.value), fmt(r.tolerance), r.pass.to_string()])
        .collect();
    ctx.csv("identities.csv", &["check", "value", "tolerance", "pass"], &rows)?;
    for r in report.iter().filter(|r| !r.pass) {
        eprintln!("identity {} = {:e} exceeds {:e}", r.name, r.value, r.tolerance);
    }
    Ok(report.iter().all(|r| r.pass))
}

fn walk_config(w: &WalkArgs) -> (WalkMode, WalkConfig) {
    let mode = match w.mode {
        ModeArg::PointedRaw => WalkMode::PointedRaw,
        ModeArg::NonpointedCapped => WalkMode::NonpointedCapped,
        ModeArg::NonpointedExact => WalkMode::NonpointedExact,
    };
    (mode, WalkConfig { max_steps: w.max_walk_steps, kappa: w.kappa, thin_degree4: true })
}

pub fn walk_check(a: &WalkCheckArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let (_, cfg) = walk_config(&a.walk);
    let tests = [StepTest::DownStep, StepTest::LargeFace(a.face_m), StepTest::Constant];
    let res = kemperman_check(&m.law, a.p, &tests, a.replicas, &cfg, &mut stream(a.seed.seed, 0))?;
    let rows: Vec<Vec<String>> = res
        .iter()
        .map(|r| vec![r.test.clone(), fmt(r.lhs), fmt(r.rhs), fmt(r.stderr), r.n.to_string()])
        .collect();
    if let Some(c) = res.first().map(|r| r.censored).filter(|c| *c > 0) {
        eprintln!("{c} excursions hit the step cap");
    }
    ctx.csv("walk_check.csv", &["test", "lhs", "rhs", "stderr", "N"], &rows)
}

pub fn cascade(a: &CascadeArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let (mode, walk) = walk_config(&a.walk);
    let cfg = CascadeConfig { walk, mode, vertex_cap: a.vertex_cap };
    let frontier = match a.freeze_below {
        Some(b) => Frontier::FreezeBelow(b),
        None => Frontier::MaxDepth(a.generations as u32),
    };
    let seed = a.seed.seed;
    let trees = (0..a.replicas as u64)
        .into_par_iter()
        .map(|i| sample_cascade(&m.law, a.p, frontier, &cfg, mix_seed(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, t) in trees.iter().enumerate() {
        for (j, n) in t.nodes.iter().enumerate() {
            rows.push(vec![
                i.to_string(),
                n.generation.to_string(),
                j.to_string(),
                n.parent.map(|p| p.to_string()).unwrap_or_default(),
                n.rank.to_string(),
                n.chi.to_string(),
            ]);
        }
    }
    ctx.csv("cascade.csv", &["replica", "generation", "node", "parent", "rank", "chi"], &rows)
}

#[derive(Serialize)]
struct VolumeRecord {
    p: u64,
    #[serde(rename = "V")]
    v: u64,
    weight: f64,
    cap_hits: u64,
    seed: u64,
}

pub fn volume(a: &VolumeArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let (mode, walk) = walk_config(&a.walk);
    let cfg = CascadeConfig { walk, mode, vertex_cap: a.vertex_cap };
    let batch = sample_volumes(&m.law, a.p, &cfg, a.replicas, a.seed.seed);
    if batch.discarded + batch.runaway > 0 {
        eprintln!("{} replicas over the vertex cap, {} over the step cap (not written)", batch.discarded, batch.runaway);
    }
    if batch.samples.is_empty() && a.replicas > 0 {
        return Err(Failure { code: 4, message: "every replica tripped a resource guard".into() });
    }
    let recs: Vec<VolumeRecord> = batch
        .samples
        .iter()
        .map(|s| VolumeRecord { p: s.p, v: s.v, weight: s.log_weight.exp(), cap_hits: s.cap_hits, seed: s.seed })
        .collect();
    ctx.jsonl("volume.jsonl", &recs)
}

pub fn cont_cascade(a: &ContCascadeArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let method = match a.nu {
        NuArg::Bridge => NuMethod::bridge_with_count(m.params.alpha, a.bridge_count),
        NuArg::WalkLimit => NuMethod::WalkLimit { p0: a.walk_p0 },
    };
    let sampler = NuSampler::new(&m.params, method, Some(&m.law))?;
    let seed = a.seed.seed;
    let runs = (0..a.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let s = mix_seed(seed, i);
            grow_cascade(&sampler, a.generations as u32, a.child_floor, a.node_cap, &mut stream(seed, i)).map(|c| (s, c))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (s, c) in &runs {
        for g in &c.generations {
            rows.push(vec![g.generation.to_string(), fmt(g.w), fmt(g.d), fmt(g.truncated_mass), s.to_string()]);
        }
    }
    ctx.csv("cont_cascade.csv", &["ell", "W", "D", "truncated_mass", "seed"], &rows)
}

fn kernel<'a>(m: &'a Model, ev: &'a ExpectedVolume, k: &KernelArgs, seed: u64) -> SpineKernel<'a> {
    let method = match k.kernel {
        KernelArg::Exact => KernelMethod::Exact,
        KernelArg::Tabulated => KernelMethod::Tabulated { n_tab: k.n_tab },
        KernelArg::Sir => KernelMethod::Sir { n_cand: k.n_cand },
    };
    let mut kern = SpineKernel::new(&m.law, ev, method);
    kern.table_seed = mix_seed(seed, u64::MAX);
    kern
}

#[derive(Serialize)]
struct PathRecord<'a> {
    replica: u64,
    seed: u64,
    method: &'static str,
    stop: StopReason,
    absorbed: bool,
    cap_hits: u64,
    clip_events: u64,
    states: &'a [u64],
}

pub fn spine(a: &SpineArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let ev = ExpectedVolume::for_law(&m.law, &m.table)?;
    let kern = kernel(&m, &ev, &a.kernel, a.seed.seed);
    let rule = StopRule { max_steps: a.kernel.max_steps, below: a.below, above: a.above };
    let seed = a.seed.seed;
    let paths = (0..a.replicas as u64)
        .into_par_iter()
        .map(|i| spine_path(&kern, a.p, &rule, &mut stream(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let recs: Vec<PathRecord> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| PathRecord {
            replica: i as u64,
            seed: mix_seed(seed, i as u64),
            method: p.method.name(),
            stop: p.stop,
            absorbed: p.absorbed,
            cap_hits: p.cap_hits,
            clip_events: p.clip_events,
            states: &p.states,
        })
        .collect();
    ctx.jsonl("spine.jsonl", &recs)
}

pub fn green(a: &GreenArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let ev = ExpectedVolume::for_law(&m.law, &m.table)?;
    let kern = kernel(&m, &ev, &a.kernel, a.seed.seed);
    let rule = StopRule { max_steps: a.kernel.max_steps, below: a.below, above: a.above };
    let g = green_occupation(&kern, a.p, &rule, a.bands as u32, a.replicas, a.seed.seed)?;
    let rows: Vec<Vec<String>> = (0..g.t.len())
        .map(|i| vec![g.t[i].to_string(), fmt(g.mean[i]), fmt(g.stderr[i]), g.n.to_string(), g.censored.to_string()])
        .collect();
    ctx.csv("green.csv", &["t", "mean", "stderr", "N", "censored"], &rows)
}

pub fn hitting(a: &HittingArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let ev = ExpectedVolume::for_law(&m.law, &m.table)?;
    let kern = kernel(&m, &ev, &a.kernel, a.seed.seed);
    let h = hitting_probability(&kern, a.p, a.b, a.m, a.replicas, a.kernel.max_steps, a.seed.seed)?;
    let row = vec![
        h.p.to_string(),
        fmt(h.b),
        h.m.to_string(),
        fmt(h.prob.mean),
        fmt(h.prob.stderr),
        fmt(h.scaled),
        fmt(h.scaled_stderr),
        h.prob.n.to_string(),
        h.censored.to_string(),
    ];
    ctx.csv("hitting.csv", &["p", "b", "m", "prob", "stderr", "scaled", "scaled_stderr", "N", "censored"], &[row])
}

pub fn coupling(a: &CouplingArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let m = load_model(&a.point, &a.table, ctx)?;
    let ev = ExpectedVolume::for_law(&m.law, &m.table)?;
    let kern = kernel(&m, &ev, &a.kernel, a.seed.seed);
    let c = coupling_frequency(&kern, a.p, a.m, a.a, a.replicas, a.kernel.max_steps, a.seed.seed);
    let row = vec![
        c.p.to_string(),
        fmt(c.m),
        fmt(c.a),
        c.n.to_string(),
        c.successes.to_string(),
        c.censored.to_string(),
        fmt(c.frequency),
        fmt(c.stderr),
    ];
    ctx.csv("coupling.csv", &["p", "m", "a", "N", "successes", "censored", "frequency", "stderr"], &[row])
}

/// Skip the metadata line of a data file and return it with a CSV reader
/// over the rest.
fn open_data(path: &Path) -> CmdResult<(Option<RunManifest>, csv::Reader<std::io::BufReader<std::fs::File>>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut first = String::new();
    r.read_line(&mut first)?;
    let meta = parse_meta_line::<RunManifest>(&first).ok();
    if meta.is_none() {
        return Err(Failure::config(format!("{} has no metadata line", path.display())));
    }
    Ok((meta, csv::Reader::from_reader(r)))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> CmdResult<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Failure::config(format!("{} has no '{name}' column", path.display())))
}

pub fn limits(a: &LimitsArgs, ctx: &mut Ctx) -> CmdResult<()> {
    let header = ["quantity", "alpha", "arg", "value", "reference", "stderr"];
    let mut rows = Vec::new();
    for &alpha in &a.alpha {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Failure::config(format!("alpha = {alpha} outside (1, 2)")));
        }
        let th = theta_root(alpha);
        rows.push(vec!["theta_root".into(), fmt(alpha), String::new(), fmt(th), fmt(th.min(2.0 * alpha - 1.0).min(2.0)), String::new()]);
        for &t in &a.theta {
            rows.push(vec!["phi".into(), fmt(alpha), fmt(t), fmt(phi_alpha(alpha, t)), String::new(), String::new()]);
        }
        for &q in &a.q {
            // dilute points have alpha >= 3/2, dense ones alpha <= 3/2
            if alpha >= 1.5 {
                let v = dilute_w_laplace(alpha, q)?;
                rows.push(vec!["w_laplace_dilute".into(), fmt(alpha), fmt(q), fmt(v), String::new(), String::new()]);
            }
            if alpha <= 1.5 {
                let v = dense_w_laplace(alpha, q)?;
                rows.push(vec!["w_laplace_dense".into(), fmt(alpha), fmt(q), fmt(v), String::new(), String::new()]);
            }
        }
    }
    if let Some(path) = &a.compare {
        let (meta, mut rdr) = open_data(path)?;
        let alpha = meta
            .and_then(|m| m.params)
            .map(|p| p.alpha)
            .ok_or_else(|| Failure::config(format!("{} does not record parameters", path.display())))?;
        let h = rdr.headers().map_err(|e| Failure::config(e.to_string()))?.clone();
        let (ci, wi) = (column(&h, "ell", path)?, column(&h, "W", path)?);
        let mut by_gen: Vec<(u64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Failure::config(e.to_string()))?;
            let g = rec[ci].parse::<u64>().map_err(|e| Failure::config(e.to_string()))?;
            let w = rec[wi].parse::<f64>().map_err(|e| Failure::config(e.to_string()))?;
            by_gen.push((g, w));
        }
        let gen = a.generation.or_else(|| by_gen.iter().map(|x| x.0).max()).unwrap_or(0);
        let ws: Vec<f64> = by_gen.iter().filter(|x| x.0 == gen).map(|x| x.1).collect();
        let law = EmpiricalLaw::new(ws);
        let pts = match a.law {
            LawArg::Dilute => laplace_compare(&law, &a.q, |q| dilute_w_laplace(alpha, q))?,
            LawArg::Dense => laplace_compare(&law, &a.q, |q| dense_w_laplace(alpha, q))?,
        };
        for p in pts {
            rows.push(vec![format!("w_laplace_empirical_ell{gen}"), fmt(alpha), fmt(p.q), fmt(p.empirical), fmt(p.target), fmt(p.stderr)]);
        }
    }
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(header).map_err(|e| Failure::config(e.to_string()))?;
    for r in &rows {
        w.write_record(r).map_err(|e| Failure::config(e.to_string()))?;
    }
    w.flush()?;
    ctx.csv("limits.csv", &header, &rows)
}

/// Returns `false` when a summarized check fails.
pub fn report(a: &ReportArgs, ctx: &mut Ctx) -> CmdResult<bool> {
    let mut files: Vec<_> = std::fs::read_dir(&a.dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut all_pass = true;
    let mut push = |rows: &mut Vec<Vec<String>>, file: &Path, crit: &str, check: String, value: f64, pass: bool| {
        all_pass &= pass;
        let name = file.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(vec![crit.into(), name, check, fmt(value), pass.to_string()]);
    };
    for path in &files {
        let Ok((Some(meta), mut rdr)) = open_data(path) else { continue };
        let h = rdr.headers().map_err(|e| Failure::config(e.to_string()))?.clone();
        let recs: Vec<csv::StringRecord> = rdr.records().filter_map(|r| r.ok()).collect();
        let num = |r: &csv::StringRecord, i: usize| r.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
        match meta.command.as_str() {
            "identities" => {
                let (vi, ti) = (column(&h, "value", path)?, column(&h, "tolerance", path)?);
                for r in &recs {
                    let (v, t) = (num(r, vi), num(r, ti));
                    push(&mut rows, path, "1", r[0].to_string(), v, v.abs() <= t);
                }
            }
            "walk-check" => {
                let (li, ri, si) = (column(&h, "lhs", path)?, column(&h, "rhs", path)?, column(&h, "stderr", path)?);
                for r in &recs {
                    let z = (num(r, li) - num(r, ri)) / num(r, si);
                    let z = if z.is_nan() { 0.0 } else { z };
                    push(&mut rows, path, "4", format!("{}_z", &r[0]), z, z.abs() <= 3.0);
                }
            }
            "green" => {
                let mi = column(&h, "mean", path)?;
                let means: Vec<f64> = recs.iter().map(|r| num(r, mi)).filter(|v| *v > 0.0).collect();
                let bounded = means.iter().all(|v| v.is_finite());
                push(&mut rows, path, "8", "occupied_bands".into(), means.len() as f64, bounded && means.len() >= 6);
            }
            "hitting" => {
                let (si, ei) = (column(&h, "scaled", path)?, column(&h, "scaled_stderr", path)?);
                for r in &recs {
                    push(&mut rows, path, "8", "ln_p_times_prob".into(), num(r, si), num(r, ei).is_finite());
                }
            }
            "coupling" => {
                let fi = column(&h, "frequency", path)?;
                for r in &recs {
                    push(&mut rows, path, "8", "coupling_frequency".into(), num(r, fi), true);
                }
            }
            "cont-cascade" => {
                let (gi, wi) = (column(&h, "ell", path)?, column(&h, "W", path)?);
                let gmax = recs.iter().map(|r| num(r, gi) as u64).max().unwrap_or(0);
                for g in 0..=gmax {
                    let ws: Vec<f64> = recs.iter().filter(|r| num(r, gi) as u64 == g).map(|r| num(r, wi)).collect();
                    let e = loopon::cascade_discrete::Estimate::from_values(&ws);
                    let ok = ws.len() < 2 || (e.mean - 1.0).abs() <= 3.0 * e.stderr.max(1e-12);
                    push(&mut rows, path, "10", format!("w_mean_ell{g}"), e.mean, ok);
                }
            }
            "limits" => {
                let (vi, ri, si) = (column(&h, "value", path)?, column(&h, "reference", path)?, column(&h, "stderr", path)?);
                for r in &recs {
                    let (v, rf, se) = (num(r, vi), num(r, ri), num(r, si));
                    if r[0].starts_with("theta_root") {
                        push(&mut rows, path, "3", format!("theta_root_{}", &r[1]), v - rf, (v - rf).abs() <= 1e-10);
                    } else if r[0].starts_with("w_laplace_empirical") {
                        let z = (v - rf) / se;
                        push(&mut rows, path, "6", format!("{}_q{}", &r[0], &r[2]), z, z.abs() <= 3.0);
                    }
                }
            }
            _ => {}
        }
    }
    let header = ["criterion", "file", "check", "value", "pass"];
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(header).map_err(|e| Failure::config(e.to_string()))?;
    for r in &rows {
        w.write_record(r).map_err(|e| Failure::config(e.to_string()))?;
    }
    w.flush()?;
    ctx.csv("report.csv", &header, &rows)?;
    Ok(all_pass)
}
