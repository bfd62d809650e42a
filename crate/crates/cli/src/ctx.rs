use loopon::error::Error;
use loopon::io::{
    fk_cache_name, read_fk_cache, write_csv, write_fk_cache, write_jsonl, CacheRef, ConfigValue, RunManifest,
    SEED_RULE, TOOL_VERSION,
};
use loopon::params::{derive_params, CriticalParams, Selector};
use loopon::partition::{fk_table, offspring_law, FkMethod, OffspringLaw, PartitionTable};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::args::{PointArgs, RegimeArg, TableArgs};

/// Failure of a command, with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Failure {
        Failure { code: 2, message: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            Error::Config(_)
            | Error::Parse(_)
            | Error::InvalidArgument(_)
            | Error::OutOfPhase(_)
            | Error::DegenerateWeight(_)
            | Error::NotO2(_)
            | Error::TableTooSmall { .. } => 2,
            Error::MemoryGuard { .. } | Error::RunawayGuard { .. } => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure { code: 1, message: e.to_string() }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

/// One command invocation: collects the manifest and the files written.
pub struct Ctx {
    pub manifest: RunManifest,
    pub out: PathBuf,
    start: Instant,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    pub fn new(command: &str, args: BTreeMap<String, ConfigValue>, out: &Path) -> Ctx {
        let get = |k: &str| args.get(k).and_then(|v| crate::args::int(&v.to_arg()).ok());
        let master_seed = get("seed").unwrap_or(0);
        let replicas = get("replicas").unwrap_or(0) as usize;
        Ctx {
            manifest: RunManifest {
                tool_version: TOOL_VERSION.to_string(),
                params: None,
                command: command.to_string(),
                args,
                master_seed,
                replicas,
                seed_rule: SEED_RULE.to_string(),
                cache_files: Vec::new(),
                outputs: Vec::new(),
                wall_time_s: 0.0,
                error: None,
            },
            out: out.to_path_buf(),
            start: Instant::now(),
            outputs: Vec::new(),
        }
    }

    fn create(&mut self, name: &str) -> CmdResult<BufWriter<File>> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        self.outputs.push(path.clone());
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CmdResult<()> {
        let meta = self.manifest.core();
        let mut w = self.create(name)?;
        write_csv(&mut w, &meta, header, rows)?;
        w.flush()?;
        Ok(())
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> CmdResult<()> {
        let meta = self.manifest.core();
        let mut w = self.create(name)?;
        write_jsonl(&mut w, &meta, records)?;
        w.flush()?;
        Ok(())
    }

    pub fn register_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Write `<command>.manifest.json`; returns its path.
    pub fn finish(mut self, error: Option<String>) -> CmdResult<PathBuf> {
        self.manifest.wall_time_s = self.start.elapsed().as_secs_f64();
        self.manifest.error = error;
        self.manifest.outputs = self.outputs.iter().map(|p| CacheRef::of(p)).collect::<Result<_, _>>()?;
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(format!("{}.manifest.json", self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Failure { code: 1, message: e.to_string() })?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

pub fn resolve_point(pa: &PointArgs) -> CmdResult<CriticalParams> {
    let regime = pa.regime.unwrap_or(if pa.n == 2.0 {
        RegimeArg::O2
    } else if pa.h.is_some() {
        RegimeArg::Dense
    } else {
        RegimeArg::Dilute
    });
    let need_h = || pa.h.ok_or_else(|| Failure::config("--h is required for dense and n = 2 points"));
    let selector = match regime {
        RegimeArg::Dilute => {
            if pa.h.is_some() {
                return Err(Failure::config("--h is determined by n on the dilute point; drop it"));
            }
            Selector::Dilute
        }
        RegimeArg::Dense => Selector::Dense { h: need_h()? },
        RegimeArg::O2 => Selector::O2 { h: need_h()? },
    };
    Ok(derive_params(pa.n, selector)?)
}

/// Fetch the coefficient table from the cache directory, computing and
/// storing it when absent or stale.
pub fn load_table(
    params: &CriticalParams,
    ta: &TableArgs,
    method: Option<FkMethod>,
    ctx: &mut Ctx,
) -> CmdResult<(PartitionTable, PathBuf)> {
    let method = method.unwrap_or_else(|| PartitionTable::default_method(params));
    let path = ta.cache_dir.join(fk_cache_name(params, ta.k_max));
    let cached = File::open(&path).ok().and_then(|f| match read_fk_cache(BufReader::new(f)) {
        Ok(t) if t.params == *params && t.k_max == ta.k_max && t.method == method => Some(t),
        Ok(_) => None,
        Err(e) => {
            log::warn!("ignoring damaged cache {}: {e}", path.display());
            None
        }
    });
    let table = match cached {
        Some(t) => t,
        None => {
            let t = fk_table(params, ta.k_max, method)?;
            std::fs::create_dir_all(&ta.cache_dir)?;
            let tmp = path.with_extension(format!("csv.{}.tmp", std::process::id()));
            {
                let mut w = BufWriter::new(File::create(&tmp)?);
                write_fk_cache(&mut w, &t)?;
                w.flush()?;
            }
            std::fs::rename(&tmp, &path)?;
            t
        }
    };
    ctx.manifest.cache_files.push(CacheRef::of(&path)?);
    Ok((table, path))
}

pub struct Model {
    pub params: CriticalParams,
    pub table: PartitionTable,
    pub law: OffspringLaw,
}

pub fn load_model(pa: &PointArgs, ta: &TableArgs, ctx: &mut Ctx) -> CmdResult<Model> {
    let params = resolve_point(pa)?;
    ctx.manifest.params = Some(params);
    let (table, _) = load_table(&params, ta, None, ctx)?;
    let law = offspring_law(&table)?;
    Ok(Model { params, table, law })
}

pub fn fmt(x: f64) -> String {
    format!("{x:?}")
}
