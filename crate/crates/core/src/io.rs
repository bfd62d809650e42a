//! File formats: constant expressions, `#`-prefixed metadata lines, the
//! coefficient cache, CSV/JSONL outputs, run configs and manifests.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::params::CriticalParams;
use crate::partition::{FkMethod, PartitionTable};
use crate::partition::table::CrossCheck;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const EXPR_MAX_LEN: usize = 256;
const EXPR_MAX_DEPTH: usize = 64;

/// Evaluate a constant expression such as `4/(3pi^2)` or `sqrt(2)`.
///
/// Numbers, `pi`, `e`, the functions `sqrt ln exp abs`, `+ - * / ^`,
/// parentheses and implicit multiplication (`3pi`). `^` is right
/// associative and binds tighter than unary minus; implicit products have
/// the precedence of `*` (so `4/3pi` is `(4/3) pi`).
pub fn parse_expr(src: &str) -> Result<f64> {
    if src.len() > EXPR_MAX_LEN {
        return Err(Error::Parse(format!("expression longer than {EXPR_MAX_LEN} bytes")));
    }
    let mut p = ExprParser { s: src.as_bytes(), i: 0, depth: 0 };
    let v = p.expr()?;
    p.skip_ws();
    if p.i != p.s.len() {
        return Err(p.error("unexpected trailing input"));
    }
    if !v.is_finite() {
        return Err(Error::Parse(format!("'{src}' is not finite")));
    }
    Ok(v)
}

struct ExprParser<'a> {
    s: &'a [u8],
    i: usize,
    depth: usize,
}

impl ExprParser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Parse(format!("{msg} at byte {}", self.i))
    }

    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.i).copied()
    }

    fn enter(&mut self) -> Result<()> {
        self.depth += 1;
        if self.depth > EXPR_MAX_DEPTH {
            return Err(self.error("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<f64> {
        self.enter()?;
        let mut v = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.i += 1;
            let r = self.term()?;
            v = if c == b'+' { v + r } else { v - r };
        }
        self.depth -= 1;
        Ok(v)
    }

    fn term(&mut self) -> Result<f64> {
        let mut v = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.i += 1;
                    v *= self.unary()?;
                }
                Some(b'/') => {
                    self.i += 1;
                    v /= self.unary()?;
                }
                Some(c) if c == b'(' || c == b'.' || c.is_ascii_alphanumeric() => v *= self.power()?,
                _ => return Ok(v),
            }
        }
    }

    fn unary(&mut self) -> Result<f64> {
        match self.peek() {
            Some(b'-') => {
                self.i += 1;
                self.enter()?;
                let v = -self.unary()?;
                self.depth -= 1;
                Ok(v)
            }
            Some(b'+') => {
                self.i += 1;
                self.enter()?;
                let v = self.unary()?;
                self.depth -= 1;
                Ok(v)
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<f64> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.i += 1;
            self.enter()?;
            let e = self.unary()?;
            self.depth -= 1;
            return Ok(base.powf(e));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<f64> {
        match self.peek() {
            Some(b'(') => {
                self.i += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.i += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.i;
                while self.i < self.s.len() && self.s[self.i].is_ascii_alphabetic() {
                    self.i += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.i]).unwrap();
                match name {
                    "pi" => Ok(std::f64::consts::PI),
                    "e" => Ok(std::f64::consts::E),
                    "sqrt" | "ln" | "exp" | "abs" => {
                        if self.peek() != Some(b'(') {
                            return Err(self.error("expected '(' after function name"));
                        }
                        let x = self.primary()?;
                        Ok(match name {
                            "sqrt" => x.sqrt(),
                            "ln" => x.ln(),
                            "exp" => x.exp(),
                            _ => x.abs(),
                        })
                    }
                    _ => Err(Error::Parse(format!("unknown name '{name}'"))),
                }
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let s = self.s;
        let start = self.i;
        while self.i < s.len() && (s[self.i].is_ascii_digit() || s[self.i] == b'.') {
            self.i += 1;
        }
        // an exponent needs digits; a bare `e` is the constant
        if self.i < s.len() && (s[self.i] == b'e' || s[self.i] == b'E') {
            let mut j = self.i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                self.i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..self.i]).unwrap();
        text.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{text}'")))
    }
}

/// Write the `#`-prefixed JSON metadata line.
pub fn write_meta_line<W: Write, T: Serialize>(w: &mut W, meta: &T) -> Result<()> {
    let json = serde_json::to_string(meta).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w, "#{json}")?;
    Ok(())
}

/// Parse a `#`-prefixed JSON metadata line.
pub fn parse_meta_line<T: DeserializeOwned>(line: &str) -> Result<T> {
    let body = line
        .trim_end_matches(['\n', '\r'])
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("metadata line must start with '#'".into()))?;
    serde_json::from_str(body).map_err(|e| Error::Parse(format!("metadata: {e}")))
}

/// Metadata of a coefficient cache file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FkMeta {
    pub params: CriticalParams,
    pub method: FkMethod,
    pub k_max: usize,
    pub tail_constant: f64,
    pub cross_check: Option<CrossCheck>,
    pub tool_version: String,
}

/// `fk_<n>_<h>_<Kmax>.csv`.
pub fn fk_cache_name(params: &CriticalParams, k_max: usize) -> String {
    format!("fk_{}_{}.csv", params.tag(), k_max)
}

pub fn write_fk_cache<W: Write>(w: &mut W, table: &PartitionTable) -> Result<()> {
    let meta = FkMeta {
        params: table.params,
        method: table.method,
        k_max: table.k_max,
        tail_constant: table.tail_constant,
        cross_check: table.cross_check.clone(),
        tool_version: TOOL_VERSION.to_string(),
    };
    write_meta_line(w, &meta)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["k", "s_k"]).map_err(csv_err)?;
    for (k, s) in table.s.iter().enumerate() {
        // shortest representation that round-trips
        csv.write_record([k.to_string(), format!("{s:?}")]).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Read a coefficient cache; rows must be `k = 0..=K_max` in order with
/// finite positive `s_k`.
pub fn read_fk_cache<R: BufRead>(mut r: R) -> Result<PartitionTable> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let meta: FkMeta = parse_meta_line(&first)?;
    if meta.k_max > 100_000_000 {
        return Err(Error::Parse(format!("implausible K_max {}", meta.k_max)));
    }
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(csv_err)?;
    if headers.len() != 2 || &headers[0] != "k" || &headers[1] != "s_k" {
        return Err(Error::Parse("cache header must be 'k,s_k'".into()));
    }
    let mut s = Vec::with_capacity(meta.k_max.min(1 << 20) + 1);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(Error::Parse("cache rows need two fields".into()));
        }
        let k: usize = rec[0].trim().parse().map_err(|_| Error::Parse(format!("bad k '{}'", &rec[0])))?;
        let v: f64 = rec[1].trim().parse().map_err(|_| Error::Parse(format!("bad s_k '{}'", &rec[1])))?;
        if k != s.len() {
            return Err(Error::Parse(format!("row k = {k} out of order (expected {})", s.len())));
        }
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Parse(format!("s_{k} = {v} is not finite and positive")));
        }
        if k > meta.k_max {
            return Err(Error::Parse(format!("row k = {k} beyond K_max = {}", meta.k_max)));
        }
        s.push(v);
    }
    if s.len() != meta.k_max + 1 {
        return Err(Error::Parse(format!("cache has {} rows, expected {}", s.len(), meta.k_max + 1)));
    }
    if !meta.tail_constant.is_finite() {
        return Err(Error::Parse("tail constant is not finite".into()));
    }
    Ok(PartitionTable {
        params: meta.params,
        k_max: meta.k_max,
        s,
        tail_constant: meta.tail_constant,
        method: meta.method,
        cross_check: meta.cross_check,
    })
}

/// Write records as JSON lines after a metadata line.
pub fn write_jsonl<W: Write, M: Serialize, T: Serialize>(w: &mut W, meta: &M, records: &[T]) -> Result<()> {
    write_meta_line(w, meta)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Read JSON lines; an optional leading `#` metadata line is returned
/// separately, blank lines are skipped.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R) -> Result<(Option<serde_json::Value>, Vec<T>)> {
    let mut meta = None;
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.starts_with('#') {
            meta = Some(parse_meta_line(&line)?);
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok((meta, out))
}

/// Write a CSV table after a metadata line.
pub fn write_csv<W: Write, M: Serialize>(w: &mut W, meta: &M, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_meta_line(w, meta)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header).map_err(csv_err)?;
    for row in rows {
        csv.write_record(row).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// A scalar config value (numbers may also be given as expressions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ConfigValue {
    /// Text as it would be passed on the command line.
    pub fn to_arg(&self) -> String {
        match self {
            ConfigValue::Bool(b) => b.to_string(),
            ConfigValue::Int(i) => i.to_string(),
            ConfigValue::Float(x) => format!("{x:?}"),
            ConfigValue::Str(s) => s.clone(),
        }
    }
}

/// A run described in a TOML or JSON file: the subcommand and its flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    #[serde(default)]
    pub args: BTreeMap<String, ConfigValue>,
}

impl RunConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let ok_name = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if !ok_name(&self.command) {
            return Err(Error::Config(format!("bad command '{}'", self.command)));
        }
        if let Some(k) = self.args.keys().find(|k| !ok_name(k)) {
            return Err(Error::Config(format!("bad flag name '{k}'")));
        }
        Ok(())
    }

    /// Flags in `--key value` form (booleans as bare flags when true).
    pub fn to_args(&self) -> Vec<String> {
        let mut out = vec![self.command.clone()];
        for (k, v) in &self.args {
            let flag = format!("--{}", k.replace('_', "-"));
            match v {
                ConfigValue::Bool(true) => out.push(flag),
                ConfigValue::Bool(false) => {}
                _ => {
                    out.push(flag);
                    out.push(v.to_arg());
                }
            }
        }
        out
    }
}

/// A file read by a run, with its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl CacheRef {
    pub fn of(path: &Path) -> Result<CacheRef> {
        Ok(CacheRef { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub params: Option<CriticalParams>,
    pub command: String,
    pub args: BTreeMap<String, ConfigValue>,
    pub master_seed: u64,
    pub replicas: usize,
    pub seed_rule: String,
    #[serde(default)]
    pub cache_files: Vec<CacheRef>,
    #[serde(default)]
    pub outputs: Vec<CacheRef>,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Seed derivation rule recorded in every manifest.
pub const SEED_RULE: &str = "replica i: xoshiro256++ via seed_from_u64(splitmix64(master ^ splitmix64(i + 0x632BE59BD9B4E019)))";

impl RunManifest {
    /// The manifest without run-dependent fields; this is what output files
    /// carry as their metadata line.
    pub fn core(&self) -> RunManifest {
        RunManifest { wall_time_s: 0.0, outputs: Vec::new(), ..self.clone() }
    }

    pub fn parse(text: &str) -> Result<RunManifest> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    /// The run config that reproduces this manifest.
    pub fn to_config(&self) -> RunConfig {
        RunConfig { command: self.command.clone(), args: self.args.clone() }
    }
}
