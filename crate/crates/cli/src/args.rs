use clap::{Args, Parser, Subcommand, ValueEnum};
use loopon::io::parse_expr;
use std::path::PathBuf;

/// Numeric flag value; constant expressions such as `4/(3pi^2)` are accepted.
pub fn num(s: &str) -> Result<f64, String> {
    parse_expr(s).map_err(|e| e.to_string())
}

/// Nonnegative integer flag value (`1e4` and `2^12` are accepted).
pub fn int(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.trim().parse::<u64>() {
        return Ok(v);
    }
    let v = num(s)?;
    if v < 0.0 || v.fract() != 0.0 || v > 9.0e15 {
        return Err(format!("'{s}' is not a nonnegative integer"));
    }
    Ok(v as u64)
}

pub fn count(s: &str) -> Result<usize, String> {
    int(s).map(|v| v as usize)
}

#[derive(Parser, Debug)]
#[command(name = "loopon", version, about = "Loop-O(n) quadrangulation partition functions, samplers and cascades")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the resolved critical parameters as JSON
    Params(PointArgs),
    /// Compute (or refresh) the coefficient cache
    Fk(FkArgs),
    /// Tabulate the offspring law
    Mujs(MujsArgs),
    /// Deterministic identity checks (exit code 3 on failure)
    Identities(IdentitiesArgs),
    /// Exchangeability check of the excursion walk
    WalkCheck(WalkCheckArgs),
    /// Perimeter cascade trees, one CSV row per node
    Cascade(CascadeArgs),
    /// Total volume replicas as JSONL
    Volume(VolumeArgs),
    /// Continuous cascade martingales per generation
    ContCascade(ContCascadeArgs),
    /// Spine chain paths as JSONL
    Spine(SpineArgs),
    /// Band occupation of the spine chain
    Green(GreenArgs),
    /// Hitting probability of a small state before exceeding b p
    Hitting(HittingArgs),
    /// Quantile coupling of the chain with the limiting multiplicative walk
    Coupling(CouplingArgs),
    /// Closed-form limit values and sample comparisons
    Limits(LimitsArgs),
    /// Summarize a directory of outputs
    Report(ReportArgs),
    /// Execute a TOML/JSON run config or a manifest
    Run(RunFileArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum RegimeArg {
    Dilute,
    Dense,
    O2,
}

#[derive(Args, Debug, Clone)]
pub struct PointArgs {
    /// Loop weight in (0, 2]
    #[arg(long, value_parser = num)]
    pub n: f64,
    /// Critical point family; defaults to o2 at n = 2, dense when --h is given, dilute otherwise
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    /// Quadrangle weight on the critical line (dense and n = 2 points)
    #[arg(long, value_parser = num)]
    pub h: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct TableArgs {
    /// Largest tabulated coefficient index
    #[arg(long, default_value = "20000", value_parser = count)]
    pub k_max: usize,
    #[arg(long, default_value = ".loopon-cache")]
    pub cache_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SeedArgs {
    /// Master seed
    #[arg(long, default_value = "0", value_parser = int)]
    pub seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum ModeArg {
    PointedRaw,
    NonpointedCapped,
    NonpointedExact,
}

#[derive(Args, Debug, Clone)]
pub struct WalkArgs {
    /// Child-set sampling mode
    #[arg(long, value_enum, default_value = "nonpointed-capped")]
    pub mode: ModeArg,
    /// Step cap of a single excursion
    #[arg(long, default_value = "1e9", value_parser = int)]
    pub max_walk_steps: u64,
    /// Cap constant of the capped mode
    #[arg(long, default_value = "0.05", value_parser = num)]
    pub kappa: f64,
}

#[derive(Args, Debug)]
pub struct FkArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    /// o2_closed_form, rho_moments or circle_series (default depends on the point)
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct MujsArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    /// Largest k written
    #[arg(long, default_value = "200", value_parser = int)]
    pub k_out: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct IdentitiesArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    /// Largest harmonicity level
    #[arg(long, default_value = "20", value_parser = int)]
    pub l_max: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct WalkCheckArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, value_parser = int)]
    pub p: u64,
    #[arg(long, default_value = "10000", value_parser = count)]
    pub replicas: usize,
    /// Threshold of the large-face test function
    #[arg(long, default_value = "5", value_parser = int)]
    pub face_m: u64,
    #[command(flatten)]
    pub walk: WalkArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct CascadeArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, value_parser = int)]
    pub p: u64,
    /// Number of generations to expand
    #[arg(long, default_value = "4", value_parser = int)]
    pub generations: u64,
    /// Expand only nodes with half-perimeter at least this (instead of a depth limit)
    #[arg(long, value_parser = int)]
    pub freeze_below: Option<u64>,
    #[arg(long, default_value = "1", value_parser = count)]
    pub replicas: usize,
    #[arg(long, default_value = "2e8", value_parser = int)]
    pub vertex_cap: u64,
    #[command(flatten)]
    pub walk: WalkArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct VolumeArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, value_parser = int)]
    pub p: u64,
    #[arg(long, default_value = "1000", value_parser = count)]
    pub replicas: usize,
    #[arg(long, default_value = "2e8", value_parser = int)]
    pub vertex_cap: u64,
    #[command(flatten)]
    pub walk: WalkArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum NuArg {
    Bridge,
    WalkLimit,
}

#[derive(Args, Debug)]
pub struct ContCascadeArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value = "12", value_parser = int)]
    pub generations: u64,
    /// Children below this scale are frozen at their conditional mean
    #[arg(long, default_value = "1e-4", value_parser = num)]
    pub child_floor: f64,
    #[arg(long, default_value = "5e6", value_parser = count)]
    pub node_cap: usize,
    /// Jump-set sampler
    #[arg(long, value_enum, default_value = "bridge")]
    pub nu: NuArg,
    /// Approximate number of explicit bridge jumps
    #[arg(long, default_value = "200", value_parser = num)]
    pub bridge_count: f64,
    /// Starting perimeter of the walk-limit sampler
    #[arg(long, default_value = "1e5", value_parser = int)]
    pub walk_p0: u64,
    #[arg(long, default_value = "100", value_parser = count)]
    pub replicas: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum KernelArg {
    Exact,
    Tabulated,
    Sir,
}

#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    /// Transition sampler of the spine chain
    #[arg(long, value_enum, default_value = "exact")]
    pub kernel: KernelArg,
    /// Child sets per tabulated kernel
    #[arg(long, default_value = "20000", value_parser = count)]
    pub n_tab: usize,
    /// Candidate child sets per resampling step
    #[arg(long, default_value = "64", value_parser = count)]
    pub n_cand: usize,
    /// Step cap of a chain run
    #[arg(long, default_value = "1e6", value_parser = int)]
    pub max_steps: u64,
}

#[derive(Args, Debug)]
pub struct SpineArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, value_parser = int)]
    pub p: u64,
    #[arg(long, default_value = "100", value_parser = count)]
    pub replicas: usize,
    /// Stop on entering [0, below)
    #[arg(long, value_parser = int)]
    pub below: Option<u64>,
    /// Stop on exceeding this state
    #[arg(long, value_parser = int)]
    pub above: Option<u64>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct GreenArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, value_parser = int)]
    pub p: u64,
    #[arg(long, value_parser = int)]
    pub below: Option<u64>,
    #[arg(long, value_parser = int)]
    pub above: Option<u64>,
    /// Number of bands [e^t, e^(t+1))
    #[arg(long, default_value = "20", value_parser = int)]
    pub bands: u64,
    #[arg(long, default_value = "2000", value_parser = count)]
    pub replicas: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct HittingArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, value_parser = int)]
    pub p: u64,
    /// Upper barrier factor
    #[arg(long, default_value = "4", value_parser = num)]
    pub b: f64,
    /// Small target state
    #[arg(long, default_value = "1", value_parser = int)]
    pub m: u64,
    #[arg(long, default_value = "20000", value_parser = count)]
    pub replicas: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct CouplingArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, value_parser = int)]
    pub p: u64,
    /// Coupling horizon: run until the limit walk drops below m
    #[arg(long, value_parser = num)]
    pub m: f64,
    /// Ratio tolerance
    #[arg(long, default_value = "2", value_parser = num)]
    pub a: f64,
    #[arg(long, default_value = "2000", value_parser = count)]
    pub replicas: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum LawArg {
    Dilute,
    Dense,
}

#[derive(Args, Debug)]
pub struct LimitsArgs {
    /// Stability indices in (1, 2)
    #[arg(long, value_parser = num, value_delimiter = ',', default_value = "1.5")]
    pub alpha: Vec<f64>,
    /// Exponents at which the cascade transform is printed
    #[arg(long, value_parser = num, value_delimiter = ',')]
    pub theta: Vec<f64>,
    /// Laplace arguments for the martingale limit
    #[arg(long, value_parser = num, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    pub q: Vec<f64>,
    /// Cont-cascade CSV whose W values are compared with the closed-form law
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Generation used from the comparison file (default: the last)
    #[arg(long, value_parser = int)]
    pub generation: Option<u64>,
    /// Which closed-form limit to compare against
    #[arg(long, value_enum, default_value = "dilute")]
    pub law: LawArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding command outputs
    #[arg(long)]
    pub dir: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct RunFileArgs {
    /// Run config (TOML or JSON) or a manifest written by an earlier run
    pub file: PathBuf,
    /// Output directory (overrides the file)
    #[arg(long)]
    pub out: Option<PathBuf>,
}
