mod args;
mod commands;
mod ctx;

use clap::{ArgAction, ArgMatches, CommandFactory, FromArgMatches};
use loopon::io::{ConfigValue, RunConfig, RunManifest};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::process::ExitCode;

use args::{Cli, Command};
use ctx::{CmdResult, Ctx, Failure};

/// Flags of the chosen subcommand as recorded in the manifest (placement
/// flags such as the output directory are left out).
fn recorded_args(cmd: &clap::Command, m: &ArgMatches) -> BTreeMap<String, ConfigValue> {
    let mut map = BTreeMap::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(id, "out" | "threads" | "help" | "version") {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => {
                map.insert(id.to_string(), ConfigValue::Bool(m.get_flag(id)));
            }
            a if a.takes_values() => {
                if let Some(vals) = m.get_raw(id) {
                    let v: Vec<String> = vals.map(|s| s.to_string_lossy().into_owned()).collect();
                    map.insert(id.to_string(), ConfigValue::Str(v.join(",")));
                }
            }
            _ => {}
        }
    }
    map
}

fn load_run_file(path: &std::path::Path) -> CmdResult<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let is_manifest = serde_json::from_str::<serde_json::Value>(&text)
        .map(|v| v.get("tool_version").is_some())
        .unwrap_or(false);
    let cfg = if is_manifest { RunManifest::parse(&text)?.to_config() } else { RunConfig::parse(&text)? };
    if cfg.command == "run" {
        return Err(Failure::config("a run file cannot invoke 'run'"));
    }
    Ok(cfg)
}

fn execute(argv: Vec<OsString>) -> CmdResult<()> {
    let cmd = Cli::command();
    let matches = cmd.clone().try_get_matches_from(&argv).map_err(|e| {
        let _ = e.print();
        Failure { code: if e.use_stderr() { 2 } else { 0 }, message: String::new() }
    })?;
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::config(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");

    let out_of = |o: &args::OutArgs| -> CmdResult<std::path::PathBuf> {
        if let Some(t) = o.threads {
            // only the first call can configure the global pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        Ok(o.out.clone())
    };

    let out = match &cli.command {
        Command::Params(p) => return commands::params(p),
        Command::Run(r) => {
            let cfg = load_run_file(&r.file)?;
            let mut next: Vec<OsString> = vec!["loopon".into()];
            next.extend(cfg.to_args().into_iter().map(OsString::from));
            if let Some(o) = &r.out {
                next.push("--out".into());
                next.push(o.clone().into_os_string());
            }
            return execute(next);
        }
        Command::Fk(a) => out_of(&a.out)?,
        Command::Mujs(a) => out_of(&a.out)?,
        Command::Identities(a) => out_of(&a.out)?,
        Command::WalkCheck(a) => out_of(&a.out)?,
        Command::Cascade(a) => out_of(&a.out)?,
        Command::Volume(a) => out_of(&a.out)?,
        Command::ContCascade(a) => out_of(&a.out)?,
        Command::Spine(a) => out_of(&a.out)?,
        Command::Green(a) => out_of(&a.out)?,
        Command::Hitting(a) => out_of(&a.out)?,
        Command::Coupling(a) => out_of(&a.out)?,
        Command::Limits(a) => out_of(&a.out)?,
        Command::Report(a) => out_of(&a.out)?,
    };

    let mut ctx = Ctx::new(name, recorded_args(sub_cmd, sub), &out);
    let res: CmdResult<bool> = match &cli.command {
        Command::Fk(a) => commands::fk(a, &mut ctx).map(|_| true),
        Command::Mujs(a) => commands::mujs(a, &mut ctx).map(|_| true),
        Command::Identities(a) => commands::identities(a, &mut ctx),
        Command::WalkCheck(a) => commands::walk_check(a, &mut ctx).map(|_| true),
        Command::Cascade(a) => commands::cascade(a, &mut ctx).map(|_| true),
        Command::Volume(a) => commands::volume(a, &mut ctx).map(|_| true),
        Command::ContCascade(a) => commands::cont_cascade(a, &mut ctx).map(|_| true),
        Command::Spine(a) => commands::spine(a, &mut ctx).map(|_| true),
        Command::Green(a) => commands::green(a, &mut ctx).map(|_| true),
        Command::Hitting(a) => commands::hitting(a, &mut ctx).map(|_| true),
        Command::Coupling(a) => commands::coupling(a, &mut ctx).map(|_| true),
        Command::Limits(a) => commands::limits(a, &mut ctx).map(|_| true),
        Command::Report(a) => commands::report(a, &mut ctx),
        Command::Params(_) | Command::Run(_) => unreachable!(),
    };
    match res {
        Ok(pass) => {
            let path = ctx.finish(None)?;
            eprintln!("manifest: {}", path.display());
            if pass {
                Ok(())
            } else {
                Err(Failure { code: 3, message: "checks failed beyond tolerance".into() })
            }
        }
        Err(f) => {
            let manifest = ctx.manifest.clone();
            let _ = ctx.finish(Some(f.message.clone()));
            let mut m = manifest;
            m.error = Some(f.message.clone());
            eprintln!("{}", serde_json::to_string_pretty(&m).unwrap_or_default());
            Err(f)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code as u8)
        }
    }
}
