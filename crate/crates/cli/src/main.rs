//! `ddec`: file-in/file-out front end to the delay-equation toolkit.
//!
//! Exit status: 0 on success (for `check`, controllable up to the region),
//! 2 when `check` finds the system uncontrollable, 1 on any error.

mod commands;
mod config;

use std::path::Path;
use std::process::ExitCode;

use ddec_core::io::to_json_string;
use ddec_core::DdecError;

fn configure_threads() -> Result<(), DdecError> {
    let Ok(raw) = std::env::var("DDEC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| DdecError::OutOfRange(format!("DDEC_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| DdecError::OutOfRange(format!("cannot size the thread pool: {e}")))
}

fn report(out: Option<&Path>, subcommand: Option<&str>, err: &DdecError) {
    eprintln!("ddec: {err}");
    let Some(dir) = out else { return };
    let body = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
        "subcommand": subcommand,
    });
    let written = std::fs::create_dir_all(dir)
        .map_err(DdecError::from)
        .and_then(|_| to_json_string(&body))
        .and_then(|text| std::fs::write(dir.join("error.json"), text).map_err(DdecError::from));
    if let Err(e) = written {
        eprintln!("ddec: could not write error.json: {e}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<_> = std::env::args_os().collect();
    // help and version go through clap's own printer and exit 0
    if argv.iter().skip(1).any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V" || a == "help") {
        if let Err(e) = <config::Cli as clap::Parser>::try_parse_from(&argv) {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    }
    if let Err(e) = configure_threads() {
        report(None, None, &e);
        return ExitCode::from(1);
    }
    let cfg = match config::parse_config(argv) {
        Ok(cfg) => cfg,
        Err((out, e)) => {
            report(out.as_deref(), None, &e);
            return ExitCode::from(1);
        }
    };
    let name = serde_json::to_value(cfg.subcommand).ok().and_then(|v| v.as_str().map(String::from));
    match commands::execute(&cfg) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report(Some(&cfg.out), name.as_deref(), &e);
            ExitCode::from(1)
        }
    }
}
