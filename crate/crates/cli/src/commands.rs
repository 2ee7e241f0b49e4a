//! Subcommand execution: every run writes `config.json` plus its artifacts.

use std::path::Path;

use ddec_core::fundamental::{fundamental_solution_with, FundamentalOptions};
use ddec_core::io::{fmt_f64, grid_to_csv, parse_grid_csv, to_json_string};
use ddec_core::measure::{build_qp, invert_q};
use ddec_core::simulator::segment_grid;
use ddec_core::{
    check_controllability, residual_curve, solve_ivp, synthesize_control, verify_control, DdecError, DelaySystem,
    GridFunction, Result, SynthesisOptions,
};
use log::info;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{Kind, RunConfig};

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| DdecError::Io(format!("{}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write(dir, name, &to_json_string(value)?)
}

fn read_grid(path: &Path, rows: usize) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path).map_err(|e| DdecError::Io(format!("{}: {e}", path.display())))?;
    parse_grid_csv(&text, rows, 1)
}

/// Segment on `[-Λ_N, 0]` from a file, or all ones on the segment grid.
fn segment_or_ones(system: &DelaySystem, path: Option<&Path>, h: f64) -> Result<GridFunction> {
    match path {
        Some(p) => read_grid(p, system.dim()),
        None => {
            let (n, hs) = segment_grid(system, h);
            GridFunction::constant(-system.max_delay(), hs, n + 1, &DVector::from_element(system.dim(), 1.0))
        }
    }
}

fn fundamental_options(cfg: &RunConfig) -> FundamentalOptions {
    FundamentalOptions { max_atoms: cfg.max_atoms, ..FundamentalOptions::default() }
}

fn synthesis_options(cfg: &RunConfig) -> SynthesisOptions {
    let mut opts = SynthesisOptions::new(cfg.h);
    opts.lambda = cfg.lambda.value();
    opts.q = cfg.q;
    opts.fundamental = fundamental_options(cfg);
    opts
}

/// Runs the configured subcommand and returns the process exit status.
pub fn execute(cfg: &RunConfig) -> Result<u8> {
    let out = cfg.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| DdecError::Io(format!("{}: {e}", out.display())))?;
    write_json(out, "config.json", cfg)?;
    let sys = &cfg.system;
    match cfg.subcommand {
        Kind::Simulate => {
            let phi = segment_or_ones(sys, cfg.phi.as_deref(), cfg.h)?;
            let control = cfg.control.as_deref().map(|p| read_grid(p, sys.inputs())).transpose()?;
            let traj = solve_ivp(sys, &phi, control.as_ref(), cfg.horizon, cfg.h)?;
            write(out, "trajectory.csv", &traj.to_csv())?;
            Ok(0)
        }
        Kind::Fundamental => {
            let fund = fundamental_solution_with(sys, cfg.horizon, cfg.h, &fundamental_options(cfg))?;
            write_json(out, "fundamental.json", &fund.to_json_value())?;
            Ok(0)
        }
        Kind::InvertQ => {
            let (q, _) = build_qp(sys, cfg.h)?;
            let (qinv, report) = invert_q(&q, cfg.window, cfg.tol)?;
            write_json(
                out,
                "qinv.json",
                &serde_json::json!({ "window": cfg.window, "measure": qinv.to_json_value()? }),
            )?;
            write_json(out, "neumann_report.json", &report)?;
            Ok(0)
        }
        Kind::Check => {
            let verdict = check_controllability(sys, &cfg.rectangle, cfg.rank_tol)?;
            write_json(out, "verdict.json", &verdict)?;
            Ok(if verdict.outcome.is_controllable() { 0 } else { 2 })
        }
        Kind::Synthesize => {
            let psi = segment_or_ones(sys, cfg.target.as_deref(), cfg.h)?;
            let res = synthesize_control(sys, &psi, cfg.horizon, &synthesis_options(cfg))?;
            // independent re-check of the control by direct simulation
            let verified = verify_control(sys, &res.control, &psi, res.horizon, cfg.q)?;
            let mut body = res.to_json_value();
            body["verified_residual"] = serde_json::json!(verified);
            body["consistency_constant"] = serde_json::json!((verified - res.residual).abs() / res.h);
            write(out, "control.csv", &grid_to_csv(&res.control, "u"))?;
            write_json(out, "synthesis.json", &body)?;
            Ok(0)
        }
        Kind::ResidualCurve => {
            let psi = segment_or_ones(sys, cfg.target.as_deref(), cfg.h)?;
            let curve = residual_curve(sys, &psi, &cfg.t_list, &synthesis_options(cfg))?;
            let mut text = String::from("T,residual,lambda,h\n");
            for p in &curve {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt_f64(p.horizon),
                    fmt_f64(p.residual),
                    fmt_f64(p.lambda),
                    fmt_f64(p.h)
                ));
            }
            write(out, "residual_curve.csv", &text)?;
            Ok(0)
        }
    }
}
