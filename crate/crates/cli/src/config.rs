//! Command-line and config-file parsing into a fully resolved [`RunConfig`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ddec_core::freq::{Rectangle, DEFAULT_RANK_TOL};
use ddec_core::fundamental::DEFAULT_MAX_ATOMS;
use ddec_core::measure::default_window;
use ddec_core::system::{parse_real_literal, Real};
use ddec_core::{DdecError, DelaySystem, Result};
use serde::{Deserialize, Serialize};

/// Default tail tolerance handed to the `Q` inversion.
pub const DEFAULT_INVERT_TOL: f64 = 1e-10;
/// Number of horizons in the default residual-curve sweep.
pub const DEFAULT_CURVE_POINTS: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "ddec", version, about = "Batch analysis of difference delay equations with distributed delays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    /// March the initial-value problem and write the trajectory CSV.
    Simulate,
    /// Compute the fundamental solution (atoms plus continuous part).
    Fundamental,
    /// Invert the measure `Q` on a finite window.
    InvertQ,
    /// Decide approximate controllability from the characteristic roots.
    Check,
    /// Regularised least-squares control towards a target segment.
    Synthesize,
    /// Residual of the synthesised control over a list of horizons.
    ResidualCurve,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Simulate(RunArgs),
    Fundamental(RunArgs),
    InvertQ(RunArgs),
    Check(RunArgs),
    Synthesize(RunArgs),
    ResidualCurve(RunArgs),
}

impl Command {
    fn split(self) -> (Kind, RunArgs) {
        match self {
            Command::Simulate(a) => (Kind::Simulate, a),
            Command::Fundamental(a) => (Kind::Fundamental, a),
            Command::InvertQ(a) => (Kind::InvertQ, a),
            Command::Check(a) => (Kind::Check, a),
            Command::Synthesize(a) => (Kind::Synthesize, a),
            Command::ResidualCurve(a) => (Kind::ResidualCurve, a),
        }
    }
}

fn real(s: &str) -> std::result::Result<f64, String> {
    parse_real_literal(s)
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// System description (JSON).
    pub system: PathBuf,
    /// Run options (JSON object); flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Horizon.
    #[arg(long = "T", value_parser = real, allow_negative_numbers = true)]
    pub horizon: Option<f64>,
    /// Grid step.
    #[arg(long, value_parser = real, allow_negative_numbers = true)]
    pub h: Option<f64>,
    /// Tikhonov weight, or `auto`.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<String>,
    /// Exponent of the reported norms.
    #[arg(long, value_parser = real, allow_negative_numbers = true)]
    pub q: Option<f64>,
    #[arg(long = "re-min", value_parser = real, allow_negative_numbers = true)]
    pub re_min: Option<f64>,
    #[arg(long = "re-max", value_parser = real, allow_negative_numbers = true)]
    pub re_max: Option<f64>,
    #[arg(long = "im-max", value_parser = real, allow_negative_numbers = true)]
    pub im_max: Option<f64>,
    #[arg(long = "rank-tol", value_parser = real, allow_negative_numbers = true)]
    pub rank_tol: Option<f64>,
    #[arg(long = "max-atoms")]
    pub max_atoms: Option<usize>,
    /// Tail tolerance of the `Q` inversion.
    #[arg(long, value_parser = real, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    /// Inversion window for `invert-q`.
    #[arg(long, value_parser = real, allow_negative_numbers = true)]
    pub window: Option<f64>,
    /// Initial segment CSV `t,x1..xd` on `[-Λ_N, 0]` (default: all ones).
    #[arg(long)]
    pub phi: Option<PathBuf>,
    /// Control CSV `t,u1..um` on `[0, T]` (default: zero).
    #[arg(long)]
    pub control: Option<PathBuf>,
    /// Target segment CSV `t,x1..xd` on `[-Λ_N, 0]` (default: all ones).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Comma-separated horizons for `residual-curve`.
    #[arg(long = "t-list")]
    pub t_list: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optional run settings read from `--config`; same names as the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(rename = "T")]
    horizon: Option<Real>,
    h: Option<Real>,
    lambda: Option<LambdaValue>,
    q: Option<Real>,
    re_min: Option<Real>,
    re_max: Option<Real>,
    im_max: Option<Real>,
    rank_tol: Option<Real>,
    max_atoms: Option<usize>,
    tol: Option<Real>,
    window: Option<Real>,
    phi: Option<PathBuf>,
    control: Option<PathBuf>,
    target: Option<PathBuf>,
    t_list: Option<Vec<Real>>,
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LambdaValue {
    Num(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Lambda {
    Fixed(f64),
    #[serde(serialize_with = "auto_str")]
    Auto,
}

fn auto_str<S: serde::Serializer>(s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str("auto")
}

impl Lambda {
    pub fn value(self) -> Option<f64> {
        match self {
            Lambda::Fixed(v) => Some(v),
            Lambda::Auto => None,
        }
    }
}

fn parse_lambda(s: &str) -> Result<Lambda> {
    if s.trim().eq_ignore_ascii_case("auto") {
        return Ok(Lambda::Auto);
    }
    parse_real_literal(s).map(Lambda::Fixed).map_err(DdecError::Parse)
}

/// Every parameter of a run, defaults filled in.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: Kind,
    pub system_path: PathBuf,
    #[serde(skip)]
    pub system: DelaySystem,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub h: f64,
    pub lambda: Lambda,
    pub q: f64,
    pub rectangle: Rectangle,
    pub rank_tol: f64,
    pub max_atoms: usize,
    pub tol: f64,
    pub window: f64,
    pub phi: Option<PathBuf>,
    pub control: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub t_list: Vec<f64>,
    pub out: PathBuf,
}

/// Output directory requested on the command line, if any, before validation.
pub fn requested_out(args: &RunArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn read_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| DdecError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| DdecError::Parse(format!("{}: {e}", path.display())))
}

fn check(ok: bool, what: &str, v: f64) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(DdecError::OutOfRange(format!("{what} = {v}")))
    }
}

/// Relative paths inside a config file are taken from the file's directory.
fn rebase(path: Option<PathBuf>, base: Option<&Path>) -> Option<PathBuf> {
    match (path, base) {
        (Some(p), Some(b)) if p.is_relative() => Some(b.join(p)),
        (p, _) => p,
    }
}

/// Resolves parsed arguments against an optional config file and the system.
pub fn resolve(command: Command) -> Result<RunConfig> {
    let (kind, args) = command.split();
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => ConfigFile::default(),
    };
    let base = args.config.as_deref().and_then(Path::parent);
    let system = DelaySystem::from_file(&args.system)?;
    let pick = |flag: Option<f64>, key: Option<Real>| flag.or(key.map(|r| r.0));

    let lambda_n = system.max_delay();
    let lambda_1 = system.min_delay();
    let default_h = match kind {
        Kind::Synthesize | Kind::ResidualCurve => 1e-2 * lambda_1,
        _ => 1e-3 * lambda_1,
    };
    let horizon = pick(args.horizon, file.horizon).unwrap_or(system.time_bound() + lambda_n);
    check(horizon > 0.0 && horizon.is_finite(), "T must be positive; got T", horizon)?;
    let h = pick(args.h, file.h).unwrap_or(default_h);
    check(h > 0.0 && h <= lambda_1, "h must lie in (0, Λ_1]; got h", h)?;
    let q = pick(args.q, file.q).unwrap_or(2.0);
    check(q >= 1.0 && q.is_finite(), "q must be at least 1; got q", q)?;
    let lambda = match (&args.lambda, file.lambda) {
        (Some(s), _) => parse_lambda(s)?,
        (None, Some(LambdaValue::Num(v))) => Lambda::Fixed(v),
        (None, Some(LambdaValue::Text(s))) => parse_lambda(&s)?,
        (None, None) => Lambda::Auto,
    };
    if let Lambda::Fixed(v) = lambda {
        check(v > 0.0 && v.is_finite(), "lambda must be positive; got lambda", v)?;
    }
    let rank_tol = pick(args.rank_tol, file.rank_tol).unwrap_or(DEFAULT_RANK_TOL);
    check(rank_tol > 0.0 && rank_tol < 1.0, "rank-tol must lie in (0, 1); got rank-tol", rank_tol)?;
    let im_max = pick(args.im_max, file.im_max);
    if let Some(v) = im_max {
        check(v > 0.0 && v.is_finite(), "im-max must be positive; got im-max", v)?;
    }
    let rectangle =
        Rectangle::default_for(&system, pick(args.re_min, file.re_min), pick(args.re_max, file.re_max), im_max)?;
    let max_atoms = args.max_atoms.or(file.max_atoms).unwrap_or(DEFAULT_MAX_ATOMS);
    check(max_atoms >= 1, "max-atoms must be at least 1; got max-atoms", max_atoms as f64)?;
    let tol = pick(args.tol, file.tol).unwrap_or(DEFAULT_INVERT_TOL);
    check(tol > 0.0 && tol < 1.0, "tol must lie in (0, 1); got tol", tol)?;
    let window = pick(args.window, file.window).unwrap_or_else(|| default_window(&system));
    check(window > 0.0 && window.is_finite(), "window must be positive; got window", window)?;

    let t_list = match (&args.t_list, file.t_list) {
        (Some(s), _) => {
            s.split(',').map(|v| parse_real_literal(v).map_err(DdecError::Parse)).collect::<Result<Vec<f64>>>()?
        }
        (None, Some(v)) => v.into_iter().map(|r| r.0).collect(),
        (None, None) if kind == Kind::ResidualCurve => {
            let n = DEFAULT_CURVE_POINTS;
            (0..n).map(|i| lambda_n + (horizon - lambda_n) * i as f64 / (n - 1) as f64).collect()
        }
        (None, None) => Vec::new(),
    };
    if kind == Kind::ResidualCurve && t_list.is_empty() {
        return Err(DdecError::OutOfRange("t-list must not be empty".into()));
    }
    for w in t_list.windows(2) {
        if !(w[1] > w[0]) {
            return Err(DdecError::OutOfRange(format!(
                "t-list must be strictly increasing; got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(t) = t_list.first() {
        check(*t > 0.0, "t-list entries must be positive; got", *t)?;
    }

    Ok(RunConfig {
        subcommand: kind,
        system_path: args.system.clone(),
        system,
        horizon,
        h,
        lambda,
        q,
        rectangle,
        rank_tol,
        max_atoms,
        tol,
        window,
        phi: args.phi.clone().or(rebase(file.phi, base)),
        control: args.control.clone().or(rebase(file.control, base)),
        target: args.target.clone().or(rebase(file.target, base)),
        t_list,
        out: args.out.clone().or(rebase(file.out, base)).unwrap_or_else(|| PathBuf::from(".")),
    })
}

/// Parses `argv` (program name first) into a resolved run.
pub fn parse_config<I, T>(argv: I) -> std::result::Result<RunConfig, (Option<PathBuf>, DdecError)>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| (None, DdecError::Parse(e.to_string())))?;
    let out = match &cli.command {
        Command::Simulate(a)
        | Command::Fundamental(a)
        | Command::InvertQ(a)
        | Command::Check(a)
        | Command::Synthesize(a)
        | Command::ResidualCurve(a) => requested_out(a),
    };
    resolve(cli.command).map_err(|e| (Some(out), e))
}
