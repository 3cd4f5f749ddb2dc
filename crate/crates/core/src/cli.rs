//! Command-line interface.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::coisotropy::{self, ConstraintMode, ProlongOptions, Section, SolverStatus};
use crate::contact::{self, DEFAULT_FLOW_STEP};
use crate::field::{Field, TruncationLoss, DEFAULT_TRUNC_ORDER};
use crate::foliation::{self, LeafOptions, DEFAULT_LEAF_TOL, DEFAULT_MAX_DENOMINATOR};
use crate::ode;
use crate::verify::{self, Suite};

pub const CONFIG_ENV: &str = "COISOLAB_CONFIG";

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const MAX_ITERS: i32 = 1;
    pub const RUNTIME: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const OBSTRUCTED: i32 = 3;
    pub const VERIFICATION: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::Runtime(_) => exit::RUNTIME,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Settings shared by all commands, read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub trunc_order: i32,
    pub identity_tol: f64,
    pub solver_tol: f64,
    pub leaf_tol: f64,
    pub max_denominator: u64,
    pub seed: u64,
    pub sample_count: usize,
    pub max_iters: usize,
    pub damping: f64,
    pub flow_step: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trunc_order: DEFAULT_TRUNC_ORDER,
            identity_tol: verify::CARTAN_TOL,
            solver_tol: ProlongOptions::default().tol,
            leaf_tol: DEFAULT_LEAF_TOL,
            max_denominator: DEFAULT_MAX_DENOMINATOR,
            seed: 0,
            sample_count: 10,
            max_iters: ProlongOptions::default().max_iters,
            damping: ProlongOptions::default().damping,
            flow_step: DEFAULT_FLOW_STEP,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [
            ("identity_tol", self.identity_tol),
            ("solver_tol", self.solver_tol),
            ("leaf_tol", self.leaf_tol),
            ("damping", self.damping),
            ("flow_step", self.flow_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(input(format!("config: {name} must be positive, got {v}")));
            }
        }
        if self.trunc_order < 1 {
            return Err(input(format!("config: trunc_order must be at least 1, got {}", self.trunc_order)));
        }
        if self.max_denominator == 0 {
            return Err(input("config: max_denominator must be at least 1"));
        }
        Ok(())
    }

    /// `--config`, else `$COISOLAB_CONFIG`, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let Some(path) = path.map(Path::to_path_buf).or(env) else {
            return Ok(RunConfig::default());
        };
        read_json(&path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Parser, Debug)]
#[command(name = "coisolab", version, about = "Coisotropic deformations of a contact manifold: residuals, obstructions, prolongation and leaves")]
pub struct Cli {
    /// Run configuration (JSON). Defaults to $COISOLAB_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Truncation order N of the Fourier box.
    #[arg(long, global = true)]
    pub trunc: Option<i32>,
    /// Tolerance of the command (solver, leaf or identity tolerance).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConstraintArg {
    KernelComplement,
    DirectionSpan,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Coisotropicity residual of a section.
    Residual { section: PathBuf },
    /// Kuranishi obstruction field of an infinitesimal deformation.
    Kuranishi { section: PathBuf },
    /// Try to prolong an infinitesimal deformation to a coisotropic section.
    Prolong {
        section: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        damping: Option<f64>,
        #[arg(long, value_enum, default_value_t = ConstraintArg::KernelComplement)]
        constraint: ConstraintArg,
    },
    /// Classify and trace leaves of the characteristic foliation.
    Leaves {
        /// Slope t of the family (t sin x1, 0).
        #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["section", "scan"])]
        t: Option<f64>,
        #[arg(long, conflicts_with = "scan")]
        section: Option<PathBuf>,
        /// Comma-separated slopes for an integrality scan.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        scan: Option<Vec<f64>>,
        #[arg(long, default_value_t = 2.0 * PI)]
        time: f64,
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        /// Coefficients (c1, c2) of the traced field c1 V1 + c2 V2.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1.0, 0.0], allow_hyphen_values = true)]
        direction: Vec<f64>,
        /// Also write the trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Randomized identity suites.
    Verify {
        #[arg(value_parser = ["cartan", "jacobi", "contact", "reduction", "all"])]
        suite: String,
        /// Random instances per check (default: sample_count from the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Flow of the contact vector field of a Hamiltonian.
    Flow {
        /// Field JSON on T^5 x R^2.
        lambda: PathBuf,
        /// Start point x1,...,x5,y4,y5.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Vec<f64>,
        #[arg(long, allow_hyphen_values = true)]
        time: f64,
        #[arg(long)]
        step: Option<f64>,
    },
}

/// How a successful run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Obstructed,
    MaxIters,
    VerificationFailed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => exit::SUCCESS,
            Outcome::Obstructed => exit::OBSTRUCTED,
            Outcome::MaxIters => exit::MAX_ITERS,
            Outcome::VerificationFailed => exit::VERIFICATION,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())))
}

fn read_section(path: &Path, trunc: Option<i32>) -> Result<Section, CliError> {
    let s: Section = read_json(path)?;
    match trunc {
        Some(n) => {
            let mut loss = TruncationLoss::new();
            let out = s.reshaped(coisotropy::section_shape(n), &mut loss).map_err(input)?;
            if loss.total() > 0.0 {
                log::warn!("{}: truncation to N = {n} dropped mass {:e}", path.display(), loss.total());
            }
            Ok(out)
        }
        None => Ok(s),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

struct Ctx {
    config: RunConfig,
    trunc: Option<i32>,
    tol: Option<f64>,
    format: Option<Format>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn emit(&self, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
        match &self.out {
            Some(path) => fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
            None => stdout.write_all(text.as_bytes()).map_err(runtime),
        }
    }
}

/// Parses `args` and runs the command, writing results to `stdout` or `--out`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            stdout.write_all(e.render().to_string().as_bytes()).map_err(runtime)?;
            return Ok(Outcome::Success);
        }
        Err(e) => return Err(CliError::Input(e.render().to_string())),
    };
    execute(cli, stdout)
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    if let Some(n) = cli.trunc {
        if n < 1 {
            return Err(input(format!("--trunc must be at least 1, got {n}")));
        }
    }
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(input(format!("--tol must be positive, got {t}")));
        }
    }
    let out = cli.out.clone().or_else(|| config.out.clone());
    let ctx = Ctx { trunc: cli.trunc, tol: cli.tol, format: cli.format, out, config };
    match cli.command {
        Command::Residual { section } => cmd_residual(&ctx, &section, stdout),
        Command::Kuranishi { section } => cmd_kuranishi(&ctx, &section, stdout),
        Command::Prolong { section, eps, max_iters, damping, constraint } => {
            let opts = ProlongOptions {
                tol: ctx.tol.unwrap_or(ctx.config.solver_tol),
                max_iters: max_iters.unwrap_or(ctx.config.max_iters),
                trunc_order: ctx.trunc.unwrap_or(ctx.config.trunc_order),
                damping: damping.unwrap_or(ctx.config.damping),
                constraint: match constraint {
                    ConstraintArg::KernelComplement => ConstraintMode::KernelComplement,
                    ConstraintArg::DirectionSpan => ConstraintMode::DirectionSpan,
                },
            };
            cmd_prolong(&ctx, &section, eps, &opts, stdout)
        }
        Command::Leaves { t, section, scan, time, step, direction, trace } => {
            cmd_leaves(&ctx, LeafInput { t, section, scan }, time, step, (direction[0], direction[1]), trace.as_deref(), stdout)
        }
        Command::Verify { suite, n } => {
            let suite: Suite = suite.parse().map_err(input)?;
            cmd_verify(&ctx, suite, n.unwrap_or(ctx.config.sample_count), stdout)
        }
        Command::Flow { lambda, point, time, step } => cmd_flow(&ctx, &lambda, &point, time, step, stdout),
    }
}

/// Coefficient norm of the residual, its `L²(T⁵)` norm `(2π)^{5/2}` times
/// larger, the largest coefficient and the truncation loss.
fn cmd_residual(ctx: &Ctx, path: &Path, stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let s = read_section(path, ctx.trunc)?;
    let mut loss = TruncationLoss::new();
    let r = coisotropy::residual_tracked(&s, &mut loss);
    let norm = r.coeff_norm();
    let report = json!({
        "residual_norm": norm,
        "l2_norm": norm * (2.0 * PI).powf(2.5),
        "max_abs": r.max_abs_coeff(),
        "truncation_loss": loss.total(),
    });
    ctx.emit(&to_json(&report), stdout)?;
    Ok(Outcome::Success)
}

fn cmd_kuranishi(ctx: &Ctx, path: &Path, stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let s = read_section(path, ctx.trunc)?;
    let k = coisotropy::kuranishi(&s).map_err(runtime)?;
    let tol = ctx.tol.unwrap_or(ctx.config.identity_tol);
    let max_abs = k.max_abs_coeff();
    let report = json!({
        "max_abs": max_abs,
        "nonzero": max_abs > tol,
        "obstruction": k,
    });
    ctx.emit(&to_json(&report), stdout)?;
    Ok(Outcome::Success)
}

fn cmd_prolong(ctx: &Ctx, path: &Path, eps: f64, opts: &ProlongOptions, stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let s = read_section(path, None)?;
    let report = coisotropy::prolong(&s, eps, opts).map_err(|e| match e {
        coisotropy::CoisoError::Field(_) => runtime(e),
        _ => input(e),
    })?;
    ctx.emit(&to_json(&report), stdout)?;
    Ok(match report.status {
        SolverStatus::Converged => Outcome::Success,
        SolverStatus::Obstructed => Outcome::Obstructed,
        SolverStatus::MaxIters => Outcome::MaxIters,
    })
}

struct LeafInput {
    t: Option<f64>,
    section: Option<PathBuf>,
    scan: Option<Vec<f64>>,
}

fn cmd_leaves(
    ctx: &Ctx,
    which: LeafInput,
    time: f64,
    step: f64,
    direction: (f64, f64),
    trace_path: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let opts = LeafOptions { tol: ctx.tol.unwrap_or(ctx.config.leaf_tol), max_denominator: ctx.config.max_denominator };
    if let Some(ts) = which.scan {
        let scan = foliation::integrality_scan(&ts, &opts).map_err(input)?;
        ctx.emit(&to_json(&scan), stdout)?;
        return Ok(Outcome::Success);
    }
    let (class, trace) = match (which.t, which.section) {
        (Some(t), None) => {
            let class = foliation::classify_leaf_linear(t, &opts).map_err(input)?;
            let shape = coisotropy::section_shape(ctx.trunc.unwrap_or(1));
            let s = Section::new(Field::sin_axis(shape, 0, 1).scale(t), Field::zero(shape)).map_err(runtime)?;
            let frame = foliation::characteristic_frame(&s);
            let trace = foliation::trace_leaf(&frame, &[0.0; 5], time, step, direction).map_err(input)?;
            (class, trace)
        }
        (None, Some(path)) => {
            let s = read_section(&path, ctx.trunc)?;
            let (class, _) = foliation::classify_section(&s, &opts, time, step).map_err(input)?;
            let frame = foliation::characteristic_frame(&s);
            let trace = foliation::trace_leaf(&frame, &[0.0; 5], time, step, direction).map_err(input)?;
            (class, trace)
        }
        _ => return Err(input("leaves needs exactly one of --t, --section or --scan")),
    };
    if let Some(p) = trace_path {
        fs::write(p, trace.to_csv()).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    if ctx.format == Some(Format::Csv) {
        ctx.emit(&trace.to_csv(), stdout)?;
    } else {
        let report = json!({
            "class": class,
            "trace": {
                "steps": trace.steps,
                "h": trace.h,
                "direction": [trace.direction.0, trace.direction.1],
                "start": trace.start,
                "end_lifted": trace.end_lifted(),
                "end_wrapped": trace.end_wrapped(),
                "return_distance": foliation::torus_distance(trace.end_lifted(), &trace.start),
            },
        });
        ctx.emit(&to_json(&report), stdout)?;
    }
    Ok(Outcome::Success)
}

fn cmd_verify(ctx: &Ctx, suite: Suite, n: usize, stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let tol = ctx.tol.unwrap_or(ctx.config.identity_tol);
    let report = verify::run_with_tol(suite, ctx.config.seed, n, tol).map_err(runtime)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    ctx.emit(&to_json(&report), stdout)?;
    Ok(if report.pass { Outcome::Success } else { Outcome::VerificationFailed })
}

fn cmd_flow(ctx: &Ctx, path: &Path, point: &[f64], time: f64, step: Option<f64>, stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let lambda: Field = read_json(path)?;
    let shape = lambda.shape();
    if shape.torus_dim != 5 || shape.fiber_dim != 2 {
        return Err(input(format!("{}: Hamiltonian must live on T^5 x R^2", path.display())));
    }
    if point.len() != 7 {
        return Err(input(format!("--point needs 7 coordinates, got {}", point.len())));
    }
    let cd = contact::standard_contact().map_err(runtime)?;
    let h = step.unwrap_or(ctx.config.flow_step);
    let path = cd.flow_contact(&lambda, point, time, h).map_err(|e| match e {
        contact::ContactError::Flow(ode::OdeError::InvalidStep(_) | ode::OdeError::InvalidDuration(_)) => input(e),
        _ => runtime(e),
    })?;
    if ctx.format == Some(Format::Json) {
        let report = json!({ "times": path.path.times, "states": path.path.states });
        ctx.emit(&to_json(&report), stdout)?;
    } else {
        let mut csv = String::from("step,t,x1,x2,x3,x4,x5,y4,y5\n");
        for (i, (t, p)) in path.path.times.iter().zip(path.wrapped()).enumerate() {
            csv.push_str(&format!("{i},{t:.17e}"));
            for v in p {
                csv.push_str(&format!(",{v:.17e}"));
            }
            csv.push('\n');
        }
        ctx.emit(&csv, stdout)?;
    }
    Ok(Outcome::Success)
}
