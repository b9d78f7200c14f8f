//! Command-line definitions and `--config` merging.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::Value;

use fde_adjoint::adjoint::AccumulationMode;
use fde_adjoint::checks::Suite;
use fde_adjoint::fitting::{GradMode, Optimizer};
use fde_adjoint::Method;

#[derive(Debug, Parser)]
#[command(
    name = "fde",
    version,
    about = "Caputo fractional ODE solver with adjoint gradients"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve forward and write the trajectory as CSV.
    #[command(allow_negative_numbers = true, args_override_self = true)]
    Solve(SolveArgs),
    /// Gradient of a terminal loss with respect to the parameters.
    #[command(allow_negative_numbers = true, args_override_self = true)]
    Grad(GradArgs),
    /// Recover parameters from synthetic terminal-state data.
    #[command(allow_negative_numbers = true, args_override_self = true)]
    Fit(FitArgs),
    /// Time and memory sweep over grid sizes.
    #[command(allow_negative_numbers = true, args_override_self = true)]
    Bench(BenchArgs),
    /// Run the self-check suites.
    #[command(allow_negative_numbers = true, args_override_self = true)]
    Check(CheckArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ProblemArgs {
    /// linear or lotka-volterra
    #[arg(long)]
    pub system: String,
    #[arg(long)]
    pub beta: f64,
    /// Horizon.
    #[arg(long = "T")]
    pub horizon: f64,
    /// Step size; the step count is T/step rounded to the nearest integer.
    #[arg(long, conflicts_with = "steps", required_unless_present = "steps")]
    pub step: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "predictor")]
    pub method: Method,
    /// Keep only the K most recent history terms.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true, action = ArgAction::Set)]
    pub z0: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true, action = ArgAction::Set)]
    pub theta: Vec<f64>,
    /// Declared activation footprint per evaluation, in slots.
    #[arg(long, default_value_t = 0)]
    pub footprint: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file whose keys mirror these flags; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GradSource {
    Adjoint,
    Direct,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossKind {
    TerminalMse,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum)]
    pub mode: GradSource,
    #[arg(long, value_enum, default_value = "terminal-mse")]
    pub loss: LossKind,
    #[arg(long, value_delimiter = ',', required = true, action = ArgAction::Set)]
    pub target: Vec<f64>,
    #[arg(long, default_value = "paper")]
    pub accum: AccumulationMode,
    /// Central-difference step for mode fd.
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file whose keys mirror these flags; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value = "lotka-volterra")]
    pub system: String,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long = "T", default_value_t = 2.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Parameters that generate the data; the predator-prey reference values by default.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub theta_true: Option<Vec<f64>>,
    /// Starting parameters; drawn from the seed when absent.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub theta_init: Option<Vec<f64>>,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: Optimizer,
    #[arg(long, default_value_t = 0.9)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 0.5)]
    pub init_low: f64,
    #[arg(long, default_value_t = 5.0)]
    pub init_high: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "adjoint")]
    pub grad_mode: GradMode,
    #[arg(long, default_value = "paper")]
    pub accum: AccumulationMode,
    /// FitResult JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    /// JSON file whose keys mirror these flags; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchMode {
    Forward,
    Adjoint,
    Direct,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long = "sweep-N", value_delimiter = ',', required = true, action = ArgAction::Set)]
    pub sweep_n: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "adjoint,direct", action = ArgAction::Set)]
    pub modes: Vec<BenchMode>,
    #[arg(long, default_value_t = 0)]
    pub footprint: usize,
    #[arg(long, default_value = "lotka-volterra")]
    pub system: String,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long = "T", default_value_t = 2.0)]
    pub horizon: f64,
    /// Timed repetitions per point; the fastest is reported.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file whose keys mirror these flags; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value = "all")]
    pub suite: Suite,
    /// Also write the rows as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Test hook: perturb one weight before the identity checks.
    #[arg(long, hide = true)]
    pub corrupt_weights: bool,
    /// JSON file whose keys mirror these flags; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Error while expanding `--config`.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config file {path} is not a JSON object: {detail}")]
    Shape { path: String, detail: String },
}

/// Splices the keys of a `--config FILE` JSON object into the argument list
/// as flags, directly after the subcommand, so that flags given on the
/// command line take precedence. Keys must be flag names; clap rejects
/// anything it does not know.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="))
    else {
        return Ok(args);
    };
    let (path, consumed) = match args[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => match args.get(pos + 1) {
            Some(p) => (p.to_string_lossy().into_owned(), 2),
            None => return Ok(args),
        },
    };
    let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
        path: path.clone(),
        source,
    })?;
    let shape = |detail: String| ConfigError::Shape {
        path: path.clone(),
        detail,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| shape(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(shape("top level must be an object".into()));
    };
    let mut injected = Vec::new();
    for (key, v) in map {
        if key == "config" {
            return Err(shape("nested config keys are not allowed".into()));
        }
        let flag = OsString::from(format!("--{key}"));
        match v {
            Value::Bool(true) => injected.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let joined: Vec<String> = items
                    .iter()
                    .map(scalar_text)
                    .collect::<Result<_, _>>()
                    .map_err(shape)?;
                injected.push(flag);
                injected.push(joined.join(",").into());
            }
            other => {
                injected.push(flag);
                injected.push(scalar_text(&other).map_err(shape)?.into());
            }
        }
    }
    let mut out: Vec<OsString> = Vec::with_capacity(args.len() + injected.len());
    let mut rest = args
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i < pos || *i >= pos + consumed)
        .map(|(_, a)| a);
    // program name and subcommand
    out.extend(rest.by_ref().take(2));
    out.extend(injected);
    out.extend(rest);
    Ok(out)
}

fn scalar_text(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(format!("unsupported config value {other}")),
    }
}
