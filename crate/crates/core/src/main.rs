//! `fde` command-line driver.
//!
//! Exit codes: 0 success, 1 failed check, 2 bad input, 3 numerical failure.

mod cli;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;

use fde_adjoint::checks::{render_table, run_suite, CheckOptions};
use fde_adjoint::fitting::{
    fit_parameters, generate_synthetic_data, sample_initial_theta, FitConfig, FitResult,
};
use fde_adjoint::format::{fmt_sig17, sig17, sig17_opt, sig17_vec};
use fde_adjoint::verification::finite_diff_grad;
use fde_adjoint::{
    grad_via_unrolled, solve, solve_adjoint, AccumulationMode, Builtin, Dynamics, FdeError,
    FracOrder, InstrumentationCounters, LotkaVolterra, Method, ParamVector, SolverConfig,
    TerminalLoss, TerminalMse, TimeGrid,
};

use cli::{
    BenchArgs, BenchMode, CheckArgs, Cli, Command, FitArgs, GradArgs, GradSource, ProblemArgs,
    SolveArgs,
};

const SCHEMA_VERSION: u32 = 1;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
enum Failure {
    Input(String),
    Numerical(String),
    CheckFailed,
}

impl From<FdeError> for Failure {
    fn from(e: FdeError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let args = match cli::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Grad(a) => run_grad(a),
        Command::Fit(a) => run_fit(a),
        Command::Bench(a) => run_bench(a),
        Command::Check(a) => run_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::CheckFailed) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Outcome {
    let mut w = sink(path)?;
    serde_json::to_writer(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn grid_for(
    horizon: f64,
    step: Option<f64>,
    steps: Option<usize>,
) -> Result<TimeGrid<f64>, FdeError> {
    match (step, steps) {
        (_, Some(n)) => TimeGrid::new(horizon, n),
        (Some(h), None) => TimeGrid::from_step(horizon, h),
        (None, None) => Err(FdeError::InvalidConfig(
            "one of --step or --steps is required".into(),
        )),
    }
}

struct Problem {
    spec: Builtin,
    theta: ParamVector<f64>,
    z0: Vec<f64>,
    cfg: SolverConfig<f64>,
}

fn build_problem(p: &ProblemArgs) -> Result<Problem, FdeError> {
    let spec = Builtin::by_name(&p.system, p.z0.len().max(1))?.with_footprint(p.footprint);
    let cfg = SolverConfig::new(
        FracOrder::new(p.beta)?,
        grid_for(p.horizon, p.step, p.steps)?,
        p.method,
        p.window,
    )?;
    Ok(Problem {
        spec,
        theta: ParamVector::new(p.theta.clone()),
        z0: p.z0.clone(),
        cfg,
    })
}

fn run_solve(a: SolveArgs) -> Outcome {
    let pb = build_problem(&a.problem)?;
    let tr = solve(&pb.spec, &pb.theta, &pb.z0, &pb.cfg)?;
    let mut w = sink(a.out.as_deref())?;
    tr.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("{}", serde_json::to_string(tr.counters())?);
    Ok(())
}

#[derive(Serialize)]
struct GradReport {
    schema_version: u32,
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    accum: Option<AccumulationMode>,
    #[serde(serialize_with = "sig17")]
    loss: f64,
    #[serde(serialize_with = "sig17_vec")]
    grad: Vec<f64>,
    counters: InstrumentationCounters,
}

fn run_grad(a: GradArgs) -> Outcome {
    let pb = build_problem(&a.problem)?;
    let loss = TerminalMse::new(a.target.clone())?;
    let tr = solve(&pb.spec, &pb.theta, &pb.z0, &pb.cfg)?;
    let value = loss.eval(tr.final_state());
    let (mode, accum, grad, counters) = match a.mode {
        GradSource::Adjoint => {
            let run = solve_adjoint(&tr, &pb.spec, &pb.theta, &loss, a.accum)?;
            let c = run.pipeline_counters(&tr);
            ("adjoint", Some(a.accum), run.grad, c)
        }
        GradSource::Direct => {
            let run = grad_via_unrolled(&tr, &pb.spec, &pb.theta, &loss)?;
            let c = run.pipeline_counters(&tr);
            ("direct", None, run.grad, c)
        }
        GradSource::Fd => {
            let g = finite_diff_grad(&pb.spec, &pb.theta, &pb.z0, &pb.cfg, &loss, a.fd_step)?;
            let solves = 2 * Dynamics::<f64>::param_dim(&pb.spec) as u64;
            let c = InstrumentationCounters {
                f_evals: solves * tr.counters().f_evals,
                peak_retained_slots: tr.counters().peak_retained_slots,
                ..InstrumentationCounters::default()
            };
            ("fd", None, g, c)
        }
    };
    let grad = grad.into_inner();
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Failure::Numerical("non-finite loss or gradient".into()));
    }
    write_json(
        a.out.as_deref(),
        &GradReport {
            schema_version: SCHEMA_VERSION,
            mode,
            accum,
            loss: value,
            grad,
            counters,
        },
    )
}

#[derive(Serialize)]
struct FitReport<'a> {
    schema_version: u32,
    #[serde(flatten)]
    result: &'a FitResult,
    #[serde(serialize_with = "sig17_vec")]
    theta_init: Vec<f64>,
    #[serde(serialize_with = "sig17_vec")]
    theta_true: Vec<f64>,
}

fn run_fit(a: FitArgs) -> Outcome {
    let theta_true = a
        .theta_true
        .clone()
        .unwrap_or_else(|| LotkaVolterra::TRUE_PARAMS.to_vec());
    let linear_dim = (theta_true.len() as f64).sqrt().round() as usize;
    let spec = Builtin::by_name(&a.system, linear_dim.max(1))?;
    let cfg = FitConfig {
        epochs: a.epochs as usize,
        lr: a.lr,
        optimizer: a.optimizer,
        adam_beta1: a.adam_beta1,
        adam_beta2: a.adam_beta2,
        adam_eps: a.adam_eps,
        batch: a.batch as usize,
        init_low: a.init_low,
        init_high: a.init_high,
        seed: a.seed,
        grad_mode: a.grad_mode,
        accum: a.accum,
    };
    let solver_cfg = SolverConfig::new(
        FracOrder::new(a.beta)?,
        TimeGrid::from_step(a.horizon, a.step)?,
        Method::Predictor,
        None,
    )?;
    let truth = ParamVector::new(theta_true.clone());
    let data = generate_synthetic_data(&spec, &truth, &cfg, &solver_cfg)?;
    let init = match &a.theta_init {
        Some(v) => ParamVector::new(v.clone()),
        None => sample_initial_theta(Dynamics::<f64>::param_dim(&spec), a.seed),
    };
    let result = fit_parameters(&data, &spec, &init, &cfg, &solver_cfg)?;
    if let Some(path) = &a.loss_out {
        let mut w = sink(Some(path))?;
        writeln!(w, "epoch,loss")?;
        for (i, l) in result.loss_history.iter().enumerate() {
            writeln!(w, "{i},{}", fmt_sig17(*l))?;
        }
        w.flush()?;
    }
    write_json(
        a.out.as_deref(),
        &FitReport {
            schema_version: SCHEMA_VERSION,
            result: &result,
            theta_init: init.into_inner(),
            theta_true,
        },
    )
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    mode: &'static str,
    wall_time_ns: u64,
    peak_slots: u64,
    /// `t(N) / t(N/2)` when `N/2` is also in the sweep.
    #[serde(serialize_with = "sig17_opt")]
    time_ratio: Option<f64>,
    /// Adjoint over direct peak slots at this `N`.
    #[serde(serialize_with = "sig17_opt")]
    memory_ratio: Option<f64>,
}

#[derive(Serialize)]
struct BenchReport {
    schema_version: u32,
    system: String,
    footprint: usize,
    rows: Vec<BenchRow>,
}

fn bench_mode_name(m: BenchMode) -> &'static str {
    match m {
        BenchMode::Forward => "forward",
        BenchMode::Adjoint => "adjoint",
        BenchMode::Direct => "direct",
    }
}

/// Fastest of `repeats` runs and the peak slots of the last one.
fn time_point(
    spec: &Builtin,
    theta: &ParamVector<f64>,
    z0: &[f64],
    cfg: &SolverConfig<f64>,
    mode: BenchMode,
    repeats: u64,
) -> Result<(u64, u64), FdeError> {
    let loss = TerminalMse::new(vec![1.0; z0.len()])?;
    let mut best = u64::MAX;
    let mut peak = 0;
    for _ in 0..repeats {
        let started = Instant::now();
        let tr = solve(spec, theta, z0, cfg)?;
        peak = match mode {
            BenchMode::Forward => tr.counters().peak_retained_slots,
            BenchMode::Adjoint => {
                solve_adjoint(&tr, spec, theta, &loss, AccumulationMode::UnitWeight)?
                    .pipeline_counters(&tr)
                    .peak_retained_slots
            }
            BenchMode::Direct => {
                grad_via_unrolled(&tr, spec, theta, &loss)?
                    .pipeline_counters(&tr)
                    .peak_retained_slots
            }
        };
        best = best.min(started.elapsed().as_nanos() as u64);
    }
    Ok((best, peak))
}

fn run_bench(a: BenchArgs) -> Outcome {
    if a.sweep_n.contains(&0) {
        return Err(Failure::Input("--sweep-N entries must be positive".into()));
    }
    let spec = Builtin::by_name(&a.system, 2)?.with_footprint(a.footprint);
    let (theta, z0) = match spec {
        Builtin::LotkaVolterra(_) => (LotkaVolterra::TRUE_PARAMS.to_vec(), vec![2.0, 1.5]),
        Builtin::Linear(_) => (vec![-1.0, 0.5, -0.5, -1.0], vec![1.0, 0.5]),
    };
    let theta = ParamVector::new(theta);
    let mut measured = Vec::new();
    for &n in &a.sweep_n {
        let cfg = SolverConfig::full(a.beta, a.horizon, n, Method::Predictor)?;
        for &mode in &a.modes {
            let (t, peak) = time_point(&spec, &theta, &z0, &cfg, mode, a.repeats)?;
            measured.push((n, mode, t, peak));
        }
    }
    let lookup = |n: usize, mode: BenchMode| {
        measured
            .iter()
            .find(|m| m.0 == n && m.1 == mode)
            .map(|m| (m.2, m.3))
    };
    let rows = measured
        .iter()
        .map(|&(n, mode, t, peak)| {
            let time_ratio = (n % 2 == 0)
                .then(|| lookup(n / 2, mode))
                .flatten()
                .map(|(t_half, _)| t as f64 / t_half.max(1) as f64);
            let memory_ratio = match (lookup(n, BenchMode::Adjoint), lookup(n, BenchMode::Direct)) {
                (Some((_, pa)), Some((_, pd))) if pd > 0 => Some(pa as f64 / pd as f64),
                _ => None,
            };
            BenchRow {
                n,
                mode: bench_mode_name(mode),
                wall_time_ns: t,
                peak_slots: peak,
                time_ratio,
                memory_ratio,
            }
        })
        .collect();
    write_json(
        a.out.as_deref(),
        &BenchReport {
            schema_version: SCHEMA_VERSION,
            system: spec.name().to_string(),
            footprint: a.footprint,
            rows,
        },
    )
}

#[derive(Serialize)]
struct CheckReport<'a> {
    schema_version: u32,
    suite: &'static str,
    all_pass: bool,
    rows: &'a [fde_adjoint::checks::CheckRow],
}

fn run_check(a: CheckArgs) -> Outcome {
    let started = Instant::now();
    let rows = run_suite(
        a.suite,
        CheckOptions {
            corrupt_weights: a.corrupt_weights,
        },
    )?;
    print!("{}", render_table(&rows));
    let all_pass = rows.iter().all(|r| r.pass);
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!(
        "{} checks, {} failed, {:.1} s",
        rows.len(),
        failed,
        started.elapsed().as_secs_f64()
    );
    if let Some(path) = &a.json {
        write_json(
            Some(path),
            &CheckReport {
                schema_version: SCHEMA_VERSION,
                suite: a.suite.name(),
                all_pass,
                rows: &rows,
            },
        )?;
    }
    if all_pass {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}
