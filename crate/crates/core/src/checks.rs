//! Self-checks run by `fde check`: weight identities, VJP dot tests, scheme
//! convergence and gradient agreement. Each check yields one row with the
//! measured value and the bound it must meet.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::{solve_adjoint, AccumulationMode};
use crate::direct::grad_via_unrolled;
use crate::dynamics::{
    Dynamics, LinearSystem, LotkaVolterra, ParamVector, TerminalLinear, TerminalMse,
};
use crate::error::{FdeError, Result};
use crate::format::{fmt_sig17, sig17};
use crate::forward::{solve, Method, SolverConfig};
use crate::quadrature::{FracOrder, TimeGrid, WeightKind, WeightTable};
use crate::verification::{
    empirical_order, finite_diff_grad, mittag_leffler, vjp_dot_test, OrderStudy, WindowWidth,
};

/// Orders at which the weight identities are checked.
pub const IDENTITY_ORDERS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Largest step index covered by the weight identities.
pub const IDENTITY_MAX_K: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Coeffs,
    Vjp,
    Convergence,
    Adjoint,
    All,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Coeffs => "coeffs",
            Suite::Vjp => "vjp",
            Suite::Convergence => "convergence",
            Suite::Adjoint => "adjoint",
            Suite::All => "all",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = FdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coeffs" => Ok(Suite::Coeffs),
            "vjp" => Ok(Suite::Vjp),
            "convergence" => Ok(Suite::Convergence),
            "adjoint" => Ok(Suite::Adjoint),
            "all" => Ok(Suite::All),
            other => Err(FdeError::InvalidConfig(format!("unknown suite '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    AtMost {
        #[serde(serialize_with = "sig17")]
        limit: f64,
    },
    AtLeast {
        #[serde(serialize_with = "sig17")]
        limit: f64,
    },
    Within {
        #[serde(serialize_with = "sig17")]
        low: f64,
        #[serde(serialize_with = "sig17")]
        high: f64,
    },
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost { limit } => v <= limit,
            Bound::AtLeast { limit } => v >= limit,
            Bound::Within { low, high } => low <= v && v <= high,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Bound::AtMost { limit } => write!(f, "<= {}", fmt_sig17(limit)),
            Bound::AtLeast { limit } => write!(f, ">= {}", fmt_sig17(limit)),
            Bound::Within { low, high } => {
                write!(f, "in [{}, {}]", fmt_sig17(low), fmt_sig17(high))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: String,
    #[serde(serialize_with = "sig17")]
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(suite: Suite, name: impl Into<String>, value: f64, bound: Bound) -> Self {
        Self {
            suite: suite.name(),
            name: name.into(),
            value,
            bound,
            pass: bound.holds(value),
        }
    }
}

/// Test hooks for the check runner.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Perturbs one predictor weight before the identity checks run.
    pub corrupt_weights: bool,
}

pub fn run_suite(suite: Suite, opts: CheckOptions) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Coeffs {
        rows.extend(coeffs_suite(opts)?);
    }
    if all || suite == Suite::Vjp {
        rows.extend(vjp_suite()?);
    }
    if all || suite == Suite::Convergence {
        rows.extend(convergence_suite()?);
    }
    if all || suite == Suite::Adjoint {
        rows.extend(adjoint_suite()?);
    }
    Ok(rows)
}

/// Fixed-width text table, one row per check.
pub fn render_table(rows: &[CheckRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.suite.len() + r.name.len() + 1)
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        let label = format!("{}/{}", r.suite, r.name);
        out.push_str(&format!(
            "{:<6} {:<width$}  {:<24} {}\n",
            if r.pass { "PASS" } else { "FAIL" },
            label,
            fmt_sig17(r.value),
            r.bound,
        ));
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

/// Max relative gap between `Σ_{m=1}^{k} μ_m` and `(h^β/β) k^β` over
/// `k = 1..=table.len()`.
pub fn predictor_telescoping_defect(table: &WeightTable<f64>) -> f64 {
    let order = table.order();
    let scale = order.rectangle_scale(table.h());
    let mut sum = 0.0;
    let mut worst: f64 = 0.0;
    for k in 1..=table.len() {
        sum += table.lag(k);
        worst = worst.max(rel(sum, scale * (k as f64).powf(order.beta())));
    }
    worst
}

/// Max relative gap between `Σ_{j=N-k}^{N} b_{j,k+1}` and
/// `(h^β/β)(k+1)^β` over `k = 0..N-1`, with `N = table.len()`.
pub fn backward_telescoping_defect(table: &WeightTable<f64>) -> f64 {
    let n = table.len();
    let order = table.order();
    let scale = order.rectangle_scale(table.h());
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let sum: f64 = (n - k..=n).map(|j| table.backward_at(j, k, n)).sum();
        worst = worst.max(rel(sum, scale * ((k + 1) as f64).powf(order.beta())));
    }
    worst
}

/// Max relative gap between the backward weight evaluated from its own
/// closed form and the predictor table read at the mirrored lag. Checked at
/// `j = N-k`, the midpoint, and `j = N` for every `k < N`, which touches
/// every lag.
pub fn mirror_defect(table: &WeightTable<f64>) -> f64 {
    let n = table.len();
    let order = table.order();
    let beta = order.beta();
    let scale = order.rectangle_scale(table.h());
    let closed = |j: usize, k: usize| {
        let hi = j as f64 - (n as f64 - k as f64 - 1.0);
        let lo = j as f64 - (n as f64 - k as f64);
        scale * (hi.powf(beta) - if lo > 0.0 { lo.powf(beta) } else { 0.0 })
    };
    let mut worst: f64 = 0.0;
    for k in 0..n {
        for j in [n - k, n - k / 2, n] {
            let mirrored = table.lag(j + k + 1 - n);
            worst = worst.max(rel(mirrored, closed(j, k)));
        }
    }
    worst
}

/// Max relative gap between the β = 1 corrector weights and the composite
/// trapezoid weights `h/2, h, ..., h, h/2` for `k = 1..=n`.
pub fn trapezoid_defect(h: f64, n: usize) -> Result<f64> {
    let order = FracOrder::new(1.0)?;
    let table = WeightTable::corrector(order, h, n);
    let mut worst: f64 = 0.0;
    worst = worst.max(rel(table.corrector_tail(), h / 2.0));
    for k in 1..=n {
        worst = worst.max(rel(table.corrector_head(k), h / 2.0));
    }
    for m in 1..n {
        worst = worst.max(rel(table.lag(m), h));
    }
    Ok(worst)
}

/// Max relative gap between the β = 1 predictor on `z' = rate·z` and a
/// plain explicit Euler loop, over every grid point.
pub fn euler_defect(rate: f64, z0: f64, horizon: f64, steps: usize) -> Result<f64> {
    let cfg = SolverConfig::full(1.0, horizon, steps, Method::Predictor)?;
    let tr = solve(
        &LinearSystem::new(1)?,
        &ParamVector::new(vec![rate]),
        &[z0],
        &cfg,
    )?;
    let h = cfg.grid().step();
    let mut z = z0;
    let mut worst: f64 = 0.0;
    for (k, s) in tr.states().enumerate() {
        if k > 0 {
            z += h * rate * z;
        }
        worst = worst.max(rel(s[0], z));
    }
    Ok(worst)
}

/// Number of state entries that differ between a `K = N` windowed solve and
/// the full-history solve.
pub fn full_window_mismatches(beta: f64, steps: usize, method: Method) -> Result<usize> {
    let spec = LotkaVolterra::new();
    let theta = ParamVector::new(LotkaVolterra::TRUE_PARAMS.to_vec());
    let z0 = [2.0, 1.5];
    let order = FracOrder::new(beta)?;
    let grid = TimeGrid::new(2.0, steps)?;
    let full = solve(
        &spec,
        &theta,
        &z0,
        &SolverConfig::new(order, grid.clone(), method, None)?,
    )?;
    let win = solve(
        &spec,
        &theta,
        &z0,
        &SolverConfig::new(order, grid, method, Some(steps))?,
    )?;
    Ok(full
        .states()
        .zip(win.states())
        .flat_map(|(a, b)| a.iter().zip(b))
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count())
}

/// Errors of the h-weighted adjoint gradient of `L = z(T)` for
/// `z' = rate·z` against `T e^{rate T}`, one per step size.
pub fn unit_order_adjoint_errors(rate: f64, horizon: f64, steps: &[f64]) -> Result<Vec<f64>> {
    let spec = LinearSystem::new(1)?;
    let theta = ParamVector::new(vec![rate]);
    let loss = TerminalLinear::new(vec![1.0])?;
    let exact = horizon * (rate * horizon).exp();
    steps
        .iter()
        .map(|&h| {
            let cfg = SolverConfig::new(
                FracOrder::new(1.0)?,
                TimeGrid::from_step(horizon, h)?,
                Method::Predictor,
                None,
            )?;
            let tr = solve(&spec, &theta, &[1.0], &cfg)?;
            let run = solve_adjoint(&tr, &spec, &theta, &loss, AccumulationMode::HWeighted)?;
            Ok((run.grad[0] - exact).abs())
        })
        .collect()
}

/// A seeded gradient test case.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCase {
    pub theta: ParamVector<f64>,
    pub z0: Vec<f64>,
    pub target: Vec<f64>,
}

/// Predator-prey case: θ within ±30% of the reference parameters, initial
/// state in `[0.5, 5]²`, target the reference trajectory's end point.
pub fn lotka_volterra_case(rng: &mut ChaCha8Rng, cfg: &SolverConfig<f64>) -> Result<GradientCase> {
    let spec = LotkaVolterra::new();
    let truth = ParamVector::new(LotkaVolterra::TRUE_PARAMS.to_vec());
    let theta = ParamVector::new(truth.iter().map(|&v| v * rng.gen_range(0.7..1.3)).collect());
    let z0: Vec<f64> = (0..2).map(|_| rng.gen_range(0.5..5.0)).collect();
    let target = solve(&spec, &truth, &z0, cfg)?.final_state().to_vec();
    Ok(GradientCase { theta, z0, target })
}

/// Two-dimensional linear case with a mildly damped random matrix.
pub fn linear_case(rng: &mut ChaCha8Rng) -> GradientCase {
    GradientCase {
        theta: ParamVector::new((0..4).map(|_| rng.gen_range(-1.0..0.5)).collect()),
        z0: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        target: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative 2-norm gap between the unrolled gradient and central
/// finite differences (step `1e-5`) over `instances` seeded cases.
pub fn direct_vs_fd(system: &str, beta: f64, instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (spec, cfg): (Box<dyn Dynamics<f64>>, _) = match system {
        "linear" => (
            Box::new(LinearSystem::new(2)?),
            SolverConfig::full(beta, 1.0, 100, Method::Predictor)?,
        ),
        "lotka-volterra" => (
            Box::new(LotkaVolterra::new()),
            SolverConfig::full(beta, 2.0, 200, Method::Predictor)?,
        ),
        other => return Err(FdeError::InvalidConfig(format!("unknown system '{other}'"))),
    };
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let case = if system == "linear" {
            linear_case(&mut rng)
        } else {
            lotka_volterra_case(&mut rng, &cfg)?
        };
        let loss = TerminalMse::new(case.target.clone())?;
        let tr = solve(spec.as_ref(), &case.theta, &case.z0, &cfg)?;
        let exact = grad_via_unrolled(&tr, spec.as_ref(), &case.theta, &loss)?.grad;
        let fd = finite_diff_grad(spec.as_ref(), &case.theta, &case.z0, &cfg, &loss, 1e-5)?;
        let diff: Vec<f64> = exact.iter().zip(fd.iter()).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&exact).max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Agreement between adjoint and unrolled gradients on seeded predator-prey
/// cases at `h = 0.01`, `T = 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub min_cosine: f64,
    pub min_inner: f64,
}

pub fn adjoint_vs_direct(beta: f64, instances: usize, seed: u64) -> Result<Agreement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LotkaVolterra::new();
    let cfg = SolverConfig::full(beta, 2.0, 200, Method::Predictor)?;
    let mut out = Agreement {
        min_cosine: f64::INFINITY,
        min_inner: f64::INFINITY,
    };
    for _ in 0..instances {
        let case = lotka_volterra_case(&mut rng, &cfg)?;
        let loss = TerminalMse::new(case.target.clone())?;
        let tr = solve(&spec, &case.theta, &case.z0, &cfg)?;
        let adj = solve_adjoint(&tr, &spec, &case.theta, &loss, AccumulationMode::UnitWeight)?.grad;
        let exact = grad_via_unrolled(&tr, &spec, &case.theta, &loss)?.grad;
        let inner = dot(&adj, &exact);
        out.min_inner = out.min_inner.min(inner);
        out.min_cosine = out.min_cosine.min(inner / (norm(&adj) * norm(&exact)));
    }
    Ok(out)
}

/// Peak retained slots of the forward-plus-sweep pipeline for each grid
/// size, as `(adjoint, direct)` pairs.
pub fn pipeline_peaks(footprint: usize, steps: &[usize]) -> Result<Vec<(u64, u64)>> {
    let spec = LotkaVolterra::new().with_footprint(footprint);
    let theta = ParamVector::new(LotkaVolterra::TRUE_PARAMS.to_vec());
    let z0 = [2.0, 1.5];
    steps
        .iter()
        .map(|&n| {
            let cfg = SolverConfig::full(0.5, 2.0, n, Method::Predictor)?;
            let tr = solve(&spec, &theta, &z0, &cfg)?;
            let loss = TerminalMse::new(vec![1.0, 1.0])?;
            let adj = solve_adjoint(&tr, &spec, &theta, &loss, AccumulationMode::UnitWeight)?;
            let dir = grad_via_unrolled(&tr, &spec, &theta, &loss)?;
            Ok((
                adj.pipeline_counters(&tr).peak_retained_slots,
                dir.pipeline_counters(&tr).peak_retained_slots,
            ))
        })
        .collect()
}

fn identity_table(beta: f64, corrupt: bool) -> Result<WeightTable<f64>> {
    let order = FracOrder::new(beta)?;
    let h = 0.01;
    let table = WeightTable::predictor(order, h, IDENTITY_MAX_K);
    if !corrupt {
        return Ok(table);
    }
    let mut offsets = table.offsets().to_vec();
    offsets[6] *= 1.0 + 1e-6;
    Ok(WeightTable::from_offsets(
        WeightKind::PredictorMu,
        order,
        h,
        offsets,
    ))
}

fn coeffs_suite(opts: CheckOptions) -> Result<Vec<CheckRow>> {
    let tol = Bound::AtMost { limit: 1e-12 };
    let mut rows = Vec::new();
    for beta in IDENTITY_ORDERS {
        let table = identity_table(beta, opts.corrupt_weights)?;
        rows.push(CheckRow::new(
            Suite::Coeffs,
            format!("predictor_telescoping beta={beta}"),
            predictor_telescoping_defect(&table),
            tol,
        ));
        rows.push(CheckRow::new(
            Suite::Coeffs,
            format!("backward_telescoping beta={beta}"),
            backward_telescoping_defect(&table),
            tol,
        ));
        rows.push(CheckRow::new(
            Suite::Coeffs,
            format!("mirror beta={beta}"),
            mirror_defect(&table),
            tol,
        ));
    }
    Ok(rows)
}

fn vjp_suite() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for dim in [1, 3] {
        let r = vjp_dot_test(&LinearSystem::new(dim)?, 100, 42)?;
        rows.push(CheckRow::new(
            Suite::Vjp,
            format!("dot_test linear d={dim}"),
            r.max_defect(),
            Bound::AtMost { limit: 1e-8 },
        ));
    }
    let r = vjp_dot_test(&LotkaVolterra::new(), 100, 42)?;
    rows.push(CheckRow::new(
        Suite::Vjp,
        "dot_test lotka-volterra",
        r.max_defect(),
        Bound::AtMost { limit: 1e-6 },
    ));
    Ok(rows)
}

fn convergence_suite() -> Result<Vec<CheckRow>> {
    let s = Suite::Convergence;
    let mut rows = vec![
        CheckRow::new(
            s,
            "euler_loop beta=1",
            euler_defect(-1.0, 1.0, 1.0, 1000)?,
            Bound::AtMost { limit: 1e-12 },
        ),
        CheckRow::new(
            s,
            "trapezoid beta=1",
            trapezoid_defect(0.1, 1000)?,
            Bound::AtMost { limit: 1e-14 },
        ),
    ];
    for method in [Method::Predictor, Method::Pece] {
        rows.push(CheckRow::new(
            s,
            format!("full_window_identical {method:?}").to_lowercase(),
            full_window_mismatches(0.5, 200, method)? as f64,
            Bound::AtMost { limit: 0.0 },
        ));
    }
    rows.push(CheckRow::new(
        s,
        "mittag_leffler beta=0.5 x=-1",
        (mittag_leffler(0.5, -1.0)? - 0.4275835762).abs(),
        Bound::AtMost { limit: 1e-10 },
    ));
    let euler = empirical_order(&OrderStudy {
        rate: -1.0,
        z0: 1.0,
        beta: 1.0,
        horizon: 1.0,
        method: Method::Predictor,
        h0: 0.1,
        levels: 5,
        window: None,
    })?;
    rows.push(CheckRow::new(
        s,
        "predictor_order_min beta=1",
        euler.min_order(),
        Bound::AtLeast { limit: 0.9 },
    ));
    rows.push(CheckRow::new(
        s,
        "predictor_order_max beta=1",
        euler.max_order(),
        Bound::AtMost { limit: 1.1 },
    ));
    let study = OrderStudy {
        rate: -1.0,
        z0: 1.0,
        beta: 0.5,
        horizon: 1.0,
        method: Method::Pece,
        h0: 0.1,
        levels: 5,
        window: None,
    };
    let pece = empirical_order(&study)?;
    rows.push(CheckRow::new(
        s,
        "pece_errors_decrease beta=0.5",
        if pece.errors_strictly_decrease() {
            1.0
        } else {
            0.0
        },
        Bound::AtLeast { limit: 1.0 },
    ));
    rows.push(CheckRow::new(
        s,
        "pece_order_min beta=0.5",
        pece.min_order(),
        Bound::AtLeast { limit: 0.8 },
    ));
    let windowed = empirical_order(&OrderStudy {
        window: Some(WindowWidth::WholeGrid),
        method: Method::Predictor,
        ..study.clone()
    })?;
    let full = empirical_order(&OrderStudy {
        method: Method::Predictor,
        ..study
    })?;
    rows.push(CheckRow::new(
        s,
        "whole_grid_window_table beta=0.5",
        if windowed == full { 0.0 } else { 1.0 },
        Bound::AtMost { limit: 0.0 },
    ));
    Ok(rows)
}

fn adjoint_suite() -> Result<Vec<CheckRow>> {
    let s = Suite::Adjoint;
    let mut rows = Vec::new();
    let errs = unit_order_adjoint_errors(-1.0, 1.0, &[0.1, 0.05, 0.025, 0.0125])?;
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    for (i, r) in ratios.iter().enumerate() {
        rows.push(CheckRow::new(
            s,
            format!("unit_order_error_ratio level={}", i + 1),
            *r,
            Bound::Within {
                low: 1.6,
                high: 2.4,
            },
        ));
    }
    for system in ["linear", "lotka-volterra"] {
        for beta in [0.5, 0.9, 1.0] {
            rows.push(CheckRow::new(
                s,
                format!("direct_vs_fd {system} beta={beta}"),
                direct_vs_fd(system, beta, 5, 7)?,
                Bound::AtMost { limit: 1e-4 },
            ));
        }
    }
    for beta in [0.5, 0.9] {
        let a = adjoint_vs_direct(beta, 5, 11)?;
        rows.push(CheckRow::new(
            s,
            format!("adjoint_direct_cosine beta={beta}"),
            a.min_cosine,
            Bound::AtLeast { limit: 0.99 },
        ));
        rows.push(CheckRow::new(
            s,
            format!("adjoint_direct_inner beta={beta}"),
            a.min_inner,
            Bound::AtLeast {
                limit: f64::MIN_POSITIVE,
            },
        ));
    }
    let footprint = 16;
    let sizes = [100, 200, 400];
    let peaks = pipeline_peaks(footprint, &sizes)?;
    let dn = (sizes[2] - sizes[1]) as f64;
    let adjoint_slope = (peaks[2].0 - peaks[1].0) as f64 / dn;
    let direct_slope = (peaks[2].1 - peaks[1].1) as f64 / dn;
    rows.push(CheckRow::new(
        s,
        format!("slope_gap_minus_footprint P={footprint}"),
        (direct_slope - adjoint_slope - footprint as f64).abs(),
        Bound::AtMost { limit: 0.0 },
    ));
    let ratios: Vec<f64> = peaks.iter().map(|&(a, d)| a as f64 / d as f64).collect();
    rows.push(CheckRow::new(
        s,
        "memory_ratio_decreasing",
        if ratios.windows(2).all(|w| w[1] < w[0]) {
            1.0
        } else {
            0.0
        },
        Bound::AtLeast { limit: 1.0 },
    ));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_hold_on_clean_tables() {
        for beta in IDENTITY_ORDERS {
            let t = identity_table(beta, false).unwrap();
            assert!(predictor_telescoping_defect(&t) <= 1e-12, "beta {beta}");
            assert!(backward_telescoping_defect(&t) <= 1e-12, "beta {beta}");
            assert!(mirror_defect(&t) <= 1e-12, "beta {beta}");
        }
    }

    #[test]
    fn corrupted_table_fails_coeffs() {
        let rows = run_suite(
            Suite::Coeffs,
            CheckOptions {
                corrupt_weights: true,
            },
        )
        .unwrap();
        assert!(rows.iter().any(|r| !r.pass));
        let clean = run_suite(Suite::Coeffs, CheckOptions::default()).unwrap();
        assert!(clean.iter().all(|r| r.pass));
    }

    #[test]
    fn coeffs_suite_only_has_identities() {
        let rows = run_suite(Suite::Coeffs, CheckOptions::default()).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.suite == "coeffs"));
    }

    #[test]
    fn bounds() {
        assert!(Bound::AtMost { limit: 1.0 }.holds(1.0));
        assert!(!Bound::AtLeast { limit: 1.0 }.holds(0.5));
        assert!(Bound::Within {
            low: 1.6,
            high: 2.4
        }
        .holds(2.0));
        assert!(!Bound::Within {
            low: 1.6,
            high: 2.4
        }
        .holds(f64::NAN));
    }

    #[test]
    fn euler_and_trapezoid() {
        assert!(euler_defect(-1.0, 1.0, 1.0, 1000).unwrap() <= 1e-12);
        assert!(trapezoid_defect(0.1, 1000).unwrap() <= 1e-14);
    }

    #[test]
    fn table_renders_one_line_per_row() {
        let rows = vec![
            CheckRow::new(Suite::Vjp, "a", 1e-9, Bound::AtMost { limit: 1e-6 }),
            CheckRow::new(Suite::Vjp, "b", 2.0, Bound::AtMost { limit: 1e-6 }),
        ];
        let text = render_table(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("PASS") && lines[1].starts_with("FAIL"));
    }
}
