//! Independent oracles: Mittag-Leffler reference values, finite-difference
//! gradients, VJP dot tests and observed convergence orders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{check_params, Dynamics, LinearSystem, ParamVector, TerminalLoss};
use crate::error::{FdeError, Result};
use crate::format::{sig17, sig17_vec};
use crate::forward::{solve, Method, SolverConfig};
use crate::quadrature::{gamma, FracOrder, TimeGrid};
use crate::scalar::Scalar;

/// Largest |x| the Mittag-Leffler series is evaluated at.
pub const ML_ENVELOPE: f64 = 30.0;
/// Largest tolerated ratio `Σ|term| / |sum|` before cancellation is deemed
/// to have eaten the result.
const ML_MAX_CANCELLATION: f64 = 1e3;
const ML_MAX_TERMS: usize = 20_000;

/// `E_β(x) = Σ_{n≥0} xⁿ / Γ(nβ + 1)` by direct summation.
///
/// The series stops once three consecutive terms fall below
/// `1e-16 |partial sum|`. Arguments outside `|x| <= 30`, or whose series
/// cancels too heavily to be trusted, are refused with a range error. At
/// `β = 1` a negative argument is evaluated as `1 / E_1(-x)`, which keeps all
/// terms positive.
pub fn mittag_leffler(beta: f64, x: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(FdeError::InvalidOrder(beta));
    }
    if !x.is_finite() || x.abs() > ML_ENVELOPE {
        return Err(FdeError::RangeError(format!(
            "|x| = {} exceeds the series envelope {ML_ENVELOPE}",
            x.abs()
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if beta == 1.0 && x < 0.0 {
        return Ok(1.0 / ml_series(beta, -x)?);
    }
    ml_series(beta, x)
}

fn ml_series(beta: f64, x: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut magnitude = 0.0;
    let mut small_run = 0;
    let ln_abs_x = x.abs().ln();
    for n in 0..ML_MAX_TERMS {
        let arg = n as f64 * beta + 1.0;
        let abs_term = if arg < 170.0 {
            x.abs().powi(n as i32) / gamma(arg)?
        } else {
            (n as f64 * ln_abs_x - ln_gamma(arg)).exp()
        };
        let term = if x < 0.0 && n % 2 == 1 {
            -abs_term
        } else {
            abs_term
        };
        sum += term;
        magnitude += abs_term;
        if !sum.is_finite() || !magnitude.is_finite() {
            return Err(FdeError::RangeError(format!(
                "series overflows at x = {x}, beta = {beta}"
            )));
        }
        if abs_term < 1e-16 * sum.abs() {
            small_run += 1;
            if small_run == 3 {
                if magnitude > ML_MAX_CANCELLATION * sum.abs() {
                    return Err(FdeError::RangeError(format!(
                        "series cancellation too severe at x = {x}, beta = {beta}"
                    )));
                }
                return Ok(sum);
            }
        } else {
            small_run = 0;
        }
    }
    Err(FdeError::RangeError(format!(
        "series did not settle within {ML_MAX_TERMS} terms at x = {x}"
    )))
}

/// Stirling series for ln Γ, adequate for the large arguments the
/// Mittag-Leffler tail needs.
fn ln_gamma(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// Central-difference gradient of `θ ↦ L(z_N(θ))`, one forward solve per
/// perturbed parameter. The per-component solves run in parallel.
pub fn finite_diff_grad<T, D, L>(
    spec: &D,
    theta: &ParamVector<T>,
    z0: &[T],
    cfg: &SolverConfig<T>,
    loss: &L,
    step: T,
) -> Result<ParamVector<T>>
where
    T: Scalar,
    D: Dynamics<T> + ?Sized,
    L: TerminalLoss<T> + ?Sized,
{
    check_params(spec, theta)?;
    if step == T::zero() || !step.is_finite() {
        return Err(FdeError::InvalidConfig(format!(
            "finite-difference step must be nonzero and finite, got {step}"
        )));
    }
    let loss_at = |i: usize, delta: T| -> Result<T> {
        let mut shifted = theta.clone();
        shifted[i] += delta;
        let tr = solve(spec, &shifted, z0, cfg)?;
        let l = loss.eval(tr.final_state());
        if !l.is_finite() {
            return Err(FdeError::NonFiniteLoss(format!(
                "loss at perturbed component {i} is {l}"
            )));
        }
        Ok(l)
    };
    let grad = (0..theta.len())
        .into_par_iter()
        .map(|i| Ok((loss_at(i, step)? - loss_at(i, -step)?) / (step + step)))
        .collect::<Result<Vec<T>>>()?;
    Ok(ParamVector::new(grad))
}

/// Sampling box for [`vjp_dot_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotTestRanges {
    pub state: f64,
    pub params: f64,
    pub time: f64,
}

impl Default for DotTestRanges {
    fn default() -> Self {
        Self {
            state: 10.0,
            params: 2.0,
            time: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DotTestReport {
    pub samples: usize,
    #[serde(serialize_with = "sig17")]
    pub max_state_defect: f64,
    #[serde(serialize_with = "sig17")]
    pub max_params_defect: f64,
}

impl DotTestReport {
    pub fn max_defect(&self) -> f64 {
        self.max_state_defect.max(self.max_params_defect)
    }
}

const DOT_TEST_EPS: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn abs_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum()
}

/// Rescales to unit 2-norm, so the difference quotient sees a step of
/// exactly `ε` whatever was drawn.
fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Relative mismatch between two evaluations of the same inner product,
/// measured against the magnitude of the summed terms rather than the sum,
/// so cancellation in ⟨·,·⟩ does not inflate it.
fn defect(fd: f64, analytic: f64, scale: f64) -> f64 {
    let num = (fd - analytic).abs();
    if num == 0.0 {
        0.0
    } else {
        num / scale.max(f64::MIN_POSITIVE)
    }
}

/// Dot test of both VJPs against central differences of `eval`:
/// `⟨λ, (f(z+εv) - f(z-εv)) / 2ε⟩` against `⟨vjp_state(λ), v⟩`, and the
/// same with θ perturbed. Returns the largest relative defect seen.
pub fn vjp_dot_test<D: Dynamics<f64> + ?Sized>(
    spec: &D,
    samples: usize,
    seed: u64,
) -> Result<DotTestReport> {
    vjp_dot_test_in(spec, samples, seed, DotTestRanges::default())
}

pub fn vjp_dot_test_in<D: Dynamics<f64> + ?Sized>(
    spec: &D,
    samples: usize,
    seed: u64,
    ranges: DotTestRanges,
) -> Result<DotTestReport> {
    if samples == 0 {
        return Err(FdeError::InvalidConfig(
            "dot test needs samples >= 1".into(),
        ));
    }
    let d = spec.dim();
    let p = spec.param_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform =
        |n: usize, half: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-half..=half)).collect() };
    let mut report = DotTestReport {
        samples,
        max_state_defect: 0.0,
        max_params_defect: 0.0,
    };
    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
    let mut vs = vec![0.0; d];
    let mut vp = vec![0.0; p];
    for _ in 0..samples {
        let t = uniform(1, ranges.time)[0].abs();
        let z = uniform(d, ranges.state);
        let theta = uniform(p, ranges.params);
        let lambda = uniform(d, 1.0);
        let v_state = unit(uniform(d, 1.0));
        let v_params = unit(uniform(p, 1.0));

        let zp: Vec<f64> = z
            .iter()
            .zip(&v_state)
            .map(|(a, b)| a + DOT_TEST_EPS * b)
            .collect();
        let zm: Vec<f64> = z
            .iter()
            .zip(&v_state)
            .map(|(a, b)| a - DOT_TEST_EPS * b)
            .collect();
        spec.eval(t, &zp, &theta, &mut fp);
        spec.eval(t, &zm, &theta, &mut fm);
        let jv: Vec<f64> = fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * DOT_TEST_EPS))
            .collect();
        spec.vjp_state(t, &z, &theta, &lambda, &mut vs);
        let scale = abs_dot(&lambda, &jv).max(abs_dot(&vs, &v_state));
        report.max_state_defect =
            report
                .max_state_defect
                .max(defect(dot(&lambda, &jv), dot(&vs, &v_state), scale));

        let tp: Vec<f64> = theta
            .iter()
            .zip(&v_params)
            .map(|(a, b)| a + DOT_TEST_EPS * b)
            .collect();
        let tm: Vec<f64> = theta
            .iter()
            .zip(&v_params)
            .map(|(a, b)| a - DOT_TEST_EPS * b)
            .collect();
        spec.eval(t, &z, &tp, &mut fp);
        spec.eval(t, &z, &tm, &mut fm);
        let jv: Vec<f64> = fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * DOT_TEST_EPS))
            .collect();
        spec.vjp_params(t, &z, &theta, &lambda, &mut vp);
        let scale = abs_dot(&lambda, &jv).max(abs_dot(&vp, &v_params));
        report.max_params_defect =
            report
                .max_params_defect
                .max(defect(dot(&lambda, &jv), dot(&vp, &v_params), scale));
    }
    Ok(report)
}

/// History width used at every refinement level of an order study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowWidth {
    /// Window spanning the whole grid at each level (`K = N`).
    WholeGrid,
    Lags(usize),
}

/// Refinement study for `D^β z = rate · z`, whose exact solution is
/// `z0 · E_β(rate · t^β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    pub rate: f64,
    pub z0: f64,
    pub beta: f64,
    pub horizon: f64,
    pub method: Method,
    pub h0: f64,
    pub levels: usize,
    pub window: Option<WindowWidth>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    #[serde(serialize_with = "sig17_vec")]
    pub steps: Vec<f64>,
    #[serde(serialize_with = "sig17_vec")]
    pub errors: Vec<f64>,
    #[serde(serialize_with = "sig17_vec")]
    pub orders: Vec<f64>,
}

impl ConvergenceTable {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_order(&self) -> f64 {
        self.orders
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn errors_strictly_decrease(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }
}

pub fn empirical_order(study: &OrderStudy) -> Result<ConvergenceTable> {
    if study.levels < 3 {
        return Err(FdeError::InvalidConfig(
            "an order study needs at least three levels".into(),
        ));
    }
    let exact = study.z0 * mittag_leffler(study.beta, study.rate * study.horizon.powf(study.beta))?;
    let system = LinearSystem::new(1)?;
    let theta = ParamVector::new(vec![study.rate]);
    let order = FracOrder::new(study.beta)?;
    let mut steps = Vec::with_capacity(study.levels);
    let mut errors = Vec::with_capacity(study.levels);
    let mut h = study.h0;
    for _ in 0..study.levels {
        let grid = TimeGrid::from_step(study.horizon, h)?;
        let window = match study.window {
            None => None,
            Some(WindowWidth::WholeGrid) => Some(grid.steps()),
            Some(WindowWidth::Lags(k)) => Some(k.min(grid.steps())),
        };
        steps.push(grid.step());
        let cfg = SolverConfig::new(order, grid, study.method, window)?;
        let tr = solve(&system, &theta, &[study.z0], &cfg)?;
        errors.push((tr.final_state()[0] - exact).abs());
        h /= 2.0;
    }
    let orders = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(ConvergenceTable {
        steps,
        errors,
        orders,
    })
}
